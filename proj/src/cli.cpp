#include "convformer/cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "convformer/gradcheck.hpp"
#include "convformer/io.hpp"

namespace convformer {

namespace {

namespace fs = std::filesystem;

struct Common {
    std::uint64_t seed = 7;
    std::string config;
    std::string out;
};

void add_common(CLI::App& sub, Common& c, const std::string& out_help) {
    sub.add_option("--seed", c.seed, "random seed")->capture_default_str();
    sub.add_option("--config", c.config, "key = value config file");
    sub.add_option("--out", c.out, out_help);
}

TrainConfig load_config(const Common& c) {
    TrainConfig cfg = c.config.empty() ? TrainConfig{} : parse_config(read_file(c.config));
    cfg.validate();
    return cfg;
}

std::string numbered(const std::string& stem, std::size_t k, const std::string& ext) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "_%04zu", k);
    return stem + buf + ext;
}

std::string one_line(std::string s) {
    for (auto& ch : s)
        if (ch == '\n' || ch == '\r') ch = ' ';
    return s;
}

int cmd_gradcheck(const Common& c, std::ostream& out, std::ostream& err) {
    const auto reports = run_gradcheck_suite(c.seed);
    std::size_t failed = 0;
    for (const auto& r : reports) {
        write_report_text(out, r);
        for (const auto& e : r.entries) failed += !e.passed;
    }
    if (!c.out.empty()) {
        std::ostringstream csv;
        write_reports_csv(csv, reports);
        write_file_atomic(c.out, csv.str());
    }
    if (failed) {
        err << "error: gradcheck: " << failed << " tensor(s) exceed tolerance\n";
        return 1;
    }
    return 0;
}

int cmd_train(const Common& c, std::size_t epochs, std::size_t max_steps, std::ostream& out) {
    TrainConfig cfg = load_config(c);
    if (epochs) cfg.epochs = epochs;
    if (max_steps) cfg.max_steps = max_steps;
    cfg.validate();
    const fs::path dir = c.out.empty() ? fs::path("run") : fs::path(c.out);
    fs::create_directories(dir);
    write_file_atomic(dir / "config.txt", serialize_config(cfg));

    const TrainResult r = run_training(cfg, c.seed, [&](std::size_t epoch, const SegModel& m) {
        save_checkpoint(m, dir / numbered("epoch", epoch, ".cfrm"));
    });
    std::ostringstream csv;
    write_history_csv(csv, r.history);
    write_file_atomic(dir / "history.csv", csv.str());
    save_checkpoint(r.model, dir / "model.cfrm");

    for (const auto& e : r.history)
        out << "epoch " << e.epoch << " steps " << e.steps << " loss " << format_double(e.loss) << " dice "
            << format_double(e.eval.mean_dice) << " hd " << format_double(e.eval.mean_hd) << '\n';
    if (r.diverged) throw NumericError("training diverged (" + r.message + "); last good model kept in " +
                                       (dir / "model.cfrm").string());
    return 0;
}

int cmd_eval(const Common& c, const std::string& ckpt, std::ostream& out) {
    TrainConfig cfg = load_config(c);
    SegModel model = load_checkpoint(ckpt);
    cfg.model = model.config;
    cfg.data.num_classes = model.config.num_classes;
    cfg.validate();
    const EvalResult r = evaluate(model, make_datasets(cfg, c.seed).heldout);
    std::ostringstream csv;
    write_eval_csv(csv, r);
    out << csv.str();
    if (!c.out.empty()) write_file_atomic(c.out, csv.str());
    return 0;
}

int cmd_ablate(const Common& c, const std::vector<double>& alphas, std::ostream& out) {
    const TrainConfig cfg = load_config(c);
    std::ostringstream csv;
    write_ablation_csv(csv, ablate_alpha(cfg, alphas, c.seed));
    out << csv.str();
    if (!c.out.empty()) write_file_atomic(c.out, csv.str());
    return 0;
}

int cmd_visualize(const Common& c, const std::string& ckpt, std::size_t layer, std::vector<std::size_t> query,
                  std::ostream& out) {
    TrainConfig cfg = load_config(c);
    SegModel model = load_checkpoint(ckpt);
    if (layer == 0 || layer > model.config.layers)
        throw std::out_of_range("--layer " + std::to_string(layer) + " outside 1.." +
                                std::to_string(model.config.layers));
    cfg.model = model.config;
    cfg.data.num_classes = model.config.num_classes;
    cfg.heldout_samples = 1;
    cfg.validate();
    const auto sample = make_datasets(cfg, c.seed).heldout.front();
    Tensor x({1, 1, model.config.height, model.config.width}, sample.image.values());
    set_training(model, false);
    const ModelOutput fwd = forward(model, x, nullptr, true);
    const AttentionField& attn = fwd.attention[layer - 1].front();
    if (query.empty()) query = {attn.height / 2, attn.width / 2};

    const fs::path dir = c.out.empty() ? fs::path(".") : fs::path(c.out);
    fs::create_directories(dir);
    for (std::size_t g = 0; g < attn.heads(); ++g) {
        const GrayImage img = export_attention(attn, g, query[0], query[1]);
        const fs::path path = dir / ("attn_layer" + std::to_string(layer) + "_head" + std::to_string(g + 1) + ".pgm");
        write_file_atomic(path, encode_pgm(img, kAttentionPgmComment));
        out << path.string() << '\n';
    }
    return 0;
}

int cmd_gen_data(const Common& c, std::size_t count, std::ostream& out) {
    const TrainConfig cfg = load_config(c);
    const std::size_t n = count ? count : cfg.train_samples;
    const auto h = cfg.model.height, w = cfg.model.width;
    const auto samples = gen_dataset(n, h, w, cfg.data, c.seed);
    const fs::path dir = c.out.empty() ? fs::path("data") : fs::path(c.out);
    fs::create_directories(dir);
    std::ostringstream index;
    index << "index,seed,foreground_pixels\n";
    for (std::size_t k = 0; k < samples.size(); ++k) {
        const auto& s = samples[k];
        write_file_atomic(dir / numbered("image", k, ".pgm"), encode_pgm(image_to_gray(s.image), "intensity * 255"));
        write_file_atomic(dir / numbered("mask", k, ".pgm"),
                          encode_pgm(mask_to_gray(s.mask, h, w, cfg.data.num_classes), "class * 255 / (classes - 1)"));
        const auto fg = std::count_if(s.mask.begin(), s.mask.end(), [](int v) { return v != 0; });
        index << k << ',' << s.seed << ',' << fg << '\n';
    }
    write_file_atomic(dir / "index.csv", index.str());
    out << "wrote " << samples.size() << " samples to " << dir.string() << '\n';
    return 0;
}

const char* error_kind(const std::exception& e) {
    if (dynamic_cast<const ConfigParseError*>(&e) || dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
    if (dynamic_cast<const NumericError*>(&e)) return "numeric";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const std::out_of_range*>(&e)) return "range";
    if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return "io";
    return "runtime";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"ConvFormer toy segmentation toolkit", "convformer"};
    app.require_subcommand(1);

    Common common;
    std::string ckpt;
    std::size_t layer = 0, epochs = 0, max_steps = 0, count = 0;
    std::vector<std::size_t> query;
    std::vector<double> alphas = kDefaultAlphas;

    auto* gc = app.add_subcommand("gradcheck", "check every backward pass against finite differences");
    add_common(*gc, common, "write the per-tensor report as CSV");

    auto* tr = app.add_subcommand("train", "train on synthetic blobs");
    add_common(*tr, common, "output directory (default: run)");
    tr->add_option("--epochs", epochs, "override train.epochs");
    tr->add_option("--max-steps", max_steps, "override train.max_steps");

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on the held-out split");
    add_common(*ev, common, "write metrics CSV here as well as to stdout");
    ev->add_option("--ckpt", ckpt, "checkpoint file")->required();

    auto* ab = app.add_subcommand("ablate-alpha", "train one model per alpha");
    add_common(*ab, common, "write the CSV here as well as to stdout");
    ab->add_option("--alphas", alphas, "alpha grid")->capture_default_str();

    auto* va = app.add_subcommand("visualize-attn", "export one attention map per head as PGM");
    add_common(*va, common, "output directory (default: .)");
    va->add_option("--ckpt", ckpt, "checkpoint file")->required();
    va->add_option("--layer", layer, "layer, 1-based")->required();
    va->add_option("--query", query, "query pixel i j on the token grid (default: centre)")->expected(2);

    auto* gd = app.add_subcommand("gen-data", "write synthetic samples as PGM");
    add_common(*gd, common, "output directory (default: data)");
    gd->add_option("--count", count, "number of samples (default: train.train_samples)");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
        err << sub->help();
        err << "error: usage: " << one_line(e.what()) << '\n';
        return 2;
    }

    try {
        if (gc->parsed()) return cmd_gradcheck(common, out, err);
        if (tr->parsed()) return cmd_train(common, epochs, max_steps, out);
        if (ev->parsed()) return cmd_eval(common, ckpt, out);
        if (ab->parsed()) return cmd_ablate(common, alphas, out);
        if (va->parsed()) return cmd_visualize(common, ckpt, layer, query, out);
        if (gd->parsed()) return cmd_gen_data(common, count, out);
    } catch (const std::exception& e) {
        err << "error: " << error_kind(e) << ": " << one_line(e.what()) << '\n';
        return 1;
    }
    return 2;
}

}  // namespace convformer
