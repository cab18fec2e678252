// One check per acceptance criterion. `acceptance N` runs criterion N and
// prints a single PASS/FAIL line; without an argument all ten run in order.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

#include "convformer/cli.hpp"
#include "convformer/gradcheck.hpp"
#include "convformer/io.hpp"
#include "convformer/metrics.hpp"
#include "convformer/trainer.hpp"
#include "csa_oracle.hpp"

using namespace convformer;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

Tensor random_tensor(Shape shape, Rng& rng) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("convformer_acceptance_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

int cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    if (code != 0) std::cerr << err.str();
    return code;
}

TrainConfig small_train_config(std::size_t side, std::size_t cm) {
    TrainConfig c;
    c.model.embed_channels = c.model.query_channels = cm;
    c.model.hidden_channels = 4 * cm;
    c.model.patch_size = 4;
    c.model.layers = 2;
    c.model.height = c.model.width = side;
    c.data.min_radius = static_cast<double>(side) / 4.0;
    c.data.max_radius = static_cast<double>(side) * 7.0 / 16.0;
    return c;
}

Outcome gradient_suite() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto reports = run_gradcheck_suite(7);
    const double secs = seconds_since(t0);
    bool ok = secs <= 300.0;
    std::string worst;
    for (const auto& r : reports) {
        ok = ok && r.passed();
        worst += " " + r.op + "=" + fmt(r.max_rel_error());
    }
    return {ok, std::to_string(reports.size()) + " ops in " + fmt(secs) + " s, max rel error:" + worst};
}

Outcome csa_oracle() {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(1000 + seed);
        const bool largest = seed == 0;
        const std::size_t heads = 1 + rng.below(2), cq = heads * (1 + rng.below(3));
        const std::size_t cm = largest ? 8 : 1 + rng.below(8);
        const std::size_t h = largest ? 6 : 2 + rng.below(5), w = largest ? 6 : 2 + rng.below(5), d = rng.below(3);
        auto p = make_csa(cm, cq, heads, rng.uniform(0.2, 1.0), rng);
        for (auto& v : p.theta_raw.values()) v = logit(rng.uniform(0.05, 0.9));
        p.out_proj.bn.gamma = random_tensor({cm}, rng);
        p.out_proj.bn.beta = random_tensor({cm}, rng);
        const Tensor x = random_tensor({2, cm, h, w}, rng);
        worst = std::max(worst, max_abs_diff(csa_forward(x, p).y, oracle::csa(x, p, d, h << d, w << d).y));
    }
    return {worst <= 1e-9, "20 instances, max |optimized - oracle| = " + fmt(worst)};
}

Outcome attention_invariants() {
    std::size_t bad_range = 0, bad_mask = 0, bad_diag = 0, bad_product = 0, entries = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(2000 + seed);
        const std::size_t heads = 1 + rng.below(3), cm = 1 + rng.below(6);
        const std::size_t h = 2 + rng.below(5), w = 2 + rng.below(5);
        auto p = make_csa(cm, heads * (1 + rng.below(2)), heads, rng.uniform(0.5, 1.0), rng);
        for (auto& v : p.theta_raw.values()) v = logit(rng.uniform(0.1, 0.9));
        const auto out = csa_forward(random_tensor({2, cm, h, w}, rng), p);
        for (const auto& f : out.attention)
            for (std::size_t g = 0; g < f.heads(); ++g) {
                for (std::size_t k = 0; k < f.field[g].size(); ++k, ++entries) {
                    bad_range += !(std::abs(f.scores[g][k]) <= 1.0 + 1e-9);
                    bad_mask += !(f.mask[g][k] > 0.0 && f.mask[g][k] <= 1.0);
                    bad_product += f.field[g][k] != f.scores[g][k] * f.mask[g][k];
                }
                for (std::size_t i = 0; i < h; ++i)
                    for (std::size_t j = 0; j < w; ++j) bad_diag += f.mask[g].at(i, j, i, j) != 1.0;
            }
    }
    const bool ok = bad_range + bad_mask + bad_diag + bad_product == 0;
    return {ok, "100 forwards, " + std::to_string(entries) + " entries; violations I=" + std::to_string(bad_range) +
                    " M=" + std::to_string(bad_mask) + " diag=" + std::to_string(bad_diag) +
                    " A=" + std::to_string(bad_product)};
}

Outcome receptive_field_laws() {
    const std::size_t side = 256, d = 3, grid = side >> d;
    const double thetas[] = {0.01, 0.05, 0.1, 0.2, 0.5, 0.9};
    const double alphas[] = {0.2, 0.4, 0.6, 0.8, 1.0};
    auto mean_rf = [&](double theta, double alpha, double tau) {
        return receptive_field_size(gaussian_mask(theta, alpha, grid, grid, d, side, side), tau).mean;
    };
    bool monotone = true;
    for (double alpha : alphas) {
        double prev = 0.0;
        for (double theta : thetas) {
            const double m = mean_rf(theta, alpha, 0.5);
            monotone = monotone && m >= prev;
            prev = m;
        }
    }
    for (double theta : thetas) {
        double prev = 0.0;
        for (double alpha : alphas) {
            const double m = mean_rf(theta, alpha, 0.5);
            monotone = monotone && m >= prev;
            prev = m;
        }
    }
    std::size_t pairs = 0, global = 0;
    double worst = 1.0;
    for (double theta : thetas)
        for (double alpha : alphas) {
            if (theta * alpha < 0.2 - 1e-12) continue;
            ++pairs;
            const auto rf = receptive_field_size(gaussian_mask(theta, alpha, grid, grid, d, side, side), 0.01);
            const auto full = grid * grid;
            bool all = true;
            for (auto c : rf.per_pixel) all = all && c == full;
            global += all;
            if (!all) worst = std::min(worst, rf.mean / static_cast<double>(full));
        }
    return {monotone && global == pairs,
            std::string("tau=0.5 monotone in theta and alpha: ") + (monotone ? "yes" : "no") + "; theta*alpha>=0.2 global at tau=0.01: " +
                std::to_string(global) + "/" + std::to_string(pairs) + " (smallest mean coverage " + fmt(worst) + ")"};
}

TrainConfig toy_config() {
    TrainConfig c = small_train_config(64, 32);
    c.data.min_radius = 16;
    c.data.max_radius = 28;
    c.epochs = 20;
    c.max_steps = 200;
    c.batch_size = 4;
    c.learning_rate = 1e-4;
    c.train_samples = 40;
    c.heldout_samples = 8;
    return c;
}

// Held-out Dice of the first run at seed 2 was 0.9682; the gate sits below it.
constexpr double kToyDiceGate = 0.95;

Outcome toy_training() {
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = run_training(toy_config(), 2);
    const double secs = seconds_since(t0);
    const double dice = r.history.empty() ? 0.0 : r.history.back().eval.mean_dice;
    const bool ok = !r.diverged && r.steps <= 200 && dice >= kToyDiceGate && secs <= 600.0;
    return {ok, "held-out Dice " + fmt(dice) + " after " + std::to_string(r.steps) + " steps in " + fmt(secs) +
                    " s (gate " + fmt(kToyDiceGate) + ")"};
}

Outcome ablation_harness() {
    const auto dir = scratch_dir("ablate");
    TrainConfig c = small_train_config(64, 8);
    c.epochs = 4;
    c.train_samples = 8;
    write_file_atomic(dir / "toy.cfg", serialize_config(c));
    if (cli({"ablate-alpha", "--config", (dir / "toy.cfg").string(), "--out", (dir / "ablation.csv").string()}) != 0)
        return {false, "ablate-alpha exited non-zero"};
    std::istringstream csv(read_file(dir / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    bool ok = line == "alpha,dice,hd,steps";
    std::vector<double> seen;
    std::string dices;
    while (std::getline(csv, line)) {
        std::istringstream row(line);
        std::string alpha, dice;
        std::getline(row, alpha, ',');
        std::getline(row, dice, ',');
        seen.push_back(std::stod(alpha));
        const double d = std::stod(dice);
        ok = ok && d >= 0.0 && d <= 1.0;
        dices += " " + alpha + ":" + fmt(d);
    }
    ok = ok && seen == kDefaultAlphas;
    fs::remove_all(dir);
    return {ok, std::to_string(seen.size()) + " rows, Dice per alpha:" + dices};
}

AttentionField field(std::size_t h, std::size_t w, std::size_t heads, const std::function<double(std::size_t, std::size_t)>& value) {
    AttentionField f;
    f.height = h;
    f.width = w;
    const std::size_t n = h * w;
    for (std::size_t g = 0; g < heads; ++g) {
        Tensor t({h, w, h, w});
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = 0; q < n; ++q) t[p * n + q] = value(p, q);
        f.scores.push_back(t);
        f.mask.push_back(Tensor({h, w, h, w}, 1.0));
        f.field.push_back(t);
    }
    return f;
}

Outcome collapse_sanity() {
    const std::size_t h = 6, w = 5, n = h * w, layers = 4;
    std::vector<AttentionField> constant, disjoint;
    for (std::size_t l = 0; l < layers; ++l) {
        constant.push_back(field(h, w, 2, [](std::size_t, std::size_t) { return 0.03; }));
        disjoint.push_back(field(h, w, 2, [&](std::size_t p, std::size_t q) { return q == (p + l) % n ? 1.0 : 0.0; }));
    }
    const double one = collapse_report(constant).collapse_score, zero = collapse_report(disjoint).collapse_score;
    return {one == 1.0 && zero == 0.0, "constant fields " + fmt(one) + ", disjoint one-hot fields " + fmt(zero)};
}

Outcome metric_examples() {
    auto mask = [](std::size_t h, std::size_t w, std::initializer_list<std::pair<std::size_t, std::size_t>> pts) {
        BinaryMask m(h, w);
        for (auto [i, j] : pts) m.set(i, j);
        return m;
    };
    const auto a = mask(5, 5, {{0, 0}, {2, 3}, {4, 4}});
    std::vector<std::pair<std::string, bool>> checks{
        {"dice identical", dice(a, a) == 1.0},
        {"dice disjoint", dice(a, mask(5, 5, {{1, 1}})) == 0.0},
        {"dice overlap 2 of 4", dice(mask(4, 4, {{0, 0}, {0, 1}, {0, 2}, {0, 3}}), mask(4, 4, {{0, 0}, {0, 1}, {1, 0}, {1, 1}})) == 0.5},
        {"hd identical", hausdorff(a, a) == 0.0},
        {"hd 3-4-5", hausdorff(mask(5, 5, {{0, 0}}), mask(5, 5, {{3, 4}})) == 5.0},
        {"hd farthest point", hausdorff(mask(2, 2, {{0, 0}, {0, 1}}), mask(2, 2, {{0, 0}})) == 1.0},
        {"hd empty undefined", !hausdorff(a, BinaryMask(5, 5)).has_value()},
    };
    std::string failed;
    for (const auto& [name, ok] : checks)
        if (!ok) failed += " " + name;
    return {failed.empty(), std::to_string(checks.size()) + " examples" + (failed.empty() ? "" : ", failed:" + failed)};
}

Outcome serialization() {
    TrainConfig c = small_train_config(32, 4);
    c.learning_rate = 3e-4 / 7.0;
    c.data.noise_std = 0.1 + 0.2;
    const std::string text = serialize_config(c);
    const bool config_ok = parse_config(text) == c && serialize_config(parse_config(text)) == text;

    const auto dir = scratch_dir("serialization");
    TrainConfig t = c;
    t.epochs = 1;
    t.train_samples = 4;
    t.heldout_samples = 2;
    const SegModel m = run_training(t, 5).model;
    save_checkpoint(m, dir / "a.cfrm");
    save_checkpoint(load_checkpoint(dir / "a.cfrm"), dir / "b.cfrm");
    const std::string bytes = read_file(dir / "a.cfrm");
    const bool ckpt_ok = bytes == read_file(dir / "b.cfrm") && model_tensors(load_checkpoint(dir / "a.cfrm")) == model_tensors(m);

    std::size_t undetected = 0;
    std::string damaged = bytes;
    for (std::size_t k = 0; k < damaged.size(); ++k) {
        damaged[k] = static_cast<char>(damaged[k] ^ 0x5a);
        try {
            decode_checkpoint(damaged);
            ++undetected;
        } catch (const CheckpointError&) {
        }
        damaged[k] = bytes[k];
    }
    fs::remove_all(dir);
    return {config_ok && ckpt_ok && undetected == 0,
            std::string("config round trip ") + (config_ok ? "ok" : "BAD") + ", checkpoint round trip " + (ckpt_ok ? "ok" : "BAD") +
                ", single-byte corruptions undetected " + std::to_string(undetected) + "/" + std::to_string(bytes.size())};
}

Outcome determinism() {
    const auto dir = scratch_dir("determinism");
    TrainConfig c = small_train_config(32, 8);
    c.epochs = 3;
    c.train_samples = 8;
    c.heldout_samples = 4;
    c.checkpoint_every = 1;
    write_file_atomic(dir / "run.cfg", serialize_config(c));
    for (const char* run : {"a", "b"})
        if (cli({"train", "--config", (dir / "run.cfg").string(), "--seed", "11", "--out", (dir / run).string()}) != 0)
            return {false, "train exited non-zero"};
    std::size_t compared = 0, differing = 0;
    for (const auto& entry : fs::directory_iterator(dir / "a")) {
        ++compared;
        const auto other = dir / "b" / entry.path().filename();
        differing += !fs::exists(other) || read_file(entry.path()) != read_file(other);
    }
    fs::remove_all(dir);
    return {compared >= 5 && differing == 0,
            std::to_string(compared) + " output files compared, " + std::to_string(differing) + " differ"};
}

struct Criterion {
    const char* name;
    Outcome (*run)();
};

const Criterion kCriteria[] = {
    {"gradient suite", gradient_suite},
    {"CSA oracle equivalence", csa_oracle},
    {"attention-field invariants", attention_invariants},
    {"receptive-field laws", receptive_field_laws},
    {"toy training regression", toy_training},
    {"ablation harness", ablation_harness},
    {"collapse diagnostics", collapse_sanity},
    {"metric examples", metric_examples},
    {"serialization", serialization},
    {"determinism", determinism},
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"acceptance checks"};
    std::vector<std::size_t> which;
    app.add_option("criteria", which, "criterion numbers (default: all)")->check(CLI::Range(1, 10));
    CLI11_PARSE(app, argc, argv);
    if (which.empty())
        for (std::size_t k = 1; k <= 10; ++k) which.push_back(k);

    int failures = 0;
    for (std::size_t k : which) {
        const auto& c = kCriteria[k - 1];
        Outcome o{false, ""};
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o.detail = std::string("threw: ") + e.what();
        }
        std::cout << "criterion " << k << " " << (o.pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail << std::endl;
        failures += !o.pass;
    }
    return failures == 0 ? 0 : 1;
}
