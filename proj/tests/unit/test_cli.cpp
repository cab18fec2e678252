#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "convformer/cli.hpp"
#include "convformer/io.hpp"

using namespace convformer;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

fs::path tiny_setup(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("convformer_cli_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    TrainConfig c;
    c.model.embed_channels = 4;
    c.model.query_channels = 4;
    c.model.hidden_channels = 8;
    c.model.patch_size = 2;
    c.model.layers = 2;
    c.model.heads = 2;
    c.model.height = c.model.width = 16;
    c.data.min_radius = 3;
    c.data.max_radius = 6;
    c.epochs = 2;
    c.batch_size = 2;
    c.train_samples = 4;
    c.heldout_samples = 2;
    c.checkpoint_every = 1;
    write_file_atomic(dir / "tiny.cfg", serialize_config(c));
    return dir;
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
    CHECK(cli({}).code == 2);
    CHECK(cli({"frobnicate"}).code == 2);
    const auto r = cli({"train", "--seed", "abc"});
    CHECK(r.code == 2);
    CHECK(r.err.find("error: usage:") != std::string::npos);
    CHECK(cli({"eval"}).code == 2);
    CHECK(cli({"visualize-attn", "--ckpt", "x"}).code == 2);
    CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("runtime errors exit with 1") {
    const auto dir = tiny_setup("errors");
    write_file_atomic(dir / "bad.cfg", "model.colour = red\n");
    const auto bad = cli({"train", "--config", (dir / "bad.cfg").string(), "--out", (dir / "run").string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("error: config:") != std::string::npos);
    write_file_atomic(dir / "junk.cfrm", "junk");
    const auto ck = cli({"eval", "--ckpt", (dir / "junk.cfrm").string()});
    CHECK(ck.code == 1);
    CHECK(ck.err.find("error: checkpoint:") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("gradcheck command passes at seed 7") {
    const auto dir = tiny_setup("gradcheck");
    const auto r = cli({"gradcheck", "--seed", "7", "--out", (dir / "gc.csv").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("FAIL") == std::string::npos);
    CHECK(read_file(dir / "gc.csv").rfind("op,param", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("train, eval and visualize-attn work end to end") {
    const auto dir = tiny_setup("flow");
    const auto cfg = (dir / "tiny.cfg").string();
    const auto run = dir / "run";
    const auto t = cli({"train", "--config", cfg, "--seed", "3", "--out", run.string()});
    REQUIRE(t.code == 0);
    for (const char* f : {"config.txt", "history.csv", "model.cfrm", "epoch_0001.cfrm", "epoch_0002.cfrm"})
        CHECK_MESSAGE(fs::exists(run / f), f);
    CHECK(parse_config(read_file(run / "config.txt")) == parse_config(read_file(cfg)));
    CHECK(read_file(run / "model.cfrm") == read_file(run / "epoch_0002.cfrm"));

    const auto e = cli({"eval", "--config", cfg, "--seed", "3", "--ckpt", (run / "model.cfrm").string(), "--out",
                        (dir / "eval.csv").string()});
    REQUIRE(e.code == 0);
    CHECK(e.out.rfind("metric,class,value\n", 0) == 0);
    CHECK(read_file(dir / "eval.csv") == e.out);

    const auto v = cli({"visualize-attn", "--config", cfg, "--ckpt", (run / "model.cfrm").string(), "--layer", "2",
                        "--query", "1", "2", "--out", dir.string()});
    REQUIRE(v.code == 0);
    for (const char* f : {"attn_layer2_head1.pgm", "attn_layer2_head2.pgm"}) {
        REQUIRE(fs::exists(dir / f));
        const auto pgm = read_file(dir / f);
        CHECK(pgm.rfind("P5\n", 0) == 0);
        CHECK(pgm.find("\n8 8\n255\n") != std::string::npos);
    }
    CHECK(cli({"visualize-attn", "--ckpt", (run / "model.cfrm").string(), "--layer", "3"}).code == 1);
    CHECK(cli({"visualize-attn", "--ckpt", (run / "model.cfrm").string(), "--layer", "1", "--query", "8", "0"}).code == 1);
    fs::remove_all(dir);
}

TEST_CASE("ablate-alpha writes one row per alpha") {
    const auto dir = tiny_setup("ablate");
    const auto r = cli({"ablate-alpha", "--config", (dir / "tiny.cfg").string(), "--alphas", "0.3", "0.9"});
    REQUIRE(r.code == 0);
    std::size_t lines = 0;
    for (char ch : r.out) lines += ch == '\n';
    CHECK(lines == 3);
    CHECK(r.out.rfind("alpha,dice,hd,steps\n0.3,", 0) == 0);
    fs::remove_all(dir);
}

TEST_CASE("gen-data writes images, masks and an index") {
    const auto dir = tiny_setup("gen");
    const auto r = cli({"gen-data", "--config", (dir / "tiny.cfg").string(), "--count", "3", "--out", (dir / "d").string()});
    REQUIRE(r.code == 0);
    for (const char* f : {"image_0000.pgm", "mask_0002.pgm", "index.csv"}) CHECK_MESSAGE(fs::exists(dir / "d" / f), f);
    fs::remove_all(dir);
}
