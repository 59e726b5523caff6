// Integration tests that drive the built corrflow binary through the shell.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "flow/flow_io.hpp"
#include "flow/synthetic.hpp"

using namespace flow;
namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("CORRFLOW_BIN");
    REQUIRE_MESSAGE(p != nullptr, "CORRFLOW_BIN must point at the built binary");
    return p;
}

int run(const std::string& args) {
    const std::string cmd = cli() + " " + args + " >/dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() / ("corrflow_cli_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void write_pair(const TmpDir& dir, const std::string& a, const std::string& b,
                const std::string& gt) {
    auto s = make_synthetic<double>(5150, 40, 40, MotionKind::smooth_random_field);
    write_ppm(dir / a, tensor_to_image(s.image1));
    write_ppm(dir / b, tensor_to_image(s.image2));
    write_flo(dir / gt, flow_to_file(s.flow));
}

}  // namespace

TEST_CASE("missing input files exit with code 2") {
    CHECK(run("infer /nonexistent/a.png /nonexistent/b.png --checkpoint /nonexistent/c.ckpt") ==
          2);
    CHECK(run("eval /nonexistent/a.flo /nonexistent/b.flo") == 2);
    CHECK(run("viz /nonexistent/a.flo") == 2);
    CHECK(run("train /nonexistent/config.txt") == 2);
}

TEST_CASE("unknown arguments and missing subcommands exit with code 2") {
    CHECK(run("") == 2);
    CHECK(run("frobnicate") == 2);
}

TEST_CASE("malformed config exits with code 2 and names the key") {
    TmpDir dir;
    const auto cfgp = dir / "bad.cfg";
    {
        std::ofstream os(cfgp);
        os << "optim.steps = banana\n";
    }
    const std::string cmd = cli() + " train " + cfgp + " --out " + (dir / "out") +
                            " 2> " + (dir / "err.txt") + " >/dev/null";
    const int rc = WEXITSTATUS(std::system(cmd.c_str()));
    CHECK(rc == 2);
    std::ifstream is(dir / "err.txt");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(text.find("optim.steps") != std::string::npos);
}

TEST_CASE("unknown config key exits with code 2 and names it") {
    TmpDir dir;
    const auto cfgp = dir / "unknown.cfg";
    {
        std::ofstream os(cfgp);
        os << "optim.stepz = 10\n";
    }
    const std::string cmd = cli() + " train " + cfgp + " --out " + (dir / "out") + " 2> " +
                            (dir / "err.txt") + " >/dev/null";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 2);
    std::ifstream is(dir / "err.txt");
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    CHECK(text.find("optim.stepz") != std::string::npos);
}

TEST_CASE("train + infer + eval + viz round trip through the CLI" * doctest::timeout(900)) {
    TmpDir dir;
    write_pair(dir, "f1.ppm", "f2.ppm", "gt.flo");
    const auto cfgp = dir / "train.cfg";
    {
        std::ofstream os(cfgp);
        os << "model.feature_dim = 16\nmodel.stem_width = 8\n";
        os << "model.stage_width1 = 8\nmodel.stage_width2 = 12\nmodel.stage_width3 = 16\n";
        os << "model.hidden_dim = 12\nmodel.context_dim = 12\n";
        os << "model.corr_radius = 3\nmodel.corr_levels = 2\n";
        os << "model.corr_branch1 = 16\nmodel.corr_branch2 = 12\n";
        os << "model.flow_branch1 = 8\nmodel.flow_branch2 = 6\n";
        os << "model.head_width = 16\nmodel.mask_width = 16\n";
        os << "model.iters_train = 3\nmodel.iters_infer = 6\n";
        os << "optim.steps = 8\ntrain.image_size = 32\ntrain.run_name = mini\n";
        os << "train.val_every = 8\ntrain.val_count = 2\n";
    }
    CHECK(run("train " + cfgp + " --out " + (dir / "out")) == 0);
    const auto ckpt = dir / "out/mini.ckpt";
    CHECK(fs::exists(ckpt));
    CHECK(fs::exists(dir / "out/mini_metrics.csv"));
    CHECK(fs::exists(dir / "out/mini.manifest"));

    const auto flo = dir / "pred.flo";
    CHECK(run("infer " + (dir / "f1.ppm") + " " + (dir / "f2.ppm") + " --checkpoint " + ckpt +
              " --iters 4 -o " + flo) == 0);
    CHECK(fs::exists(flo));
    CHECK(fs::exists(flo + ".manifest"));
    auto f = read_flo(flo);
    CHECK(f.width == 40);
    CHECK(f.height == 40);

    CHECK(run("eval " + flo + " " + (dir / "gt.flo") + " -o " + (dir / "metrics.json")) == 0);
    CHECK(fs::exists(dir / "metrics.json"));
    {
        std::ifstream is(dir / "metrics.json");
        std::string text((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
        CHECK(text.find("\"epe\"") != std::string::npos);
        CHECK(text.find("\"f1_all\"") != std::string::npos);
    }

    // eval of a flow against itself: epe exactly 0
    CHECK(run("eval " + (dir / "gt.flo") + " " + (dir / "gt.flo") + " -o " +
              (dir / "self.json")) == 0);
    {
        std::ifstream is(dir / "self.json");
        std::string text((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
        CHECK(text.find("\"epe\": 0.0") != std::string::npos);
    }

    CHECK(run("viz " + flo + " -o " + (dir / "pred.png")) == 0);
    CHECK(fs::exists(dir / "pred.png"));

    // warm-start path: reuse the prediction as the previous-pair flow
    CHECK(run("infer " + (dir / "f1.ppm") + " " + (dir / "f2.ppm") + " --checkpoint " + ckpt +
              " --iters 2 --warm-start " + flo + " -o " + (dir / "pred2.flo")) == 0);
    CHECK(fs::exists(dir / "pred2.flo"));

    // identical manifest-backed reruns produce identical bytes
    const auto flo_a = dir / "rerun_a.flo";
    const auto flo_b = dir / "rerun_b.flo";
    CHECK(run("infer " + (dir / "f1.ppm") + " " + (dir / "f2.ppm") + " --checkpoint " + ckpt +
              " --iters 4 -o " + flo_a) == 0);
    CHECK(run("infer " + (dir / "f1.ppm") + " " + (dir / "f2.ppm") + " --checkpoint " + ckpt +
              " --iters 4 -o " + flo_b) == 0);
    std::ifstream fa(flo_a, std::ios::binary), fb(flo_b, std::ios::binary);
    std::string ba((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string bb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ba == bb);
}

TEST_CASE("viz of a zero flow writes a uniform white image") {
    TmpDir dir;
    FlowFile f;
    f.width = 8;
    f.height = 8;
    f.data.assign(128, 0.0f);
    write_flo(dir / "zero.flo", f);
    CHECK(run("viz " + (dir / "zero.flo") + " -o " + (dir / "zero.png")) == 0);
    auto img = read_image(dir / "zero.png");
    for (auto v : img.rgb) CHECK(v == 255);
}

TEST_CASE("selftest --quick passes on a fresh build" * doctest::timeout(600)) {
    CHECK(run("selftest --quick") == 0);
}

TEST_CASE("bad FLOW_PROFILE exits with code 2") {
    const std::string cmd = "FLOW_PROFILE=banana " + cli() + " selftest --quick >/dev/null 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 2);
}
