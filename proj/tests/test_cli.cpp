#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "rmbil/evalkit.hpp"

// The pipeline binary under test; filled by main from the first positional
// argument so ctest can hand over the build product.
static std::string g_cli;

int main(int argc, char* argv[]) {
    std::vector<char*> args;
    args.push_back(argv[0]);
    for (int i = 1; i < argc; ++i) {
        if (g_cli.empty() && argv[i][0] != '-') {
            g_cli = argv[i];
            continue;
        }
        args.push_back(argv[i]);
    }
    if (g_cli.empty()) {
        std::fprintf(stderr, "usage: test_cli <pipeline binary> [test options]\n");
        return 2;
    }
    return Catch::Session().run(static_cast<int>(args.size()), args.data());
}

namespace {

namespace fs = std::filesystem;
using namespace rmbil;

struct TmpDir {
    fs::path path;
    TmpDir() {
        path = fs::temp_directory_path() /
               ("rmbil-cli-" + std::to_string(Catch::rngSeed()) + "-" +
                std::to_string(reinterpret_cast<std::uintptr_t>(this)));
        fs::create_directories(path);
    }
    ~TmpDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

struct CmdResult {
    int code = -1;
    std::string output;
};

CmdResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path log =
        fs::temp_directory_path() / ("rmbil-cli-log-" + std::to_string(getpid()) + "-" +
                                     std::to_string(counter++) + ".txt");
    const std::string cmd = g_cli + " " + args + " >" + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    CmdResult r;
    r.code = (status >= 0 && WIFEXITED(status)) ? WEXITSTATUS(status) : -1;
    std::ifstream in(log);
    std::string line;
    while (std::getline(in, line)) r.output += line + "\n";
    fs::remove(log);
    return r;
}

// small shared budget so the whole suite stays fast
const std::string kTrainFlags =
    " --tau 8 --hidden 8 --batch 128 --windows-cap 128 --epochs 30 --eps 0.002 --lr 3e-3";

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t count_lines(const fs::path& p) {
    std::ifstream in(p);
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) ++n;
    return n;
}

}  // namespace

TEST_CASE("full pipeline produces every artifact") {
    TmpDir d;
    const std::string out = " --out " + d.str();

    CHECK(run_cli("gen-demos" + out + " --plant scalar --n 6 --t 60 --seed 1").code == 0);
    CHECK(run_cli("train-dynamics" + out + kTrainFlags).code == 0);
    CHECK(run_cli("train-controller" + out + kTrainFlags).code == 0);
    CHECK(run_cli("refine-robust" + out + kTrainFlags + " --epochs 4").code == 0);
    CHECK(run_cli("train-cvae" + out + " --epochs 120 --hidden 12 --batch 32").code == 0);
    CHECK(run_cli("rollout" + out + " --controller robust").code == 0);
    CHECK(run_cli("evaluate" + out +
                  " --controllers robust,nominal,ndi-true --disturbances nominal,slope"
                  " --gains 0.1,1 --episodes 4 --severity 0.02 --label smoke")
              .code == 0);
    CHECK(run_cli("report" + out).code == 0);

    for (const char* name :
         {"demos.rmbil-data.json", "dynamics.rmbil-ckpt", "controller.rmbil-ckpt",
          "controller_robust.rmbil-ckpt", "generator.rmbil-ckpt", "dynamics_loss.csv",
          "controller_loss.csv", "refine_loss.csv", "generator_loss.csv", "trace.csv",
          "rollout.rmbil-report.json", "eval_smoke.rmbil-report.json",
          "score_by_gain_disturbance.csv", "score_by_demo_count.csv"})
        REQUIRE(fs::exists(d.path / name));

    // artifacts reload through the library and carry the pipeline state
    const DynModel dm = load_dyn((d.path / "dynamics.rmbil-ckpt").string());
    REQUIRE(dm.trained);
    const CtrlModel cm = load_ctrl((d.path / "controller.rmbil-ckpt").string());
    REQUIRE(cm.phase == 2);
    const CtrlModel rm = load_ctrl((d.path / "controller_robust.rmbil-ckpt").string());
    REQUIRE(rm.phase == 3);

    // config echo: checkpoints record the command and effective settings
    const CheckpointData ck =
        load_checkpoint((d.path / "dynamics.rmbil-ckpt").string(), "dynamics");
    REQUIRE(ck.header.at("config").at("command") == "train-dynamics");
    REQUIRE(ck.header.at("config").at("tau") == 8);
    REQUIRE(ck.header.at("config").at("preset") == "desk");

    // the merged grid has one line per cell plus a header
    REQUIRE(count_lines(d.path / "score_by_gain_disturbance.csv") == 1 + 3 * 2 * 2);
    // demo-count table only carries nominal cells
    REQUIRE(count_lines(d.path / "score_by_demo_count.csv") == 1 + 3 * 2);
    // trace: one row per step plus a header
    REQUIRE(count_lines(d.path / "trace.csv") == 60);
}

TEST_CASE("phase order is enforced across processes") {
    TmpDir d;
    const std::string out = " --out " + d.str();

    CmdResult r = run_cli("train-dynamics" + out + kTrainFlags);
    CHECK(r.code == 3);
    CHECK(r.output.find("error: phase-order:") != std::string::npos);

    CHECK(run_cli("gen-demos" + out + " --n 4 --t 40 --seed 2").code == 0);
    r = run_cli("train-controller" + out + kTrainFlags);
    CHECK(r.code == 3);
    CHECK(r.output.find("dynamics") != std::string::npos);

    r = run_cli("refine-robust" + out + kTrainFlags);
    CHECK(r.code == 3);

    r = run_cli("rollout" + out + " --controller robust");
    CHECK(r.code == 3);

    r = run_cli("rollout" + out + " --controller ndi-true --source cvae");
    CHECK(r.code == 3);
    CHECK(r.output.find("train-cvae") != std::string::npos);
}

TEST_CASE("identical seeds give byte-identical artifacts") {
    TmpDir a, b;
    for (const TmpDir* d : {&a, &b}) {
        const std::string out = " --out " + d->str();
        REQUIRE(run_cli("gen-demos" + out + " --n 4 --t 40 --seed 7").code == 0);
        REQUIRE(run_cli("train-dynamics" + out + kTrainFlags + " --epochs 6").code == 0);
        REQUIRE(run_cli("train-controller" + out + kTrainFlags + " --epochs 4").code == 0);
    }
    for (const char* name : {"demos.rmbil-data.json", "dynamics.rmbil-ckpt", "dynamics_loss.csv",
                             "controller.rmbil-ckpt", "controller_loss.csv"})
        REQUIRE(slurp(a.path / name) == slurp(b.path / name));
}

TEST_CASE("subset flag trains on fewer demos and is echoed") {
    TmpDir d;
    const std::string out = " --out " + d.str();
    REQUIRE(run_cli("gen-demos" + out + " --n 6 --t 40 --seed 3").code == 0);
    REQUIRE(run_cli("train-dynamics" + out + kTrainFlags + " --epochs 4 --subset 3").code == 0);
    const CheckpointData ck =
        load_checkpoint((d.path / "dynamics.rmbil-ckpt").string(), "dynamics");
    REQUIRE(ck.header.at("config").at("subset") == 3);

    REQUIRE(run_cli("train-controller" + out + kTrainFlags + " --epochs 3 --subset 3").code == 0);
    REQUIRE(run_cli("evaluate" + out + " --controllers nominal --episodes 2 --subset 3"
                    " --label sub")
                .code == 0);
    const auto doc = load_report((d.path / "eval_sub.rmbil-report.json").string());
    REQUIRE(doc.at("config").at("demo_count_used") == 3);
}

TEST_CASE("usage and argument errors exit nonzero with one line") {
    TmpDir d;
    CmdResult r = run_cli("no-such-command --out " + d.str());
    CHECK(r.code != 0);

    r = run_cli("gen-demos --out " + d.str() + " --preset bogus");
    CHECK(r.code == 1);
    CHECK(r.output.find("error: invalid:") == 0);
    CHECK(std::count(r.output.begin(), r.output.end(), '\n') == 1);

    REQUIRE(run_cli("gen-demos --out " + d.str() + " --n 3 --t 30").code == 0);
    r = run_cli("evaluate --out " + d.str() + " --controllers ndi-true --disturbances bogus");
    CHECK(r.code == 1);
    CHECK(r.output.find("unknown disturbance") != std::string::npos);
}

TEST_CASE("report without evaluation grids fails cleanly") {
    TmpDir d;
    const CmdResult r = run_cli("report --out " + d.str());
    CHECK(r.code == 1);
    CHECK(r.output.find("error:") == 0);
}
