#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = fragmix::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// path -> contents of every regular file below dir, relative names.
std::vector<std::pair<std::string, std::string>> tree(const fs::path& dir) {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) out.emplace_back(fs::relative(e.path(), dir).string(), slurp(e.path()));
    std::sort(out.begin(), out.end());
    return out;
}

double value_after(const std::string& text, const std::string& key) {
    const auto at = text.find(key + "=");
    REQUIRE(at != std::string::npos);
    return std::stod(text.substr(at + key.size() + 1));
}

const fs::path fixtures = FRAGMIX_FIXTURES;
const fs::path tmp = fs::temp_directory_path() / "fragmix_cli_test";

struct Scratch {
    Scratch() {
        fs::remove_all(tmp);
        fs::create_directories(tmp);
    }
    ~Scratch() { fs::remove_all(tmp); }
};

std::string p(const fs::path& x) { return x.string(); }

}  // namespace

TEST_CASE("help lists every flag of every command with defaults") {
    for (const char* cmd : {"gen", "featurize", "train", "profile", "msm", "attn"}) {
        const Result r = run({cmd, "--help"});
        CHECK(r.code == 0);
        CHECK(r.out.find("Usage:") != std::string::npos);
        CHECK(r.out.find("--help") != std::string::npos);
    }
    CHECK(run({"profile", "--help"}).out.find("--windows TEXT [1,2,4,6]") != std::string::npos);
    CHECK(run({"gen", "--help"}).out.find("--trajs UINT [1]") != std::string::npos);
    const Result t = run({"train", "--help"});
    CHECK(t.out.find("batch_size=1000") != std::string::npos);
    CHECK(t.out.find("validation_interval=50") != std::string::npos);
    CHECK(run({"--help"}).code == 0);
}

TEST_CASE("usage errors exit with code 2") {
    CHECK(run({}).code == 2);
    CHECK(run({"gen", "--system", "ou", "--frames", "10", "--out", p(tmp / "x"), "--bogus"}).code == 2);
    CHECK(run({"msm", "--lag", "1"}).code == 2);
    CHECK(run({"frobnicate"}).code == 2);
    Scratch s;
    CHECK(run({"gen", "--system", "doublewell", "--frames", "0", "--out", p(tmp / "g")}).code == 2);
    CHECK(run({"gen", "--system", "nope", "--frames", "5", "--out", p(tmp / "g")}).code == 2);
}

TEST_CASE("gen writes one file per trajectory plus a manifest, reproducibly") {
    Scratch s;
    const Result a = run({"gen", "--system", "doublewell", "--frames", "1000", "--trajs", "2", "--out", p(tmp / "a")});
    REQUIRE(a.code == 0);
    CHECK(a.out.find("manifest=") != std::string::npos);
    const std::string manifest = slurp(tmp / "a" / "manifest.txt");
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(tmp / "a"))
        if (e.path().filename() != "manifest.txt") {
            ++files;
            CHECK(manifest.find(e.path().filename().string() + " 1000") != std::string::npos);
        }
    CHECK(files == 2);
    REQUIRE(run({"gen", "--system", "doublewell", "--frames", "1000", "--trajs", "2", "--out", p(tmp / "b")}).code ==
            0);
    CHECK(tree(tmp / "a") == tree(tmp / "b"));
    REQUIRE(run({"gen", "--system", "doublewell", "--frames", "1000", "--trajs", "2", "--seed", "1", "--out",
                 p(tmp / "c")})
                .code == 0);
    CHECK(tree(tmp / "a") != tree(tmp / "c"));
}

TEST_CASE("FRAGMIX_SEED overrides the seed flag") {
    Scratch s;
    ::setenv("FRAGMIX_SEED", "5", 1);
    const int a = run({"gen", "--system", "ou", "--frames", "50", "--out", p(tmp / "a")}).code;
    ::unsetenv("FRAGMIX_SEED");
    const int b = run({"gen", "--system", "ou", "--frames", "50", "--seed", "5", "--out", p(tmp / "b")}).code;
    REQUIRE(a == 0);
    REQUIRE(b == 0);
    CHECK(tree(tmp / "a") == tree(tmp / "b"));
}

TEST_CASE("featurize and train are byte-deterministic") {
    Scratch s;
    REQUIRE(run({"gen", "--system", "doublewell", "--frames", "300", "--trajs", "5", "--out", p(tmp / "pos")}).code ==
            0);
    for (const char* o : {"tok1", "tok2"})
        REQUIRE(run({"featurize", "--in", p(tmp / "pos" / "manifest.txt"), "--out", p(tmp / o), "--hidden", "16"})
                    .code == 0);
    CHECK(tree(tmp / "tok1") == tree(tmp / "tok2"));
    {
        std::ofstream f(tmp / "c.cfg");
        f << "layers=1\nheads=2\nbatch_size=100\nmax_epochs=2\nvalidation_interval=3\nlag_ns=0.1\n";
    }
    std::string outs[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path d = tmp / ("run" + std::to_string(i));
        const Result r = run({"train", "--objective", "vamp", "--config", p(tmp / "c.cfg"), "--data",
                              p(tmp / "tok1" / "manifest.txt"), "--out", p(d)});
        REQUIRE(r.code == 0);
        outs[i] = r.out;
    }
    CHECK(outs[0] == outs[1]);
    CHECK(tree(tmp / "run0") == tree(tmp / "run1"));
    // The checkpoint carries the config text verbatim.
    CHECK(slurp(tmp / "run0" / "checkpoint.fmx").find(slurp(tmp / "c.cfg")) != std::string::npos);

    std::string attn[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path o = tmp / ("attn" + std::to_string(i) + ".csv");
        REQUIRE(run({"attn", "--checkpoint", p(tmp / "run0" / "checkpoint.fmx"), "--data",
                     p(tmp / "tok1" / "manifest.txt"), "--out", p(o), "--frames", "8"})
                    .code == 0);
        attn[i] = slurp(o);
    }
    CHECK(!attn[0].empty());
    CHECK(attn[0] == attn[1]);
}

TEST_CASE("train on the two-state chain fixture reaches the oracle neighborhood") {
    Scratch s;
    const Result r = run({"train", "--objective", "vamp", "--config", p(fixtures / "chain2.cfg"), "--data",
                          p(fixtures / "chain2" / "manifest.txt"), "--out", p(tmp / "run")});
    REQUIRE(r.code == 0);
    const double best = value_after(r.out, "best_val");
    CHECK(best >= 1.55);
    CHECK(best <= 1.64 + 0.02);
    CHECK(slurp(tmp / "run" / "scores.csv").rfind("step,train_score,val_score\n", 0) == 0);
}

TEST_CASE("config contradictions fail before any compute") {
    Scratch s;
    {
        std::ofstream f(tmp / "odd.cfg");
        f << "hidden=3\n";
    }
    {
        std::ofstream f(tmp / "w0.cfg");
        f << "window=0\n";
    }
    {
        std::ofstream f(tmp / "unknown.cfg");
        f << "windw=2\n";
    }
    for (const char* c : {"odd.cfg", "w0.cfg", "unknown.cfg"}) {
        const Result r = run({"train", "--config", p(tmp / c), "--data", p(tmp / "missing.txt"), "--out",
                              p(tmp / "never")});
        CHECK(r.code == 2);
        CHECK(!fs::exists(tmp / "never"));
    }
}

TEST_CASE("malformed inputs fail with the byte offset") {
    Scratch s;
    {
        std::ofstream f(tmp / "bad.txt");
        f << "0 1\n1 x 0\n";
    }
    const Result r = run({"msm", "--labels", p(tmp / "bad.txt"), "--lag", "1"});
    CHECK(r.code == 1);
    CHECK(r.err.find("offset 6") != std::string::npos);
    CHECK(run({"msm", "--labels", p(tmp / "absent.txt"), "--lag", "1"}).code == 1);
}

TEST_CASE("msm on the label fixture reproduces the hand count") {
    Scratch s;
    const Result r = run({"msm", "--labels", p(fixtures / "msm_labels.txt"), "--lag", "1", "--out", p(tmp / "m")});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("counts\n1 1\n1 1\n") != std::string::npos);
    CHECK(r.out.find("transition\n0.5 0.5\n0.5 0.5\n") != std::string::npos);
    CHECK(fs::exists(tmp / "m_edges.csv"));
    CHECK(fs::exists(tmp / "m_nodes.csv"));
    CHECK(fs::exists(tmp / "m_timescales.csv"));
    const std::string edges = slurp(tmp / "m_edges.csv");
    REQUIRE(run({"msm", "--labels", p(fixtures / "msm_labels.txt"), "--lag", "1", "--out", p(tmp / "n")}).code == 0);
    CHECK(slurp(tmp / "n_edges.csv") == edges);
}

TEST_CASE("profile emits one row per size, window and operator") {
    Scratch s;
    const fs::path a = tmp / "a.csv", b = tmp / "b.csv";
    for (const auto& o : {a, b})
        REQUIRE(run({"profile", "--sizes", "128,214,592", "--windows", "1,2,4,6", "--ops", "gcn,tag", "--hidden", "8",
                     "--layers", "1", "--heads", "1", "--batch", "2", "--counts-only", "--out", p(o)})
                    .code == 0);
    const std::string csv = slurp(a);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 12 * 2);
    CHECK(csv.rfind("N,w,operator,ms_per_step,peak_bytes,pair_count\n", 0) == 0);
    CHECK(csv.find("592,6,tag,0.000000,") != std::string::npos);
    CHECK(csv == slurp(b));
    CHECK(run({"profile", "--batch", "1", "--out", p(tmp / "c.csv")}).code == 2);
}
