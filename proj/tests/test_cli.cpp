#include <aftn/data.hpp>
#include <aftn/model_io.hpp>
#include <aftn/report.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::map<std::string, std::string> key_values(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);)
        if (auto eq = line.find('='); eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
    return kv;
}

class Cli : public ::testing::Test {
protected:
    static fs::path root() { return fs::temp_directory_path() / ("aftn_cli_test_" + std::to_string(::getpid())); }
    static fs::path data() { return root() / "data"; }
    static fs::path model() { return root() / "m.aftn"; }

    static Result run(const std::string& args) {
        const fs::path out = root() / "stdout.txt", err = root() / "stderr.txt";
        const std::string cmd = std::string(AFTN_CLI_PATH) + ' ' + args + " > " + out.string() + " 2> " + err.string();
        const int status = std::system(cmd.c_str());
        Result r;
        r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = slurp(out);
        r.err = slurp(err);
        return r;
    }

    // one tiny dataset and model shared by the suite
    static void SetUpTestSuite() {
        fs::remove_all(root());
        fs::create_directories(root());
        std::ofstream(root() / "tiny.json") << R"({"train": {"epochs": 1, "batch": 4}, "head": {"fusion_kernels": 8, "fc_units": 16}})";
        const auto g = run("gen --out " + data().string() + " --n 3 --train-count 2 --mean-length 6 --seed 5");
        ASSERT_EQ(g.code, 0) << g.err;
        const auto t = run("train --config " + (root() / "tiny.json").string() + " --manifest " +
                           (data() / "train.txt").string() + " --out " + model().string() + " --seed 3");
        ASSERT_EQ(t.code, 0) << t.err;
    }
    static void TearDownTestSuite() { fs::remove_all(root()); }
};

} // namespace

TEST_F(Cli, GenIsDeterministicAndWritesManifest) {
    const fs::path other = root() / "data2";
    const auto g = run("gen --out " + other.string() + " --n 3 --train-count 2 --mean-length 6 --seed 5");
    ASSERT_EQ(g.code, 0) << g.err;
    EXPECT_EQ(key_values(g.out)["sequences"], "3");
    std::size_t files = 0;
    for (const auto& e : fs::recursive_directory_iterator(data())) {
        if (!e.is_regular_file()) continue;
        ++files;
        const auto rel = fs::relative(e.path(), data());
        EXPECT_EQ(slurp(e.path()), slurp(other / rel)) << rel;
    }
    EXPECT_GT(files, 10u);
    EXPECT_EQ(aftn::read_manifest(other / "manifest.txt").size(), 3u);
    EXPECT_EQ(aftn::read_manifest(other / "train.txt").size(), 2u);
    EXPECT_EQ(aftn::read_manifest(other / "eval.txt").size(), 1u);
    EXPECT_TRUE(fs::exists(other / "config.json"));
    fs::remove_all(other);
}

TEST_F(Cli, UsageErrorsExitTwo) {
    const auto g = run("gen --n 3");
    EXPECT_EQ(g.code, 2);
    EXPECT_NE(g.err.find("--out"), std::string::npos);
    EXPECT_EQ(run("").code, 2);
    EXPECT_EQ(run("frobnicate").code, 2);
    EXPECT_EQ(run("train --out x.aftn --variant nope --manifest " + (data() / "train.txt").string()).code, 2);
    std::ofstream(root() / "bad.json") << R"({"optim": {"learning_rate": 1}})";
    EXPECT_EQ(run("eval --oracle --manifest " + (data() / "eval.txt").string() + " --config " +
                  (root() / "bad.json").string())
                  .code,
              2);
}

TEST_F(Cli, TrainWritesModel) {
    EXPECT_TRUE(fs::exists(model()));
    EXPECT_TRUE(fs::exists(fs::path(model().string() + ".config.json")));
    const auto m = aftn::load_model(model());
    EXPECT_EQ(m.variant(), aftn::Variant::aftn);
    EXPECT_EQ(m.head_config().fc_units, 16u);
}

TEST_F(Cli, DivergenceExitsThree) {
    const auto r = run("train --config " + (root() / "tiny.json").string() + " --manifest " +
                       (data() / "train.txt").string() + " --out " + (root() / "nan.aftn").string() +
                       " --lr 1e300 --epochs 3");
    EXPECT_EQ(r.code, 3) << r.err;
    EXPECT_NE(r.err.find("step"), std::string::npos);
}

TEST_F(Cli, TrainsSingleStreamVariant) {
    const fs::path out = root() / "c.aftn";
    const auto r = run("train --config " + (root() / "tiny.json").string() + " --manifest " +
                       (data() / "train.txt").string() + " --out " + out.string() + " --variant aftn-c");
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(key_values(r.out)["variant"], "aftn-c");
    EXPECT_EQ(aftn::load_model(out).variant(), aftn::Variant::aftn_c);
}

TEST_F(Cli, EvalPrintsScores) {
    const fs::path out = root() / "ev";
    const auto r = run("eval --model " + model().string() + " --manifest " + (data() / "eval.txt").string() +
                       " --out " + out.string() + " --grid-step 0.1");
    ASSERT_EQ(r.code, 0) << r.err;
    auto kv = key_values(r.out);
    for (const char* k : {"accuracy", "robustness", "overall", "fps"}) ASSERT_TRUE(kv.count(k)) << k;
    const double acc = std::stod(kv["accuracy"]), rob = std::stod(kv["robustness"]);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_EQ(std::stod(kv["overall"]), (acc + rob) / 2.0);
    EXPECT_GT(std::stod(kv["fps"]), 0.0);
    for (const char* f : {"tp_rot.csv", "fr_rt.csv", "tp_rot.svg", "fr_rt.svg", "scores.txt", "config.json"})
        EXPECT_TRUE(fs::exists(out / f)) << f;
}

TEST_F(Cli, OracleScoresOne) {
    const auto r = run("eval --oracle --manifest " + (data() / "eval.txt").string());
    ASSERT_EQ(r.code, 0) << r.err;
    auto kv = key_values(r.out);
    EXPECT_EQ(std::stod(kv["overall"]), 1.0);
    EXPECT_EQ(std::stod(kv["accuracy"]), 1.0);
    EXPECT_EQ(std::stod(kv["robustness"]), 1.0);
}

TEST_F(Cli, VariantMismatchExitsTwo) {
    const auto r = run("eval --model " + model().string() + " --variant aftn-no-att --manifest " +
                       (data() / "eval.txt").string());
    EXPECT_EQ(r.code, 2);
}

TEST_F(Cli, MissingFilesExitFour) {
    EXPECT_EQ(run("eval --model " + (root() / "absent.aftn").string() + " --manifest " + (data() / "eval.txt").string())
                  .code,
              4);
    EXPECT_EQ(run("bench --model " + model().string() + " --manifest " + (root() / "absent.txt").string()).code, 4);
}

TEST_F(Cli, TrackOutputIsScorable) {
    const auto ids = aftn::read_manifest(data() / "eval.txt");
    ASSERT_EQ(ids.size(), 1u);
    const fs::path preds = root() / "preds";
    fs::create_directories(preds);
    const std::string id = ids[0].filename().string();
    const auto t = run("track --model " + model().string() + " --sequence " + ids[0].string() + " --out " +
                       (preds / (id + ".csv")).string());
    ASSERT_EQ(t.code, 0) << t.err;
    const auto boxes = aftn::read_annotations(preds / (id + ".csv"));
    const auto seq = aftn::load_sequence(ids[0]);
    EXPECT_EQ(boxes.size(), seq.size());
    EXPECT_EQ(boxes.front(), seq.annotations.front());
    const auto e = run("eval --predictions " + preds.string() + " --manifest " + (data() / "eval.txt").string());
    ASSERT_EQ(e.code, 0) << e.err;
    EXPECT_TRUE(key_values(e.out).count("overall"));
}

TEST_F(Cli, BenchPrintsOneNumber) {
    const auto r = run("bench --model " + model().string() + " --manifest " + (data() / "eval.txt").string());
    ASSERT_EQ(r.code, 0) << r.err;
    std::istringstream in(r.out);
    std::string line, extra;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_FALSE(std::getline(in, extra));
    std::size_t used = 0;
    EXPECT_GT(std::stod(line, &used), 0.0);
    EXPECT_EQ(used, line.size());
    EXPECT_NE(r.err.find("25"), std::string::npos);
}

TEST_F(Cli, PlotIsBitStable) {
    const fs::path out = root() / "plot";
    ASSERT_EQ(run("eval --oracle --manifest " + (data() / "eval.txt").string() + " --out " + out.string()).code, 0);
    const std::string tp = slurp(out / "tp_rot.svg"), fr = slurp(out / "fr_rt.svg");
    fs::remove(out / "tp_rot.svg");
    fs::remove(out / "fr_rt.svg");
    ASSERT_EQ(run("plot --run " + out.string()).code, 0);
    EXPECT_EQ(slurp(out / "tp_rot.svg"), tp);
    EXPECT_EQ(slurp(out / "fr_rt.svg"), fr);
}
