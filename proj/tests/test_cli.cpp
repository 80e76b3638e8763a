#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "contab/cli.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
    int code;
    std::string out, err;
};

Run cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = contab::cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

fs::path fresh(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "contab_test_cli" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

// Two gaussian blobs plus a categorical column and a few blanks.
fs::path raw_csv(const fs::path& dir, std::size_t n = 160) {
    std::mt19937_64 rng(99);
    std::normal_distribution<double> g;
    const fs::path p = dir / "raw.csv";
    std::ofstream f(p);
    f << "a,b,c,color,target\n";
    const char* colors[] = {"red", "green", "blue"};
    for (std::size_t i = 0; i < n; ++i) {
        const int y = static_cast<int>(i % 2);
        f << g(rng) + 2 * y << ",";
        if (i % 17 == 3) f << ""; else f << g(rng) - y;
        f << "," << g(rng) << "," << colors[(i + y) % 3] << "," << (y ? "yes" : "no") << "\n";
    }
    return p;
}

const std::vector<std::string> kTiny{"--epochs", "2", "--batch", "32", "--token-dim", "4", "--layers", "1"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
}

}  // namespace

TEST(Cli, UnknownFlagIsUsageError) {
    const auto r = cli({"pretrain", "--no-such-flag", "1"});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("Usage"), std::string::npos);
}

TEST(Cli, MissingSubcommandIsUsageError) { EXPECT_EQ(cli({}).code, 1); }

TEST(Cli, HelpExitsZero) {
    const auto r = cli({"--help"});
    EXPECT_EQ(r.code, 0);
    EXPECT_NE(r.out.find("pretrain"), std::string::npos);
}

TEST(Cli, MissingInputIsDataErrorNamingPath) {
    const auto dir = fresh("missing");
    const auto r = cli({"preprocess", "--input", "/nonexistent/table.csv", "--label", "y", "--out", dir.string()});
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.err.find("/nonexistent/table.csv"), std::string::npos);
}

TEST(Cli, BadValueIsUsageError) {
    const auto dir = fresh("badvalue");
    const auto raw = raw_csv(dir);
    const auto r = cli({"preprocess", "--input", raw.string(), "--label", "target", "--split", "0.9,0.9,0.1",
                        "--out", (dir / "p").string()});
    EXPECT_EQ(r.code, 1);
}

TEST(Cli, BinaryReportsExitCodes) {
    const std::string bin = CONTAB_CLI_PATH;
    int status = std::system((bin + " pretrain --bogus > /dev/null 2>&1").c_str());
    EXPECT_EQ(WEXITSTATUS(status), 1);
    status = std::system((bin + " schema --input /nonexistent.csv --out " + fresh("bin").string() +
                          " > /dev/null 2>&1").c_str());
    EXPECT_EQ(WEXITSTATUS(status), 2);
}

TEST(Cli, SchemaWritesJson) {
    const auto dir = fresh("schema");
    const auto raw = raw_csv(dir);
    const auto r = cli({"schema", "--input", raw.string(), "--label", "target", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(dir / "schema.json");
    EXPECT_NE(text.find("color"), std::string::npos);
    EXPECT_NE(text.find("categorical"), std::string::npos);
}

TEST(Cli, FullPipeline) {
    const auto dir = fresh("pipeline");
    const auto raw = raw_csv(dir);
    const auto data = dir / "data";
    auto r = cli({"preprocess", "--input", raw.string(), "--label", "target", "--out", data.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    for (const char* f : {"train.csv", "val.csv", "test.csv", "preprocessor.json", "preprocess.config.toml"})
        EXPECT_TRUE(fs::exists(data / f)) << f;

    const auto pre = dir / "pre";
    r = cli(with({"pretrain", "--data", data.string(), "--mode", "semi", "--out", pre.string()}, kTiny));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(pre / "checkpoint.bin"));
    const auto log = slurp(pre / "loss_log.csv");
    EXPECT_EQ(log.substr(0, log.find('\n')).find("step"), 0u);

    const auto ft = dir / "ft";
    r = cli({"finetune", "--data", data.string(), "--checkpoint", (pre / "checkpoint.bin").string(), "--epochs", "2",
             "--out", ft.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(ft / "finetuned.bin"));
    EXPECT_NE(slurp(ft / "finetune_metrics.jsonl").find("split=test"), std::string::npos);

    const auto emb = dir / "emb";
    r = cli({"embed", "--data", data.string(), "--checkpoint", (pre / "checkpoint.bin").string(), "--export-mask",
             "--out", emb.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(emb / "embeddings_train.csv"));
    EXPECT_TRUE(fs::exists(emb / "mask_test.csv"));

    const auto ev = dir / "eval";
    r = cli({"eval", "--data", data.string(), "--checkpoint", (ft / "finetuned.bin").string(), "--out", ev.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto table = slurp(ev / "metrics_table.txt");
    for (const char* s : {"raw", "distilled", "concat", "finetuned"}) EXPECT_NE(table.find(s), std::string::npos) << s;
    EXPECT_TRUE(fs::exists(ev / "metrics.jsonl"));
}

TEST(Cli, EvalWithoutCheckpointNeedsRawOnly) {
    const auto dir = fresh("evalraw");
    const auto data = dir / "data";
    ASSERT_EQ(cli({"preprocess", "--input", raw_csv(dir).string(), "--label", "target", "--out", data.string()}).code,
              0);
    EXPECT_EQ(cli({"eval", "--data", data.string(), "--features", "raw", "--out", (dir / "a").string()}).code, 0);
    EXPECT_EQ(cli({"eval", "--data", data.string(), "--features", "concat", "--out", (dir / "b").string()}).code, 1);
}

TEST(Cli, RunsAreByteIdentical) {
    const auto dir = fresh("determinism");
    const auto raw = raw_csv(dir);
    std::string metrics[2], ckpt[2];
    for (int k = 0; k < 2; ++k) {
        const auto root = dir / std::to_string(k);
        const auto data = root / "data";
        ASSERT_EQ(cli({"preprocess", "--input", raw.string(), "--label", "target", "--out", data.string()}).code, 0);
        ASSERT_EQ(cli(with({"pretrain", "--data", data.string(), "--out", (root / "pre").string()}, kTiny)).code, 0);
        ASSERT_EQ(cli({"eval", "--data", data.string(), "--checkpoint", (root / "pre" / "checkpoint.bin").string(),
                       "--out", (root / "eval").string()})
                      .code,
                  0);
        metrics[k] = slurp(root / "eval" / "metrics.jsonl");
        ckpt[k] = slurp(root / "pre" / "checkpoint.bin");
    }
    EXPECT_FALSE(metrics[0].empty());
    EXPECT_EQ(metrics[0], metrics[1]);
    EXPECT_EQ(ckpt[0], ckpt[1]);
}

TEST(Cli, ConfigFileIsOverriddenByFlags) {
    const auto dir = fresh("config");
    const auto data = dir / "data";
    ASSERT_EQ(cli({"preprocess", "--input", raw_csv(dir).string(), "--label", "target", "--out", data.string()}).code,
              0);
    {
        std::ofstream f(dir / "run.toml");
        f << "epochs = 1\nbatch = 16\ntoken-dim = 4\nlayers = 1\nlambda = 0.25\n";
    }
    const auto out = dir / "pre";
    const auto r = cli({"pretrain", "--config", (dir / "run.toml").string(), "--data", data.string(), "--epochs", "2",
                        "--out", out.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto snap = slurp(out / "pretrain.config.toml");
    EXPECT_NE(snap.find("epochs=2"), std::string::npos) << snap;
    EXPECT_NE(snap.find("batch=16"), std::string::npos) << snap;
    EXPECT_NE(snap.find("lambda=0.25"), std::string::npos) << snap;

    // A snapshot replays as a config file.
    const auto again = dir / "again";
    fs::copy_file(out / "pretrain.config.toml", dir / "snap.toml");
    ASSERT_EQ(cli({"pretrain", "--config", (dir / "snap.toml").string(), "--out", again.string()}).code, 0);
    EXPECT_EQ(slurp(out / "checkpoint.bin"), slurp(again / "checkpoint.bin"));

    {
        std::ofstream f(dir / "bad.toml");
        f << "no-such-key = 3\n";
    }
    EXPECT_EQ(cli({"pretrain", "--config", (dir / "bad.toml").string(), "--data", data.string(), "--out",
                   (dir / "bad").string()})
                  .code,
              1);
}

TEST(Cli, OutputDirFromEnvironment) {
    const auto dir = fresh("env");
    const auto raw = raw_csv(dir);
    ::setenv(contab::cli::kOutputDirEnv, (dir / "from_env").string().c_str(), 1);
    const auto r = cli({"schema", "--input", raw.string(), "--label", "target"});
    ::unsetenv(contab::cli::kOutputDirEnv);
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_TRUE(fs::exists(dir / "from_env" / "schema.json"));
}

TEST(Cli, ResumeMatchesUninterruptedRun) {
    const auto dir = fresh("resume");
    const auto data = dir / "data";
    ASSERT_EQ(cli({"preprocess", "--input", raw_csv(dir).string(), "--label", "target", "--out", data.string()}).code,
              0);
    // 112 train rows / 32 per batch -> 4 steps per epoch, 8 in total.
    const auto args = with(kTiny, {"--data", data.string(), "--checkpoint-every", "4"});
    ASSERT_EQ(cli(with({"pretrain", "--out", (dir / "full").string()}, args)).code, 0);
    ASSERT_TRUE(fs::exists(dir / "full" / "checkpoint_step4.bin"));
    const auto r = cli(with({"pretrain", "--out", (dir / "resumed").string(), "--resume",
                             (dir / "full" / "checkpoint_step4.bin").string()},
                            args));
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir / "full" / "checkpoint.bin"), slurp(dir / "resumed" / "checkpoint.bin"));
}

TEST(Cli, DivergenceExitsThreeWithLastGood) {
    const auto dir = fresh("diverge");
    const auto data = dir / "data";
    ASSERT_EQ(cli({"preprocess", "--input", raw_csv(dir).string(), "--label", "target", "--out", data.string()}).code,
              0);
    const auto r = cli(with({"pretrain", "--data", data.string(), "--lr", "1e300", "--out", (dir / "pre").string()},
                            kTiny));
    EXPECT_EQ(r.code, 3);
    EXPECT_TRUE(fs::exists(dir / "pre" / "checkpoint_last_good.bin"));
}

TEST(Cli, AblateWritesTable) {
    const auto dir = fresh("ablate");
    const auto data = dir / "data";
    ASSERT_EQ(cli({"preprocess", "--input", raw_csv(dir).string(), "--label", "target", "--out", data.string()}).code,
              0);
    const auto r = cli(with({"ablate", "--data", data.string(), "--ratios", "0,0.3", "--finetune-epochs", "1", "--out",
                             (dir / "abl").string()},
                            kTiny));
    ASSERT_EQ(r.code, 0) << r.err;
    const auto text = slurp(dir / "abl" / "ablation.txt");
    EXPECT_NE(text.find("*"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "abl" / "ablation.json"));
}
