#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <sys/wait.h>

#include "gradeshi/cli.hpp"
#include "gradeshi/dataset.hpp"
#include "gradeshi/synth.hpp"
#include "support/temp_dir.hpp"

using namespace gradeshi;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> lines;
    std::istringstream in(text);
    for (std::string line; std::getline(in, line);) lines.push_back(line);
    return lines;
}

std::vector<std::string> lines_starting(const std::string& text, const std::string& prefix) {
    std::vector<std::string> out;
    for (auto& l : lines_of(text))
        if (l.rfind(prefix, 0) == 0) out.push_back(l);
    return out;
}

double field(const std::string& line, const std::string& key) {
    const auto at = line.find(key + "=");
    if (at == std::string::npos) return -1.0;
    return std::stod(line.substr(at + key.size() + 1));
}

// Six classes (two vowels, two consonants, one numeral, one compound) of
// synthetic strokes, shared by every test in the suite.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new check::TempDir;
        synth::TreeSpec spec;
        spec.image_size = 24;
        spec.seed = 3;
        spec.per_class = {10, 10, 10, 10};
        spec.manifest = Manifest{{{"a", Category::vowel},
                                  {"aa", Category::vowel},
                                  {"ka", Category::consonant},
                                  {"kha", Category::consonant},
                                  {"one", Category::numeric},
                                  {"kka", Category::compound}}};
        synth::write_tree(root(), spec);
        std::ofstream(config()) << nlohmann::json{{"image_size", 18},
                                                  {"stage_widths", {6, 8}},
                                                  {"dense_units", 24},
                                                  {"epochs", 1},
                                                  {"batch_size", 8},
                                                  {"lr", 0.003},
                                                  {"seed", 4}}
                                          .dump();
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }

    static fs::path root() { return dir_->path() / "tree"; }
    static fs::path manifest() { return root() / "manifest.json"; }
    static fs::path config() { return dir_->path() / "run.json"; }
    static std::string out_dir(const std::string& name) { return (dir_->path() / name).string(); }

    static std::vector<std::string> train_args(const std::string& out, std::vector<std::string> extra = {}) {
        std::vector<std::string> args = {"train",        "--data",   root().string(), "--manifest",
                                         manifest().string(), "--config", config().string(), "--out",
                                         out};
        args.insert(args.end(), extra.begin(), extra.end());
        return args;
    }

    static check::TempDir* dir_;
};

check::TempDir* Cli::dir_ = nullptr;

} // namespace

TEST_F(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(run({}).code, kExitUsage);
    EXPECT_EQ(run({"bogus"}).code, kExitUsage);
    EXPECT_EQ(run({"--help"}).code, kExitOk);
    EXPECT_EQ(run(train_args(out_dir("u1"), {"--arch", "vgg16"})).code, kExitUsage);
    EXPECT_EQ(run(train_args(out_dir("u2"), {"--category", "punctuation"})).code, kExitUsage);
    EXPECT_EQ(run({"split", "--data", root().string(), "--manifest", manifest().string(), "--fraction", "0", "--out",
                   out_dir("u3")})
                  .code,
              kExitUsage);
    EXPECT_EQ(run({"split", "--manifest", manifest().string(), "--out", out_dir("u4")}).code, kExitUsage);
    EXPECT_EQ(run({"train", "--epochs", "many"}).code, kExitUsage);
    EXPECT_FALSE(fs::exists(out_dir("u1")));
}

TEST_F(Cli, DataErrorsExitOne) {
    const auto r = run({"split", "--data", (dir_->path() / "missing").string(), "--manifest", manifest().string(),
                        "--out", out_dir("d1")});
    EXPECT_EQ(r.code, kExitRuntime);
    EXPECT_FALSE(r.err.empty());
}

TEST_F(Cli, SplitWritesListingsReproducibly) {
    std::vector<std::string> args = {"split", "--data", root().string(), "--manifest", manifest().string(),
                                     "--seed", "9", "--out", out_dir("split1")};
    const auto r = run(args);
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_EQ(r.out, "train=48 test=12\n");
    EXPECT_EQ(lines_of(slurp(fs::path(out_dir("split1")) / "train.txt")).size(), 48u);
    EXPECT_EQ(lines_of(slurp(fs::path(out_dir("split1")) / "test.txt")).size(), 12u);
    args.back() = out_dir("split2");
    ASSERT_EQ(run(args).code, kExitOk);
    for (const char* f : {"train.txt", "test.txt"}) {
        EXPECT_EQ(slurp(fs::path(out_dir("split1")) / f), slurp(fs::path(out_dir("split2")) / f)) << f;
    }
}

TEST_F(Cli, TrainWritesArtifactsAndHonoursOverrides) {
    const auto r = run(train_args(out_dir("train1"), {"--epochs", "3"}));
    ASSERT_EQ(r.code, kExitOk) << r.err;
    const fs::path dir = out_dir("train1");
    for (const char* f : {"model.ckpt", "metrics.csv", "config.json", "history.json", "timing.log", "train.txt",
                          "test.txt"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    // --epochs wins over the file's value of 1.
    EXPECT_EQ(lines_of(slurp(dir / "metrics.csv")).size(), 4u);
    EXPECT_EQ(lines_starting(r.out, "epoch ").size(), 3u);
    const auto echo = nlohmann::json::parse(slurp(dir / "config.json"));
    EXPECT_EQ(echo.at("epochs"), 3);
    EXPECT_EQ(echo.at("image_size"), 18);
    EXPECT_EQ(echo.at("stage_widths"), nlohmann::json({6, 8}));
    EXPECT_EQ(echo.at("batch_size"), 8);
    EXPECT_EQ(echo.at("arch"), "simple-cnn");
    EXPECT_NE(r.out.find("train=48 test=12 classes=6"), std::string::npos) << r.out;
}

TEST_F(Cli, TrainIsByteReproducible) {
    ASSERT_EQ(run(train_args(out_dir("rep1"), {"--epochs", "2"})).code, kExitOk);
    ASSERT_EQ(run(train_args(out_dir("rep2"), {"--epochs", "2"})).code, kExitOk);
    for (const char* f : {"model.ckpt", "metrics.csv", "history.json", "train.txt", "test.txt"}) {
        EXPECT_EQ(slurp(fs::path(out_dir("rep1")) / f), slurp(fs::path(out_dir("rep2")) / f)) << f;
    }
    auto a = nlohmann::json::parse(slurp(fs::path(out_dir("rep1")) / "config.json"));
    auto b = nlohmann::json::parse(slurp(fs::path(out_dir("rep2")) / "config.json"));
    a.erase("out");
    b.erase("out");
    EXPECT_EQ(a, b);
}

TEST_F(Cli, ConfigFileRejectsUnknownKeys) {
    const auto bad = dir_->path() / "bad.json";
    std::ofstream(bad) << R"({"epochs": 1, "learning_rate": 0.1})";
    const auto r = run({"train", "--data", root().string(), "--manifest", manifest().string(), "--config",
                        bad.string(), "--out", out_dir("bad")});
    EXPECT_EQ(r.code, kExitUsage);
    EXPECT_NE(r.err.find("learning_rate"), std::string::npos) << r.err;
}

TEST_F(Cli, ResnetFreezeIsReported) {
    const auto r = run(train_args(out_dir("resnet"), {"--arch", "mini-resnet", "--image-size", "24",
                                                      "--freeze-prefix", "3"}));
    ASSERT_EQ(r.code, kExitOk) << r.err;
    EXPECT_NE(r.out.find("frozen blocks: 3 of 5"), std::string::npos) << r.out;
    const auto too_many = run(train_args(out_dir("resnet2"), {"--arch", "mini-resnet", "--image-size", "24",
                                                              "--freeze-prefix", "6"}));
    EXPECT_EQ(too_many.code, kExitRuntime);
    EXPECT_NE(too_many.err.find("freeze prefix"), std::string::npos) << too_many.err;
}

TEST_F(Cli, EvaluatePredictAndExport) {
    const fs::path dir = out_dir("eval");
    ASSERT_EQ(run(train_args(dir.string(), {"--epochs", "4"})).code, kExitOk);
    const auto ckpt = (dir / "model.ckpt").string();

    const auto e = run({"evaluate", "--checkpoint", ckpt, "--listing", (dir / "test.txt").string()});
    ASSERT_EQ(e.code, kExitOk) << e.err;
    const auto summary = lines_starting(e.out, "loss=");
    ASSERT_EQ(summary.size(), 1u) << e.out;
    const double acc = field(summary[0], "acc");
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    // The metrics file's last val_acc is the same evaluation.
    const auto csv = lines_of(slurp(dir / "metrics.csv"));
    EXPECT_EQ(csv.back().substr(csv.back().rfind(',') + 1), summary[0].substr(summary[0].find("acc=") + 4));
    EXPECT_EQ(lines_starting(e.out, "category=").size(), 4u) << e.out;
    // Batch size does not change the result.
    const auto e1 = run({"evaluate", "--checkpoint", ckpt, "--listing", (dir / "test.txt").string(), "--batch-size",
                         "1"});
    EXPECT_EQ(lines_starting(e1.out, "loss=")[0], summary[0]);

    const auto image = lines_of(slurp(dir / "train.txt")).front();
    const auto image_path = image.substr(0, image.rfind(','));
    const auto all = run({"predict", "--checkpoint", ckpt, "--image", image_path, "--top-k", "6"});
    ASSERT_EQ(all.code, kExitOk) << all.err;
    const auto ranked = lines_of(all.out);
    ASSERT_EQ(ranked.size(), 6u);
    double total = 0.0, previous = 2.0;
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        std::istringstream row(ranked[i]);
        std::size_t rank;
        std::string name;
        double p;
        row >> rank >> name >> p;
        EXPECT_EQ(rank, i + 1);
        EXPECT_LE(p, previous);
        previous = p;
        total += p;
    }
    EXPECT_NEAR(total, 1.0, 1e-4);
    const auto top = run({"predict", "--checkpoint", ckpt, "--image", image_path, "--top-k", "1"});
    ASSERT_EQ(lines_of(top.out).size(), 1u);
    EXPECT_EQ(lines_of(top.out)[0], ranked[0]);
    EXPECT_EQ(run({"predict", "--checkpoint", ckpt, "--image", image_path, "--top-k", "0"}).code, kExitUsage);
    EXPECT_EQ(run({"predict", "--checkpoint", ckpt, "--image", image_path, "--top-k", "7"}).code, kExitUsage);
    std::ofstream(dir / "junk.png") << "junk";
    EXPECT_EQ(run({"predict", "--checkpoint", ckpt, "--image", (dir / "junk.png").string()}).code, kExitRuntime);

    const auto csv_out = dir / "exported.csv";
    ASSERT_EQ(run({"export-metrics", "--history", (dir / "history.json").string(), "--out", csv_out.string()}).code,
              kExitOk);
    EXPECT_EQ(slurp(csv_out), slurp(dir / "metrics.csv"));

    std::ofstream(dir / "empty.txt").close();
    EXPECT_EQ(run({"evaluate", "--checkpoint", ckpt, "--listing", (dir / "empty.txt").string()}).code, kExitUsage);
    std::ofstream(dir / "wide.txt") << image_path << ",9\n";
    EXPECT_EQ(run({"evaluate", "--checkpoint", ckpt, "--listing", (dir / "wide.txt").string()}).code, kExitRuntime);
}

TEST_F(Cli, TransferFromTrainedBase) {
    const fs::path base = out_dir("base");
    ASSERT_EQ(run(train_args(base.string(), {"--arch", "mini-mobilenet", "--image-size", "32"})).code, kExitOk);
    const auto ckpt = (base / "model.ckpt").string();
    auto args = [&](const std::string& out, std::vector<std::string> extra) {
        // No --config: architecture settings come from the base checkpoint.
        std::vector<std::string> a = {"transfer", "--base", ckpt, "--data", root().string(), "--manifest",
                                      manifest().string(), "--epochs", "1", "--out", out};
        a.insert(a.end(), extra.begin(), extra.end());
        return a;
    };
    const auto t = run(args(out_dir("ft"), {"--category", "vowel", "--freeze-prefix", "12", "--freeze-granularity",
                                            "layer"}));
    ASSERT_EQ(t.code, kExitOk) << t.err;
    EXPECT_NE(t.out.find("classes=2"), std::string::npos) << t.out;
    EXPECT_NE(t.out.find("frozen layers: 12 of"), std::string::npos) << t.out;
    const auto echo = nlohmann::json::parse(slurp(fs::path(out_dir("ft")) / "config.json"));
    EXPECT_EQ(echo.at("arch"), "mini-mobilenet");
    EXPECT_EQ(echo.at("image_size"), 32);
    EXPECT_EQ(echo.at("base"), ckpt);
    EXPECT_EQ(echo.at("stage_widths"), nlohmann::json({6, 8}));
    EXPECT_EQ(echo.at("dense_units"), 24);

    EXPECT_EQ(run(args(out_dir("ft0"), {"--category", "vowel"})).code, kExitOk);
    EXPECT_EQ(run(args(out_dir("ft_big"), {"--freeze-prefix", "999", "--freeze-granularity", "layer"})).code,
              kExitRuntime);
    EXPECT_EQ(run(args(out_dir("ft_arch"), {"--arch", "simple-cnn"})).code, kExitRuntime);
}

#ifdef GRADESHI_TOOL_PATH
TEST_F(Cli, ProcessExitStatus) {
    auto status = [](const std::string& cmd) {
        const int raw = std::system((cmd + " >/dev/null 2>&1").c_str());
        return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    const std::string tool = GRADESHI_TOOL_PATH;
    EXPECT_EQ(status(tool + " --help"), 0);
    EXPECT_EQ(status(tool + " train --arch nope"), 2);
    EXPECT_EQ(status(tool + " split --data /nonexistent/dir --out " + out_dir("p1")), 1);
}
#endif
