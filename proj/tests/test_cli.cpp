#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "aeon/cli.hpp"

namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
protected:
    void SetUp() override {
        ::unsetenv("AEON_SEED");
        dir_ = fs::temp_directory_path() / ("aeon_cli_" + std::to_string(::getpid()) + "_" +
                                            ::testing::UnitTest::GetInstance()->current_test_info()->name());
        fs::remove_all(dir_);
        fs::create_directories(dir_);
        write(dir_ / "synth.json", R"({"num_classes": 3, "dim": 4, "samples_per_class": 30, "test_per_class": 10,
                                      "ood_pool_size": 90, "ood_offset": 3.0, "r_id": 0.3, "r_ood": 0.2, "seed": 5})");
        write(dir_ / "train.json", R"({"batch_size": 32, "warmup_epochs": 1, "total_epochs": 2, "lr": 0.05, "seed": 1,
                                      "model": {"hidden": [8], "feature_dim": 8, "projection_hidden": 8,
                                                "projection_dim": 8}})");
    }
    void TearDown() override {
        ::unsetenv("AEON_SEED");
        fs::remove_all(dir_);
    }

    static void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }
    static std::string read(const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        std::stringstream ss;
        ss << is.rdbuf();
        return ss.str();
    }

    int run(std::vector<std::string> args) {
        args.insert(args.begin(), "aeon");
        std::vector<char*> argv;
        for (std::string& a : args) argv.push_back(a.data());
        out_.str("");
        err_.str("");
        return aeon::cli::run(static_cast<int>(argv.size()), argv.data(), out_, err_);
    }

    std::string p(const std::string& name) const { return (dir_ / name).string(); }

    fs::path dir_;
    std::ostringstream out_, err_;
};

} // namespace

TEST_F(Cli, SynthTrainEvalPipeline) {
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("data/d.csv")}), 0) << err_.str();
    EXPECT_TRUE(fs::exists(dir_ / "data" / "d.meta.json"));
    EXPECT_TRUE(fs::exists(dir_ / "data" / "d.test.csv"));

    ASSERT_EQ(run({"train", "--data", p("data/d.csv"), "--config", p("train.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              0)
        << err_.str();
    const std::string log = read(dir_ / "m.jsonl");
    EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 2);
    EXPECT_TRUE(fs::exists(dir_ / "ckpt" / "model.json"));

    ASSERT_EQ(run({"eval", "--data", p("data/d.csv"), "--ckpt", p("ckpt"), "--report", p("r.json")}), 0) << err_.str();
    const nlohmann::json r = nlohmann::json::parse(read(dir_ / "r.json"));
    EXPECT_EQ(r["r_id"], 0.3);
    EXPECT_EQ(r["ece_bins"], 15);
    EXPECT_TRUE(r["ood_mask_auroc"].is_number());
}

TEST_F(Cli, SynthIsByteIdenticalOnRerun) {
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("a.csv")}), 0);
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("b.csv")}), 0);
    EXPECT_EQ(read(dir_ / "a.csv"), read(dir_ / "b.csv"));
    EXPECT_EQ(read(dir_ / "a.test.csv"), read(dir_ / "b.test.csv"));
}

TEST_F(Cli, EnvironmentSeedOverridesConfigSeed) {
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("a.csv")}), 0);
    ::setenv("AEON_SEED", "77", 1);
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("b.csv")}), 0);
    EXPECT_NE(read(dir_ / "a.csv"), read(dir_ / "b.csv"));
    EXPECT_EQ(nlohmann::json::parse(read(dir_ / "b.meta.json"))["seed"], 77);

    ASSERT_EQ(run({"train", "--data", p("b.csv"), "--config", p("train.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              0);
    EXPECT_EQ(nlohmann::json::parse(read(dir_ / "ckpt" / "train_config.json"))["seed"], 77);

    ::setenv("AEON_SEED", "not-a-number", 1);
    EXPECT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("c.csv")}), 2);
}

TEST_F(Cli, ConfigErrorsExitTwo) {
    EXPECT_EQ(run({}), 2);
    EXPECT_EQ(run({"synth", "--config", p("synth.json")}), 2);  // missing --out
    EXPECT_EQ(run({"synth", "--config", p("missing.json"), "--out", p("a.csv")}), 2);
    write(dir_ / "broken.json", "{ not json");
    EXPECT_EQ(run({"synth", "--config", p("broken.json"), "--out", p("a.csv")}), 2);
    write(dir_ / "bad_rate.json", R"({"r_id": 1.5})");
    EXPECT_EQ(run({"synth", "--config", p("bad_rate.json"), "--out", p("a.csv")}), 2);
    write(dir_ / "cfg.toml", "seed = 1");
    EXPECT_EQ(run({"synth", "--config", p("cfg.toml"), "--out", p("a.csv")}), 2);
    write(dir_ / "bad_train.json", R"({"mode": "adam"})");
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("d.csv")}), 0);
    EXPECT_EQ(run({"train", "--data", p("d.csv"), "--config", p("bad_train.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              2);
    write(dir_ / "sweep.json", R"({"axes": {"no_such": [1]}, "seeds": [1], "data": "d.csv"})");
    EXPECT_EQ(run({"sweep", "--spec", p("sweep.json"), "--out", p("sw")}), 2);
    EXPECT_FALSE(err_.str().empty());
}

TEST_F(Cli, DataErrorsExitThree) {
    EXPECT_EQ(run({"train", "--data", p("nope.csv"), "--config", p("train.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              3);
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("d.csv")}), 0);
    fs::remove(dir_ / "d.meta.json");
    EXPECT_EQ(run({"train", "--data", p("d.csv"), "--config", p("train.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              3);
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("d.csv")}), 0);
    EXPECT_EQ(run({"eval", "--data", p("d.csv"), "--ckpt", p("no_ckpt"), "--report", p("r.json")}), 3);
}

TEST_F(Cli, NumericFailureExitsFour) {
    ASSERT_EQ(run({"synth", "--config", p("synth.json"), "--out", p("d.csv")}), 0);
    write(dir_ / "hot.json", R"({"batch_size": 32, "warmup_epochs": 1, "total_epochs": 6, "lr": 10000.0,
                                "cosine": false, "model": {"hidden": [8], "feature_dim": 8}})");
    EXPECT_EQ(run({"train", "--data", p("d.csv"), "--config", p("hot.json"), "--log", p("m.jsonl"), "--ckpt",
                   p("ckpt")}),
              4)
        << err_.str();
}

TEST_F(Cli, SweepWritesAggregate) {
    write(dir_ / "sweep.json", R"({"synth": {"num_classes": 3, "dim": 4, "samples_per_class": 20, "test_per_class": 5,
                                            "ood_pool_size": 60, "ood_offset": 3.0, "r_id": 0.2, "r_ood": 0.2},
                                  "base": {"batch_size": 32, "warmup_epochs": 1, "total_epochs": 2,
                                           "model": {"hidden": [8], "feature_dim": 8, "projection_hidden": 8,
                                                     "projection_dim": 8}},
                                  "axes": {"lr": [0.01, 0.05]}, "seeds": [1, 2]})");
    ASSERT_EQ(run({"sweep", "--spec", p("sweep.json"), "--out", p("sw"), "--workers", "2"}), 0) << err_.str();
    const std::string csv = read(dir_ / "sw" / "aggregate.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
}

TEST_F(Cli, HelpExitsZero) {
    EXPECT_EQ(run({"--help"}), 0);
    EXPECT_NE(out_.str().find("synth"), std::string::npos);
}
