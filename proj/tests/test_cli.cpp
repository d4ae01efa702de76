// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "siftlab_cli_test";

// Small, fast settings shared by every invocation.
const std::string kSmall =
    " --set pretrain.steps=30 --set task.pretrain_size=128 --set task.finetune_train_size=64"
    " --set task.finetune_eval_size=64 --set model.hidden=16 --set model.heads=2 --set train.epochs=2"
    " --set analysis.batches=2 --set landscape.alpha_points=5 --set landscape.beta_points=3"
    " --set landscape.eval_size=32";

int run(const std::string& args) {
    const std::string cmd = std::string(SIFTLAB_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

nlohmann::json json_of(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
    }
    fs::path dir(const std::string& name) const { return kRoot / name; }
};

}  // namespace

TEST_F(Cli, ExitCodes) {
    EXPECT_EQ(run("train --set no.such.key=1 --out " + dir("bad").string()), 2);
    EXPECT_EQ(run("train --set train.rate=2 --out " + dir("bad2").string()), 2);
    EXPECT_EQ(run("frobnicate"), 2);
    EXPECT_EQ(run("merge --set run.checkpoint=/nonexistent/x.ckpt --set merge.increment=/nonexistent/y.sift --out " +
                  dir("io").string()),
              4);
    EXPECT_EQ(run("train" + kSmall + " --set train.lr=1e300 --set train.method=full --out " + dir("div").string()), 3);
    const auto summary = json_of(dir("div") / "summary.json");
    EXPECT_TRUE(summary["diverged"].get<bool>());
    EXPECT_TRUE(fs::exists(dir("div") / "metrics.csv"));
}

TEST_F(Cli, ManifestWrittenBeforeResults) {
    ASSERT_EQ(run("merge --set run.checkpoint=/nonexistent/x.ckpt --set merge.increment=y --out " + dir("m").string()), 4);
    const auto m = json_of(dir("m") / "manifest.json");
    EXPECT_EQ(m["verb"], "merge");
    EXPECT_TRUE(m["seeds"].contains("model.seed"));
    EXPECT_TRUE(m["config"].contains("train.rate"));
    EXPECT_TRUE(m.contains("siftlab_version"));
}

TEST_F(Cli, RerunFromManifestIsByteIdentical) {
    ASSERT_EQ(run("pretrain" + kSmall + " --seed 3 --out " + dir("a").string()), 0);
    ASSERT_EQ(run("pretrain --config " + (dir("a") / "config.txt").string() + " --out " + dir("b").string()), 0);
    for (const char* f : {"theta0.ckpt", "theta1.ckpt", "pretrain_loss.csv", "summary.json", "dataset.txt",
                          "manifest.json", "config.txt"})
        EXPECT_EQ(slurp(dir("a") / f), slurp(dir("b") / f)) << f;
}

TEST_F(Cli, TrainMergeRoundTrip) {
    ASSERT_EQ(run("pretrain" + kSmall + " --out " + dir("pt").string()), 0);
    const auto ckpt = (dir("pt") / "theta1.ckpt").string();
    ASSERT_EQ(run("train" + kSmall + " --set train.rate=0.05 --set train.head_dense=false --set run.checkpoint=" + ckpt +
                  " --out " + dir("tr").string()),
              0);
    for (const char* f : {"metrics.csv", "increment.sift", "final.ckpt", "memory_report.json", "mask.sifm"})
        EXPECT_TRUE(fs::exists(dir("tr") / f)) << f;
    const auto mem = json_of(dir("tr") / "memory_report.json");
    EXPECT_NEAR(mem["grad_ratio"].get<double>(), 0.05, 0.005);
    ASSERT_EQ(run("merge --set run.checkpoint=" + ckpt + " --set merge.increment=" + (dir("tr") / "increment.sift").string() +
                  " --out " + dir("mg").string()),
              0);
    // Only the masked tensors were trained, so the merged checkpoint equals the final one.
    EXPECT_EQ(slurp(dir("mg") / "merged.ckpt"), slurp(dir("tr") / "final.ckpt"));
}

TEST_F(Cli, HeadOnlyTrainsNoMaskedTensors) {
    ASSERT_EQ(run("train" + kSmall + " --set train.method=head-only --out " + dir("ho").string()), 0);
    const auto s = json_of(dir("ho") / "summary.json");
    EXPECT_TRUE(s["masked_tensors"].empty());
    for (const auto& n : s["dense_tensors"]) EXPECT_EQ(n.get<std::string>().rfind("head.", 0), 0u);
    EXPECT_FALSE(fs::exists(dir("ho") / "mask.sifm"));
}

TEST_F(Cli, AnalysisVerbs) {
    ASSERT_EQ(run("analyze-grads" + kSmall + " --out " + dir("ag").string()), 0);
    EXPECT_TRUE(fs::exists(dir("ag") / "concentration.csv"));
    EXPECT_TRUE(fs::exists(dir("ag") / "capture.csv"));
    ASSERT_EQ(run("verify-bound" + kSmall + " --out " + dir("vb").string()), 0);
    EXPECT_TRUE(json_of(dir("vb") / "bound.json")["all_hold"].get<bool>());
    EXPECT_NE(slurp(dir("vb") / "bound.csv").find("energy_fraction,abs_fraction"), std::string::npos);
    ASSERT_EQ(run("scan-landscape" + kSmall + " --threads 2 --out " + dir("sc").string()), 0);
    EXPECT_NE(slurp(dir("sc") / "scan_1d.csv").find("alpha,loss,flag"), std::string::npos);
    EXPECT_NE(slurp(dir("sc") / "scan_2d.csv").find("alpha,beta,loss,flag"), std::string::npos);
    ASSERT_EQ(run("calibrate" + kSmall + " --out " + dir("cal").string()), 0);
    EXPECT_TRUE(fs::exists(dir("cal") / "mask.sifm"));
    ASSERT_EQ(run("report --out " + dir("rep").string()), 0);
    EXPECT_NEAR(json_of(dir("rep") / "report.json")["memory"]["grad_ratio"].get<double>(), 0.01, 0.002);
}

TEST_F(Cli, CompareIdenticalMethodsAndRateSweep) {
    ASSERT_EQ(run("compare" + kSmall +
                  " --set compare.methods=sift,sift,random --set compare.rates=0.01,0.05,0.2 --set compare.seeds=0"
                  " --out " + dir("cmp").string()),
              0);
    const auto j = json_of(dir("cmp") / "compare.json");
    const auto& rows = j["rows"];
    ASSERT_EQ(rows.size(), 9u);
    for (std::size_t r = 0; r < 3; ++r) {
        EXPECT_EQ(rows[r]["accuracies"], rows[r + 3]["accuracies"]);
        EXPECT_EQ(rows[r]["trainable_elements"], rows[r + 3]["trainable_elements"]);
    }
    for (std::size_t r = 0; r + 1 < 3; ++r)
        EXPECT_LE(rows[r]["trainable_elements"].get<std::size_t>(), rows[r + 1]["trainable_elements"].get<std::size_t>());
    EXPECT_EQ(run("compare" + kSmall + " --set compare.methods=sift --out " + dir("cmp1").string()), 2);
}

TEST_F(Cli, OutputRootFromEnvironment) {
    const auto root = dir("envroot");
    const std::string cmd = "SIFTLAB_OUT=" + root.string() + " " + SIFTLAB_CLI + " report >/dev/null 2>&1";
    ASSERT_EQ(std::system(cmd.c_str()), 0);
    EXPECT_TRUE(fs::exists(root / "report" / "report.json"));
}
