#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "fidn/checkpoint.hpp"
#include "fidn/cli.hpp"
#include "fidn/data.hpp"
#include "fidn/evaluate.hpp"
#include "fidn/model.hpp"

namespace fs = std::filesystem;
using namespace fidn;

namespace {

struct CliResult {
  int code;
  std::string out, err;
};

CliResult fidn_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), {}};
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream(p, std::ios::binary) << text;
}

std::string last_line(const std::string& s) {
  auto t = s;
  while (!t.empty() && t.back() == '\n') t.pop_back();
  return t.substr(t.rfind('\n') + 1);
}

const char* kSpec =
    "identities = 4\ntrain_per_identity = 3\nprobe_per_identity = 2\n"
    "distractor_identities = 3\nheight = 16\nwidth = 16\nattributes = 4\nseed = 5\n";

const char* kConfig =
    "input_height = 16\ninput_width = 16\ntrunk = 4p,6\nfc_width = 8\nbatch_size = 4\nepochs = 2\n";

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("fidn_cli_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    fs::create_directories(root_);
    spit(root_ / "spec.txt", kSpec);
    spit(root_ / "run.cfg", kConfig);
    ASSERT_EQ(fidn_run({"synth", "--spec", (root_ / "spec.txt").string(), "--out", (root_ / "data").string()}).code, 0);
    ASSERT_EQ(train("model.ckpt", {}).code, 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static CliResult train(const std::string& out, std::vector<std::string> extra) {
    std::vector<std::string> a{"train", "--config", (root_ / "run.cfg").string(), "--data", (root_ / "data").string(),
                               "--out", (root_ / out).string(), "--log", "none"};
    a.insert(a.end(), extra.begin(), extra.end());
    return fidn_run(a);
  }
  static std::string data(const std::string& f) { return (root_ / "data" / f).string(); }

  static inline fs::path root_;
};

}  // namespace

TEST_F(Cli, StatusLineAlwaysLast) {
  EXPECT_EQ(last_line(fidn_run({"--help"}).out), "STATUS: OK");
  const auto bad = fidn_run({"nonsense"});
  EXPECT_EQ(bad.code, cli::kExitUsage);
  EXPECT_EQ(last_line(bad.out), "STATUS: FAIL");
  EXPECT_EQ(fidn_run({}).code, cli::kExitUsage);
}

TEST_F(Cli, SynthDeterministic) {
  ASSERT_EQ(fidn_run({"synth", "--spec", (root_ / "spec.txt").string(), "--out", (root_ / "again").string()}).code, 0);
  for (const char* f : {"train.manifest", "probe.manifest", "images/train/id0001_002.tnsr", "masks/attr3.tnsr"}) {
    ASSERT_TRUE(fs::exists(root_ / "again" / f)) << f;
    EXPECT_EQ(slurp(root_ / "again" / f), slurp(root_ / "data" / f)) << f;
  }
}

TEST_F(Cli, SynthOverlappingPatchesRejected) {
  spit(root_ / "overlap.txt", std::string(kSpec) + "attributes = 2\npatch.0 = 0,0,4,4\npatch.1 = 2,2,4,4\n");
  const auto r = fidn_run({"synth", "--spec", (root_ / "overlap.txt").string(), "--out", (root_ / "ov").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("overlap"), std::string::npos) << r.err;
}

TEST_F(Cli, TrainZeroEpochsIsFreshInit) {
  ASSERT_EQ(train("zero.ckpt", {"--epochs", "0"}).code, 0);
  const auto cp = load_checkpoint(root_ / "zero.ckpt");
  const auto fresh = build_model(cp.params.config);
  for (const auto& [name, t] : fresh.tensors) EXPECT_TRUE(bit_equal(t, cp.params.tensors.at(name))) << name;
}

TEST_F(Cli, TrainDeterministic) {
  ASSERT_EQ(train("again.ckpt", {}).code, 0);
  EXPECT_EQ(slurp(root_ / "again.ckpt"), slurp(root_ / "model.ckpt"));
}

TEST_F(Cli, TrainPrecedenceFileFlagSet) {
  const auto r = train("prec.ckpt", {"--epochs", "1", "--set", "epochs=0", "--lambda-id", "0.5"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("config: epochs = 0\n"), std::string::npos);
  EXPECT_NE(r.out.find("config: lambda_id = 0.5\n"), std::string::npos);
  EXPECT_NE(r.out.find("config: batch_size = 4\n"), std::string::npos);  // from the file
  EXPECT_EQ(r.out.find("epoch 0"), std::string::npos);
}

TEST_F(Cli, TrainRejectsBadConfigBeforeWriting) {
  auto r = train("bad.ckpt", {"--set", "classes=9"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(root_ / "bad.ckpt"));
  r = train("bad.ckpt", {"--set", "no_such_key=1"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  r = train("bad.ckpt", {"--mode", "sideways"});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_FALSE(fs::exists(root_ / "bad.ckpt"));
}

TEST_F(Cli, TrainPrintsKernelAndFusion) {
  const auto r = train("sep.ckpt", {"--mode", "separate-id", "--epochs", "0"});
  ASSERT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("config: resolved fusion = off"), std::string::npos);
  EXPECT_NE(r.out.find("config: kernels = "), std::string::npos);
}

TEST_F(Cli, EvalSelfGalleryIsPerfect) {
  const auto r = fidn_run({"eval", "--ckpt", (root_ / "model.ckpt").string(), "--gallery", data("gallery.manifest"),
                           "--probe", data("gallery.manifest"), "--report", (root_ / "self").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("rank1: 1.000\n"), std::string::npos);
}

TEST_F(Cli, EvalReportFilesAgreeAndDistractorsNeverHelp) {
  const auto ck = (root_ / "model.ckpt").string();
  ASSERT_EQ(fidn_run({"eval", "--ckpt", ck, "--gallery", data("gallery.manifest"), "--probe",
                      data("probe.manifest"), "--report", (root_ / "plain").string()})
                .code,
            0);
  const auto r = fidn_run({"eval", "--ckpt", ck, "--gallery", data("gallery.manifest"), "--probe",
                           data("probe.manifest"), "--distractors", data("distractor.manifest"), "--report",
                           (root_ / "dis").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto plain = parse_report_text(slurp(root_ / "plain" / "report.txt"));
  const auto dis = parse_report_text(slurp(root_ / "dis" / "report.txt"));
  EXPECT_LE(dis.rank1, plain.rank1);
  EXPECT_EQ(dis.distractor_count, 6u);
  EXPECT_EQ(dis.gallery_size, 4u + 6u);
  EXPECT_EQ(parse_cmc_csv(slurp(root_ / "dis" / "cmc.csv")).hit_rates, dis.cmc.hit_rates);
  EXPECT_EQ(dis.cmc.at(1), dis.rank1);
  EXPECT_TRUE(fs::file_size(root_ / "dis" / "cmc.svg") > 0);
  char line[32];
  std::snprintf(line, sizeof line, "rank1: %.3f\n", dis.rank1);
  EXPECT_NE(r.out.find(line), std::string::npos);
}

TEST_F(Cli, EvalShapeMismatch) {
  spit(root_ / "big.cfg", "input_height = 32\ninput_width = 32\ntrunk = 4p,6\nfc_width = 8\n");
  // Checkpoint built for 32x32 fed with 16x16 images.
  NetConfig n;
  n.trunk = parse_trunk("4p,6");
  n.fc_width = 8;
  n.num_attributes = 4;
  n.num_classes = 4;
  save_checkpoint(root_ / "big.ckpt", build_model(n));
  const auto r = fidn_run({"eval", "--ckpt", (root_ / "big.ckpt").string(), "--gallery", data("gallery.manifest"),
                           "--probe", data("probe.manifest"), "--report", (root_ / "x").string()});
  EXPECT_EQ(r.code, cli::kExitUsage);
  EXPECT_NE(r.err.find("expects"), std::string::npos);
}

TEST_F(Cli, CamPgmSizeAndQuantisation) {
  const auto ck = (root_ / "model.ckpt").string();
  const auto img = data("images/probe/id0000_000.tnsr");
  ASSERT_EQ(fidn_run({"cam", "--ckpt", ck, "--image", img, "--attr", "1", "--out", (root_ / "c.tnsr").string()}).code, 0);
  const auto r = fidn_run({"cam", "--ckpt", ck, "--image", img, "--attr", "1", "--out", (root_ / "c.pgm").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string pgm = slurp(root_ / "c.pgm");
  const std::string header = "P5\n16 16\n255\n";
  ASSERT_EQ(pgm.substr(0, header.size()), header);
  ASSERT_EQ(pgm.size(), header.size() + 256);
  const auto map = load_tnsr(root_ / "c.tnsr");
  const std::size_t hf = map.dim(0), wf = map.dim(1);
  for (std::size_t y = 0; y < 16; ++y)
    for (std::size_t x = 0; x < 16; ++x) {
      const double v = map[(y * hf / 16) * wf + x * wf / 16];
      const int px = static_cast<unsigned char>(pgm[header.size() + y * 16 + x]);
      EXPECT_LE(std::abs(px / 255.0 - v), 0.5 / 255.0 + 1e-9);
    }
  EXPECT_EQ(fidn_run({"cam", "--ckpt", ck, "--image", img, "--attr", "4", "--out", (root_ / "d.pgm").string()}).code,
            cli::kExitUsage);
}

TEST_F(Cli, VerifyPassesAndFaultFails) {
  const auto ok = fidn_run({"verify"});
  EXPECT_EQ(ok.code, 0) << ok.out;
  EXPECT_NE(ok.out.find("failed: 0"), std::string::npos);
  const auto bad = fidn_run({"verify", "--inject-fault", "softmax"});
  EXPECT_EQ(bad.code, cli::kExitNumerical);
  EXPECT_EQ(last_line(bad.out), "STATUS: FAIL");
  EXPECT_EQ(fidn_run({"verify", "--inject-fault", "nope"}).code, cli::kExitUsage);
}
