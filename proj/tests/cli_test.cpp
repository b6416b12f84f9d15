#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "samamba/train.hpp"
#include "test_util.hpp"

using namespace samamba;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string output;
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + (env.empty() ? "" : " ") + SAMAMBA_CLI_PATH + " " + args + " 2>&1";
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  for (std::size_t n; (n = fread(buf, 1, sizeof buf, p)) > 0;) r.output.append(buf, n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> key_values(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);)
    if (const auto eq = line.find('='); eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  return out;
}

// Epoch records from train.log with the wall-clock field removed.
std::vector<std::string> epoch_lines(const fs::path& log) {
  std::vector<std::string> out;
  std::istringstream in(slurp(log));
  for (std::string line; std::getline(in, line);)
    if (line.rfind("epoch=", 0) == 0) out.push_back(line.substr(0, line.find(" seconds=")));
  return out;
}

double field(const std::string& line, const std::string& key) {
  const auto at = line.find(" " + key + "=");
  return std::stod(line.substr(at + key.size() + 2));
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root() { return fs::temp_directory_path() / "samamba_cli_test"; }
  static fs::path data() { return root() / "data"; }

  static void SetUpTestSuite() {
    fs::remove_all(root());
    const auto r = cli("--seed 7 --out " + data().string() + " generate --n 4,2,2 --size 64");
    ASSERT_EQ(r.code, 0) << r.output;
  }
};

}  // namespace

TEST_F(Cli, GenerateCountsHashAndRejections) {
  const auto dir = root() / "gen";
  const auto a = cli("--seed 7 --out " + dir.string() + " generate --n 8,2,2 --size 64");
  ASSERT_EQ(a.code, 0) << a.output;
  EXPECT_NE(a.output.find("samples=12"), std::string::npos) << a.output;
  EXPECT_EQ(read_manifest(dir.string()).entries.size(), 12u);
  const auto again = cli("--seed 7 --out " + dir.string() + " generate --n 8,2,2 --size 64 --force");
  ASSERT_EQ(again.code, 0);
  EXPECT_EQ(again.output, a.output);
  EXPECT_EQ(cli("--seed 7 --out " + dir.string() + " generate --n 8,2,2 --size 64").code, 3);
  const auto bad = cli("--out " + (root() / "bad").string() + " generate --size 48");
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.output.find("multiple of 32"), std::string::npos);
  EXPECT_FALSE(fs::exists(root() / "bad"));
}

TEST(CliUsage, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("--precision f16 bench").code, 2);
  EXPECT_EQ(cli("bench --size 64 --reps 1", "SAMAMBA_THREADS=abc").code, 2);
  EXPECT_EQ(cli("eval --data /nonexistent/samamba --from-predictions").code, 3);
  EXPECT_EQ(cli("verify --inject-fault no_such_op --skip-model").code, 2);
}

TEST(Schedule, DefaultProtocol) {
  const RunConfig run;
  EXPECT_EQ(run.epochs, 300u);
  EXPECT_EQ(run.batch, 2u);
  EXPECT_DOUBLE_EQ(run.lr_at(0), 1e-4);
  EXPECT_DOUBLE_EQ(run.lr_at(99), 1e-4);
  EXPECT_DOUBLE_EQ(run.lr_at(150), 1e-5);
  EXPECT_DOUBLE_EQ(run.lr_at(250), 1e-6);
  EXPECT_EQ(parse_run_config(serialize(run)).lr, run.lr);
}

TEST_F(Cli, TrainWritesConfigLogCheckpointAndRelaunches) {
  const auto out = root() / "train";
  const auto r = cli("--seed 3 --precision f64 --out " + out.string() + " train --data " + data().string() +
                     " --epochs 2 --max-train 2 --max-eval 2");
  ASSERT_EQ(r.code, 0) << r.output;
  ASSERT_TRUE(fs::exists(out / "best.ckpt"));
  const auto first = epoch_lines(out / "train.log");
  ASSERT_EQ(first.size(), 2u);
  const auto cfg = parse_run_config(slurp(out / "run.cfg"));
  EXPECT_EQ(cfg.epochs, 2u);
  EXPECT_EQ(cfg.seed, 3u);
  EXPECT_EQ(cfg.precision, "f64");
  EXPECT_EQ(cfg.out_dir, out.string());
  // The resolved config alone reproduces the run; the log is append-only.
  const auto again = cli("--config " + (out / "run.cfg").string() + " train");
  ASSERT_EQ(again.code, 0) << again.output;
  const auto both = epoch_lines(out / "train.log");
  ASSERT_EQ(both.size(), 4u);
  EXPECT_EQ(both[2], first[0]);
  EXPECT_EQ(both[3], first[1]);
}

TEST_F(Cli, EvalOfGroundTruthAndEmptyPredictions) {
  const auto m = read_manifest(data().string());
  const auto test = m.split("test");
  for (const auto& e : test) {
    auto pred = data() / e.image;
    pred.replace_extension(".pred.pgm");
    fs::copy_file(data() / e.mask, pred, fs::copy_options::overwrite_existing);
  }
  const auto out = root() / "eval_gt";
  ASSERT_EQ(cli("--out " + out.string() + " eval --data " + data().string() + " --from-predictions").code, 0);
  const auto kv = key_values(slurp(out / "metrics.txt"));
  EXPECT_EQ(kv.at("iou"), "1");
  EXPECT_EQ(kv.at("niou"), "1");
  EXPECT_EQ(kv.at("f1"), "1");
  EXPECT_EQ(kv.at("n_samples"), "2");
  EXPECT_NE(slurp(out / "metrics_table.txt").find("iou\tniou\tf1\tn_samples"), std::string::npos);

  for (const auto& e : test) {
    auto pred = data() / e.image;
    pred.replace_extension(".pred.pgm");
    const auto mask = load_pgm((data() / e.mask).string());
    save_pgm(pred.string(), GrayImage{mask.height, mask.width, std::vector<std::uint8_t>(mask.pixels.size(), 0)});
  }
  ASSERT_EQ(cli("--out " + out.string() + " eval --data " + data().string() + " --from-predictions").code, 0);
  EXPECT_EQ(key_values(slurp(out / "metrics.txt")).at("iou"), "0");
}

TEST_F(Cli, PredictThenEvalMatchesModelEval) {
  const auto out = root() / "pipeline";
  ASSERT_EQ(cli("--seed 1 --precision f64 --out " + out.string() + " train --data " + data().string() +
                " --epochs 1 --max-train 2 --max-eval 2")
                .code,
            0);
  const auto ckpt = (out / "best.ckpt").string();
  ASSERT_EQ(cli("--precision f64 --out " + (out / "direct").string() + " eval --data " + data().string() +
                " --checkpoint " + ckpt)
                .code,
            0);
  std::string images;
  for (const auto& e : read_manifest(data().string()).split("test")) images += " " + (data() / e.image).string();
  ASSERT_EQ(cli("--precision f64 predict --checkpoint " + ckpt + images).code, 0);
  const auto first = slurp(data() / "images" / "test_000006.pred.pgm");
  ASSERT_EQ(cli("--precision f64 predict --checkpoint " + ckpt + images).code, 0);
  EXPECT_EQ(slurp(data() / "images" / "test_000006.pred.pgm"), first);
  const auto pred = load_pgm((data() / "images" / "test_000006.pred.pgm").string());
  EXPECT_EQ(pred.height, 64u);
  EXPECT_EQ(pred.width, 64u);
  ASSERT_EQ(cli("--out " + (out / "files").string() + " eval --data " + data().string() + " --from-predictions").code, 0);
  EXPECT_EQ(slurp(out / "files" / "metrics.txt"), slurp(out / "direct" / "metrics.txt"));

  // An unreadable input fails alone; the rest are still written.
  fs::remove(data() / "images" / "test_000006.pred.pgm");
  const auto partial = cli("--precision f64 predict --checkpoint " + ckpt + " /nonexistent/x.pgm" + images);
  EXPECT_EQ(partial.code, 3);
  EXPECT_NE(partial.output.find("/nonexistent/x.pgm"), std::string::npos);
  EXPECT_TRUE(fs::exists(data() / "images" / "test_000006.pred.pgm"));
}

TEST_F(Cli, EvalRejectsMismatchedConfig) {
  const auto out = root() / "mismatch";
  ASSERT_EQ(cli("--out " + out.string() + " train --data " + data().string() + " --epochs 1 --max-train 2 --max-eval 1")
                .code,
            0);
  std::ofstream(out / "other.cfg") << "csi_heads = 2\ndpcf_segments = 2\n";
  const auto r = cli("--config " + (out / "other.cfg").string() + " --out " + out.string() + " eval --data " +
                     data().string() + " --checkpoint " + (out / "best.ckpt").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.output.find("csi_heads"), std::string::npos) << r.output;
  EXPECT_NE(r.output.find("dpcf_segments"), std::string::npos) << r.output;
}

TEST_F(Cli, LossDecreasesOverTenEpochs) {
  // 40 steps at the default 1e-4 barely move the loss off its prior; a 10x
  // rate makes the trend visible inside the smoke budget.
  const auto fresh = root() / "trend_data";
  ASSERT_EQ(cli("--seed 21 --out " + fresh.string() + " generate --n 8,1,1 --size 64").code, 0);
  std::vector<double> drops;
  for (int seed = 0; seed < 3; ++seed) {
    const auto out = root() / ("trend" + std::to_string(seed));
    const auto r = cli("--seed " + std::to_string(seed) + " --out " + out.string() + " train --data " + fresh.string() +
                       " --epochs 10 --lr 1e-3 --max-eval 1");
    ASSERT_EQ(r.code, 0) << r.output;
    const auto lines = epoch_lines(out / "train.log");
    ASSERT_EQ(lines.size(), 10u);
    drops.push_back(field(lines.front(), "loss") - field(lines.back(), "loss"));
  }
  std::sort(drops.begin(), drops.end());
  EXPECT_GT(drops[1], 0);
}

TEST_F(Cli, SweepTableStructure) {
  const auto out = root() / "sweep";
  const auto r = cli("--out " + out.string() + " train --data " + data().string() +
                     " --sweep segments --epochs 1 --max-train 2 --max-eval 1");
  ASSERT_EQ(r.code, 0) << r.output;
  std::istringstream in(slurp(out / "sweep_segments.tsv"));
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 6u);
  EXPECT_EQ(lines[0][0], '#');
  EXPECT_EQ(lines[1], "segments\tiou\tniou\tf1\tparams");
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(lines[2 + i].substr(0, lines[2 + i].find('\t')), std::to_string(1u << i));
}

TEST(CliVerify, CleanRunAndInjectedFault) {
  const auto clean = cli("verify --skip-model --seeds 1");
  EXPECT_EQ(clean.code, 0) << clean.output;
  EXPECT_NE(clean.output.find("suite=ssm-duality status=PASS"), std::string::npos) << clean.output;
  const auto fault = cli("verify --skip-model --seeds 1 --inject-fault silu");
  EXPECT_EQ(fault.code, 1);
  EXPECT_NE(fault.output.find("silu"), std::string::npos);
  EXPECT_NE(fault.output.find("status=FAIL"), std::string::npos);
}

TEST(CliBench, CountsAreMonotone) {
  const auto r = cli("bench --size 64 --reps 1", "SAMAMBA_THREADS=2");
  ASSERT_EQ(r.code, 0) << r.output;
  std::vector<double> params, macs;
  std::istringstream in(r.output);
  for (std::string line; std::getline(in, line);) {
    if (line.rfind("csi_width=", 0) == 0) params.push_back(field(" " + line, "params"));
    if (line.rfind("size=", 0) == 0) macs.push_back(field(" " + line, "macs"));
  }
  ASSERT_EQ(params.size(), 3u);
  ASSERT_EQ(macs.size(), 3u);
  EXPECT_LT(params[0], params[1]);
  EXPECT_LT(params[1], params[2]);
  EXPECT_LT(macs[0], macs[1]);
  EXPECT_LT(macs[1], macs[2]);
  EXPECT_NE(r.output.find("ratio_2M_over_M="), std::string::npos);
}
