#include <doctest.h>

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "dreamnet/checkpoint.hpp"
#include "dreamnet/dataset.hpp"
#include "dreamnet/evaluation.hpp"
#include "support.hpp"

using namespace dreamnet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string read_all(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

// Small, fast settings shared by the training subcommands.
std::vector<std::string> small_run() {
  return {"--set", "d_model=8",   "--set", "n_layers=1",    "--set", "n_heads_text=2", "--set", "max_len=32",
          "--set", "ft_epochs=2", "--set", "pre_epochs=2",  "--set", "ft_lr=1e-3",     "--set", "pre_lr=1e-3",
          "--set", "batch_size=4", "--set", "feature_dim=48"};
}

fs::path make_data(const fs::path& dir, std::size_t n, double eeg_fraction = 0.5) {
  const fs::path out = dir / "data" / "d.jsonl";
  const Result r = run_cli({"gen-data", "--n", std::to_string(n), "--eeg-fraction", std::to_string(eeg_fraction),
                            "--out", out.string(), "--set", "mean_words=20", "--set", "sd_words=4", "--set",
                            "min_words=8", "--set", "eeg_seconds=6", "--set", "eeg_channels=2"});
  REQUIRE(r.code == 0);
  return out;
}

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("gen-data: empty and deterministic outputs with a manifest") {
  dntest::TempDir dir("cli_gen");
  const Result empty = run_cli({"gen-data", "--n", "0", "--out", (dir.path() / "e" / "d.jsonl").string()});
  CHECK(empty.code == 0);
  CHECK(read_all(dir.path() / "e" / "d.jsonl").empty());

  for (const char* sub : {"a", "b"}) {
    CHECK(run_cli({"gen-data", "--n", "30", "--seed", "3", "--out", (dir.path() / sub / "d.jsonl").string(), "--set",
                   "mean_words=20", "--set", "eeg_seconds=4"})
              .code == 0);
  }
  const std::string a = read_all(dir.path() / "a" / "d.jsonl");
  CHECK(a == read_all(dir.path() / "b" / "d.jsonl"));
  CHECK(lines_of(dir.path() / "a" / "d.jsonl").size() == 30);
  const std::string manifest = read_all(dir.path() / "a" / "manifest.txt");
  CHECK(manifest.rfind("# dreamnet gen-data", 0) == 0);
  CHECK(manifest.find("seed=3") != std::string::npos);
}

TEST_CASE("gen-data: default EEG fraction gives about 400 of 1500") {
  dntest::TempDir dir("cli_gen1500");
  const Result r = run_cli({"gen-data", "--n", "1500", "--seed", "7", "--out", (dir.path() / "d.jsonl").string(),
                            "--set", "mean_words=20", "--set", "eeg_seconds=2", "--set", "eeg_channels=1"});
  REQUIRE(r.code == 0);
  CHECK(lines_of(dir.path() / "d.jsonl").size() == 1500);
  std::size_t eeg_files = 0;
  for (const auto& e : fs::directory_iterator(dir.path()))
    if (e.path().extension() == ".eeg") ++eeg_files;
  CHECK(eeg_files == 400);
}

TEST_CASE("exit codes for input errors and help") {
  dntest::TempDir dir("cli_err");
  CHECK(run_cli({"finetune", "--data", (dir.path() / "nope.jsonl").string(), "--ckpt-out",
                 (dir.path() / "m.ckpt").string()})
            .code == cli::kExitInput);
  CHECK(run_cli({"gen-data", "--bogus"}).code == cli::kExitInput);
  CHECK(run_cli({}).code == cli::kExitInput);
  CHECK(run_cli({"gen-data", "--set", "no_such_key=1"}).code == cli::kExitInput);
  CHECK(run_cli({"gen-data", "--set", "novalue"}).code == cli::kExitInput);
  CHECK(run_cli({"gen-data", "--out", "/proc/dreamnet/d.jsonl", "--n", "1"}).code == cli::kExitInput);
  CHECK(run_cli({"--help"}).code == cli::kExitOk);
}

TEST_CASE("config precedence: file, then --set, then explicit flags") {
  dntest::TempDir dir("cli_cfg");
  {
    std::ofstream cfg(dir.path() / "run.cfg");
    cfg << "# test\nn=5\nseed=11\nmean_words=30\n";
  }
  const fs::path out = dir.path() / "x" / "d.jsonl";
  const Result r = run_cli({"gen-data", "--config", (dir.path() / "run.cfg").string(), "--set", "seed=12", "--n",
                            "4", "--out", out.string(), "--set", "n=9"});
  REQUIRE(r.code == 0);
  CHECK(lines_of(out).size() == 4);
  const std::string manifest = read_all(dir.path() / "x" / "manifest.txt");
  CHECK(manifest.find("seed=12") != std::string::npos);
  CHECK(manifest.find("mean_words=30") != std::string::npos);
}

TEST_CASE("RunConfig round trips through key=value text") {
  cli::RunConfig c;
  c.seed = 99;
  c.ablation_seeds = {3, 4};
  c.model.d_model = 16;
  const cli::RunConfig back = cli::RunConfig::from_config(c.to_config());
  CHECK(back.to_config().to_string() == c.to_config().to_string());
  const auto keys = cli::known_keys();
  const KeyValueConfig kv = c.to_config();
  for (const auto& [k, v] : kv.entries()) {
    CHECK(std::find(keys.begin(), keys.end(), k) != keys.end());
  }
}

TEST_CASE("pretrain, finetune from the pretrained encoder, eval and correlate") {
  dntest::TempDir dir("cli_train");
  const fs::path data = make_data(dir.path(), 40);
  const fs::path pre = dir.path() / "pre.ckpt", fine = dir.path() / "fine.ckpt";
  const fs::path reports = dir.path() / "reports";

  Result r = run_cli(with({"pretrain", "--data", data.string(), "--ckpt-out", pre.string(), "--report-dir",
                           (dir.path() / "pre_reports").string()},
                          small_run()));
  REQUIRE(r.code == 0);
  CHECK(lines_of(dir.path() / "pre_reports" / "loss.csv").size() == 3);

  r = run_cli(with({"finetune", "--data", data.string(), "--ckpt-out", fine.string(), "--init-ckpt", pre.string(),
                    "--report-dir", reports.string(), "--set", "patience=100"},
                   small_run()));
  REQUIRE(r.code == 0);
  CHECK(r.out.find("initialized 17 encoder tensors") != std::string::npos);
  CHECK(lines_of(reports / "loss.csv").size() == 1 + 2);

  // With a zero learning rate the loaded encoder comes back out unchanged.
  r = run_cli(with(with({"finetune", "--data", data.string(), "--ckpt-out", (dir.path() / "f0.ckpt").string(),
                         "--init-ckpt", pre.string(), "--report-dir", (dir.path() / "r0").string()},
                        small_run()),
                   {"--set", "ft_lr=0", "--set", "weight_decay=0"}));
  REQUIRE(r.code == 0);
  const Checkpoint a = load_checkpoint(pre), b = load_checkpoint(dir.path() / "f0.ckpt");
  CHECK(*a.find("embed.token") == *b.find("embed.token"));
  CHECK(*a.find("encoder.0.ffn.w1") == *b.find("encoder.0.ffn.w1"));

  r = run_cli({"eval", "--data", data.string(), "--ckpt", fine.string(), "--report-dir", reports.string()});
  REQUIRE(r.code == 0);
  for (const char* f : {"metrics.csv", "per_label.csv", "dream_types.csv", "predictions.csv", "manifest.txt"})
    CHECK(fs::exists(reports / f));
  const auto metrics = lines_of(reports / "metrics.csv");
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[1].rfind("dreamnet,", 0) == 0);
  CHECK(metrics[2].rfind("rule_baseline,", 0) == 0);
  CHECK(lines_of(reports / "dream_types.csv").size() == 7);

  r = run_cli({"correlate", "--data", data.string(), "--ckpt", fine.string(), "--report-dir", reports.string(),
               "--n-perm", "20"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("emotions from predicted (40 records)") != std::string::npos);
  CHECK(lines_of(reports / "correlations.csv").size() > 1);
}

TEST_CASE("corrupted checkpoint is an input error naming the file") {
  dntest::TempDir dir("cli_bad");
  const fs::path data = make_data(dir.path(), 10);
  const fs::path ck = dir.path() / "broken.ckpt";
  { std::ofstream(ck) << "NOTDNET"; }
  const Result r = run_cli({"eval", "--data", data.string(), "--ckpt", ck.string(), "--report-dir",
                            (dir.path() / "r").string()});
  CHECK(r.code == cli::kExitInput);
  CHECK(r.err.find("broken.ckpt") != std::string::npos);
}

TEST_CASE("non-finite training loss exits with the numerical code") {
  dntest::TempDir dir("cli_nan");
  const fs::path data = make_data(dir.path(), 20);
  const Result r = run_cli(with({"finetune", "--data", data.string(), "--ckpt-out", (dir.path() / "m.ckpt").string(),
                                 "--report-dir", (dir.path() / "r").string(), "--set", "prob_clamp=1e-300"},
                                with(small_run(), {"--set", "ft_lr=1e300"})));
  CHECK(r.code == cli::kExitNumerical);
  CHECK(r.err.find("non-finite") != std::string::npos);
}

TEST_CASE("eval on perfect predictions reports all ones") {
  dntest::TempDir dir("cli_oracle");
  const fs::path data = make_data(dir.path(), 30, 0.0);
  const auto records = load_dataset(data);
  std::vector<std::string> ids;
  std::vector<LabelRow> rows;
  for (const auto& r : records) {
    LabelRow row{};
    std::copy(r.emotions.begin(), r.emotions.end(), row.begin());
    std::copy(r.themes.begin(), r.themes.end(), row.begin() + kNumEmotions);
    ids.push_back(r.id);
    rows.push_back(row);
  }
  write_predictions_csv(dir.path() / "oracle.csv", ids, rows);
  const fs::path reports = dir.path() / "r";
  const Result r = run_cli({"eval", "--data", data.string(), "--predictions", (dir.path() / "oracle.csv").string(),
                            "--split", "all", "--report-dir", reports.string()});
  REQUIRE(r.code == 0);
  const auto metrics = lines_of(reports / "metrics.csv");
  REQUIRE(metrics.size() == 3);
  CHECK(metrics[1].rfind("predictions,1.000000,1.000000,1.000000,1.000000,1.000000,1.000000", 0) == 0);
}

TEST_CASE("correlate on gold labels recovers the planted cell") {
  dntest::TempDir dir("cli_corr");
  const fs::path data = dir.path() / "d.jsonl";
  REQUIRE(run_cli({"gen-data", "--n", "1500", "--eeg-fraction", "0", "--out", data.string(), "--set",
                   "mean_words=20"})
              .code == 0);
  const fs::path reports = dir.path() / "r";
  const Result r = run_cli({"correlate", "--data", data.string(), "--report-dir", reports.string(), "--n-perm", "200"});
  REQUIRE(r.code == 0);
  bool found = false;
  for (const auto& line : lines_of(reports / "correlations.csv")) {
    if (line.rfind("falling,anxiety,", 0) != 0) continue;
    found = true;
    const double rv = std::stod(line.substr(std::string("falling,anxiety,").size()));
    CHECK(std::abs(rv - 0.9) <= 0.1);
  }
  CHECK(found);
  CHECK(run_cli({"correlate", "--data", data.string(), "--report-dir", reports.string(), "--source", "predicted"})
            .code == cli::kExitInput);
}

TEST_CASE("ablate and kfold write their tables") {
  dntest::TempDir dir("cli_abl");
  const fs::path data = make_data(dir.path(), 30);
  const fs::path reports = dir.path() / "r";
  Result r = run_cli(with({"ablate", "--data", data.string(), "--report-dir", reports.string(), "--seeds", "1"},
                          small_run()));
  REQUIRE(r.code == 0);
  CHECK(lines_of(reports / "ablation.csv").size() == 5);
  CHECK(lines_of(reports / "ablation_runs.csv").size() == 5);

  r = run_cli(with({"kfold", "--data", data.string(), "--report-dir", reports.string(), "--k", "3"}, small_run()));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(reports / "kfold.csv"));
}

TEST_CASE("grad-check at d_model=16 passes") {
  const Result r = run_cli({"grad-check", "--set", "gradcheck_coords=8"});
  CHECK(r.code == cli::kExitOk);
  CHECK(r.out.rfind("max_rel_error ", 0) == 0);
}
