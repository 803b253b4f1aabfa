#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "dreamnet/checkpoint.hpp"
#include "dreamnet/errors.hpp"
#include "dreamnet/evaluation.hpp"
#include "dreamnet/text.hpp"

namespace dreamnet::cli {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string>& own_keys() {
  static const std::vector<std::string> keys = {
      "data",          "out",         "ckpt",           "init_ckpt",          "report_dir",
      "split",         "feature_window_sec", "feature_hop_sec", "vocab_min_freq", "ablation_seeds",
      "n_perm",        "kfold_k",     "gradcheck_coords", "gradcheck_eps", "gradcheck_min_scale", "gradcheck_tolerance"};
  return keys;
}

std::string join_seeds(const std::vector<std::uint64_t>& seeds) {
  std::string out;
  for (std::size_t i = 0; i < seeds.size(); ++i) out += (i ? "," : "") + std::to_string(seeds[i]);
  return out;
}

std::uint64_t to_seed(const std::string& key, double v) {
  if (v < 0 || v != std::floor(v)) throw ConfigError("config key '" + key + "': expected non-negative integers");
  return static_cast<std::uint64_t>(v);
}

fs::path vocab_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".vocab"); }

void require(const fs::path& p, const char* flag) {
  if (p.empty()) throw ConfigError(std::string(flag) + " is required");
}

void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg) {
  if (!dir.empty()) fs::create_directories(dir);
  const fs::path path = (dir.empty() ? fs::path(".") : dir) / "manifest.txt";
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# dreamnet " << command << '\n' << cfg.to_config().to_string();
  if (!out) throw InputError("failed writing " + path.string());
}

struct LoadedData {
  std::vector<DreamRecord> records;
  std::map<std::string, std::vector<double>> features;
};

LoadedData load_data(const RunConfig& cfg, std::size_t feature_dim) {
  require(cfg.data, "--data");
  LoadedData d;
  d.records = load_dataset(cfg.data);
  eeg::FeatureOptions opts = cfg.features;
  opts.dim = feature_dim;
  const fs::path dir = cfg.data.parent_path();
  for (const auto& r : d.records) {
    if (!r.eeg_path) continue;
    d.features.emplace(r.id, eeg::featurize(eeg::read_eeg(dir / *r.eeg_path), opts));
  }
  return d;
}

std::vector<std::string> texts_of(std::span<const DreamRecord> records) {
  std::vector<std::string> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.text);
  return out;
}

std::vector<DreamRecord> select_split(const std::vector<DreamRecord>& records, const RunConfig& cfg,
                                      const std::string& which) {
  if (which == "all") return records;
  auto s = split(records, cfg.split, cfg.seed);
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  if (which == "test") return s.test;
  throw ConfigError("--split must be one of train, val, test, all; got '" + which + "'");
}

EpochCallback epoch_printer(std::ostream& out, const char* phase) {
  return [&out, phase](std::size_t epoch, double train, double val) {
    if (std::isnan(val)) {
      out << fmt::format("{} epoch {} loss {:.4f}\n", phase, epoch + 1, train);
    } else {
      out << fmt::format("{} epoch {} train {:.4f} val {:.4f}\n", phase, epoch + 1, train, val);
    }
    out.flush();
  };
}

void print_report(std::ostream& out, const std::string& name, const MetricsReport& r) {
  out << fmt::format("{:<16} acc {:.4f}  P {:.4f}  R {:.4f}  F1 {:.4f}  AUC {:.4f}  n {}\n", name, r.accuracy,
                     r.precision, r.recall, r.f1, r.auc, r.n);
}

// ---- subcommands ------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, std::ostream& out) {
  const auto ds = generate(cfg.gen);
  const fs::path dir = cfg.out.parent_path();
  if (!dir.empty()) fs::create_directories(dir);
  save_dataset(cfg.out, ds.records, ds.eeg);
  write_manifest(dir, "gen-data", cfg);
  out << fmt::format("wrote {} records ({} with EEG) to {}\n", ds.records.size(), ds.eeg.size(), cfg.out.string());
  return kExitOk;
}

int cmd_pretrain(const RunConfig& cfg, std::ostream& out) {
  require(cfg.ckpt, "--ckpt-out");
  require(cfg.data, "--data");
  const auto records = load_dataset(cfg.data);
  const auto corpus_records = split(records, cfg.split, cfg.seed).train;
  const auto texts = texts_of(corpus_records);
  const Vocab vocab = build_vocab(texts, cfg.vocab_min_freq);
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  DreamNetModel model(mc);
  std::vector<TokenSequence> corpus;
  corpus.reserve(texts.size());
  for (const auto& t : texts) corpus.push_back(tokenize(t, vocab, mc.max_len));
  const auto losses = pretrain(model, corpus, cfg.train, epoch_printer(out, "pretrain"));
  if (!cfg.ckpt.parent_path().empty()) fs::create_directories(cfg.ckpt.parent_path());
  save_checkpoint(cfg.ckpt, model.to_checkpoint());
  vocab.save(vocab_path(cfg.ckpt));
  write_manifest(cfg.report_dir, "pretrain", cfg);
  write_loss_csv((cfg.report_dir / "loss.csv").string(), losses, {});
  out << fmt::format("saved {} ({} parameters, vocab {})\n", cfg.ckpt.string(), model.parameter_count(),
                     vocab.size());
  return kExitOk;
}

int cmd_finetune(const RunConfig& cfg, std::ostream& out) {
  require(cfg.ckpt, "--ckpt-out");
  const auto data = load_data(cfg, cfg.model.feature_dim);
  const auto s = split(data.records, cfg.split, cfg.seed);
  std::optional<Checkpoint> init;
  Vocab vocab;
  if (!cfg.init_ckpt.empty()) {
    init = load_checkpoint(cfg.init_ckpt);
    vocab = Vocab::load(vocab_path(cfg.init_ckpt));
  } else {
    vocab = build_vocab(texts_of(s.train), cfg.vocab_min_freq);
  }
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  DreamNetModel model(mc);
  if (init) {
    const std::vector<std::string> prefixes = {"embed.", "encoder."};
    const std::size_t loaded = model.load_matching(*init, prefixes);
    out << fmt::format("initialized {} encoder tensors from {}\n", loaded, cfg.init_ckpt.string());
  }
  const auto train = make_examples(s.train, vocab, mc.max_len, data.features);
  const auto val = make_examples(s.val, vocab, mc.max_len, data.features);
  const auto result = finetune(model, train, val, cfg.train, epoch_printer(out, "finetune"));
  if (!cfg.ckpt.parent_path().empty()) fs::create_directories(cfg.ckpt.parent_path());
  save_checkpoint(cfg.ckpt, model.to_checkpoint());
  vocab.save(vocab_path(cfg.ckpt));
  write_manifest(cfg.report_dir, "finetune", cfg);
  write_loss_csv((cfg.report_dir / "loss.csv").string(), result.train_loss, result.val_loss);
  out << fmt::format("best epoch {} of {}{}; saved {}\n", result.best_epoch + 1, result.train_loss.size(),
                     result.stopped_early ? " (stopped early)" : "", cfg.ckpt.string());
  return kExitOk;
}

std::pair<DreamNetModel, Vocab> load_model(const RunConfig& cfg) {
  require(cfg.ckpt, "--ckpt");
  DreamNetModel model = DreamNetModel::from_checkpoint(load_checkpoint(cfg.ckpt));
  Vocab vocab = Vocab::load(vocab_path(cfg.ckpt));
  if (vocab.size() != model.config().vocab_size) {
    throw ShapeError(fmt::format("vocabulary {} has {} tokens, checkpoint expects {}", vocab_path(cfg.ckpt).string(),
                                 vocab.size(), model.config().vocab_size));
  }
  return {std::move(model), std::move(vocab)};
}

// id,<20 probabilities> as written by write_predictions_csv.
std::map<std::string, LabelRow> read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot read predictions " + path.string());
  std::map<std::string, LabelRow> out;
  std::string line;
  std::getline(in, line);
  for (std::size_t line_no = 2; std::getline(in, line); ++line_no) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id, cell;
    std::getline(row, id, ',');
    LabelRow probs{};
    std::size_t l = 0;
    for (; std::getline(row, cell, ','); ++l) {
      if (l >= kNumLabels) break;
      try {
        probs[l] = std::stod(cell);
      } catch (const std::exception&) {
        throw ParseError(fmt::format("{}:{}: bad probability '{}'", path.string(), line_no, cell));
      }
    }
    if (l != kNumLabels) {
      throw ParseError(fmt::format("{}:{}: expected {} probabilities", path.string(), line_no, kNumLabels));
    }
    out[id] = probs;
  }
  return out;
}

int cmd_eval(const RunConfig& cfg, const std::string& which, const fs::path& predictions_path, std::ostream& out) {
  std::vector<NamedReport> rows;
  std::vector<LabelRow> probs;
  std::vector<DreamRecord> records;
  std::vector<std::string> ids;
  std::string model_name;
  if (!predictions_path.empty()) {
    require(cfg.data, "--data");
    records = select_split(load_dataset(cfg.data), cfg, which);
    const auto preds = read_predictions(predictions_path);
    for (const auto& r : records) {
      auto it = preds.find(r.id);
      if (it == preds.end()) throw InputError("predictions file has no row for record " + r.id);
      probs.push_back(it->second);
    }
    model_name = "predictions";
  } else {
    auto [model, vocab] = load_model(cfg);
    auto data = load_data(cfg, model.config().feature_dim);
    records = select_split(data.records, cfg, which);
    const auto examples = make_examples(records, vocab, model.config().max_len, data.features);
    probs = predict_all(model, examples);
    model_name = "dreamnet";
  }
  if (records.empty()) throw InputError("no records to evaluate");
  std::vector<LabelRow> labels;
  std::vector<DreamType> types;
  for (const auto& r : records) {
    LabelRow row{};
    std::copy(r.emotions.begin(), r.emotions.end(), row.begin());
    std::copy(r.themes.begin(), r.themes.end(), row.begin() + kNumEmotions);
    labels.push_back(row);
    types.push_back(r.dream_type);
    ids.push_back(r.id);
  }
  const auto report = multilabel_metrics(probs, labels);
  const auto rule = multilabel_metrics(RuleBaseline().predict_all(records), labels);
  rows.push_back({model_name, report});
  rows.push_back({"rule_baseline", rule});
  fs::create_directories(cfg.report_dir);
  write_metrics_csv(cfg.report_dir / "metrics.csv", rows);
  write_per_label_csv(cfg.report_dir / "per_label.csv", report);
  write_dream_types_csv(cfg.report_dir / "dream_types.csv", stratified_eval(probs, labels, types));
  write_predictions_csv(cfg.report_dir / "predictions.csv", ids, probs);
  write_manifest(cfg.report_dir, "eval", cfg);
  for (const auto& [name, r] : rows) print_report(out, name, r);
  return kExitOk;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg, cfg.model.feature_dim);
  const auto s = split(data.records, cfg.split, cfg.seed);
  const Vocab vocab = build_vocab(texts_of(s.train), cfg.vocab_min_freq);
  ModelConfig base = cfg.model;
  base.vocab_size = vocab.size();
  const auto train = make_examples(s.train, vocab, base.max_len, data.features);
  const auto val = make_examples(s.val, vocab, base.max_len, data.features);
  const auto test = make_examples(s.test, vocab, base.max_len, data.features);
  const auto result = run_ablation(train, val, test, base, cfg.train, cfg.ablation_seeds, [&out](const AblationRun& r) {
    out << fmt::format("{:<16} seed {:<3} F1 {:.4f}  epochs {}\n", r.variant, r.seed, r.test.f1,
                       r.history.train_loss.size());
    out.flush();
  });
  fs::create_directories(cfg.report_dir);
  write_ablation_csv(cfg.report_dir / "ablation.csv", result.rows);
  write_ablation_runs_csv(cfg.report_dir / "ablation_runs.csv", result.runs);
  write_manifest(cfg.report_dir, "ablate", cfg);
  for (const auto& row : result.rows) print_report(out, row.variant, row.mean);
  return kExitOk;
}

// Themes always come from the gold labels; emotions come from the gold labels
// or from a checkpoint's predicted probabilities.
int cmd_correlate(const RunConfig& cfg, std::string source, std::ostream& out) {
  require(cfg.data, "--data");
  if (source.empty()) source = cfg.ckpt.empty() ? "gold" : "predicted";
  if (source != "gold" && source != "predicted") throw ConfigError("--source must be gold or predicted");
  std::vector<DreamRecord> records;
  std::vector<LabelRow> emotions;
  if (source == "predicted") {
    auto [model, vocab] = load_model(cfg);
    auto data = load_data(cfg, model.config().feature_dim);
    records = std::move(data.records);
    emotions = predict_all(model, make_examples(records, vocab, model.config().max_len, data.features));
  } else {
    records = load_dataset(cfg.data);
  }
  std::vector<LabelRow> labels;
  for (const auto& r : records) {
    LabelRow row{};
    std::copy(r.emotions.begin(), r.emotions.end(), row.begin());
    std::copy(r.themes.begin(), r.themes.end(), row.begin() + kNumEmotions);
    labels.push_back(row);
  }
  if (source == "gold") emotions = labels;
  out << fmt::format("emotions from {} ({} records)\n", source, records.size());
  const auto results = correlation_matrix(emotions, labels, cfg.n_perm, cfg.seed);
  fs::create_directories(cfg.report_dir);
  write_correlations_csv(cfg.report_dir / "correlations.csv", results);
  write_manifest(cfg.report_dir, "correlate", cfg);
  std::vector<CorrelationResult> top(results);
  std::sort(top.begin(), top.end(), [](const auto& a, const auto& b) { return std::abs(a.r) > std::abs(b.r); });
  top.resize(std::min<std::size_t>(top.size(), 5));
  for (const auto& c : top) {
    out << fmt::format("{:<20} {:<10} r {:+.3f}  p {:.4g}\n", c.theme, c.emotion, c.r, c.p_value);
  }
  return kExitOk;
}

int cmd_kfold(const RunConfig& cfg, std::ostream& out) {
  const auto data = load_data(cfg, cfg.model.feature_dim);
  // The vocabulary sees every narrative; it is built without labels.
  const Vocab vocab = build_vocab(texts_of(data.records), cfg.vocab_min_freq);
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  const auto examples = make_examples(data.records, vocab, mc.max_len, data.features);
  std::size_t fold = 0;
  const auto summary = kfold(examples, cfg.kfold_k, cfg.seed, [&](std::span<const Example> train_fold,
                                                                  std::span<const Example> test) {
    // Every eighth training example is held out for early stopping.
    std::vector<Example> train, val;
    for (std::size_t i = 0; i < train_fold.size(); ++i) (i % 8 == 0 ? val : train).push_back(train_fold[i]);
    DreamNetModel model(mc);
    const auto history = finetune(model, train, val, cfg.train);
    const auto report = multilabel_metrics(predict_all(model, test), labels_of(test));
    out << fmt::format("fold {} F1 {:.4f} after {} epochs\n", ++fold, report.f1, history.train_loss.size());
    out.flush();
    return report;
  });
  fs::create_directories(cfg.report_dir);
  std::vector<NamedReport> rows;
  for (std::size_t f = 0; f < summary.folds.size(); ++f) rows.push_back({"fold" + std::to_string(f + 1), summary.folds[f]});
  write_metrics_csv(cfg.report_dir / "kfold.csv", rows);
  write_manifest(cfg.report_dir, "kfold", cfg);
  out << fmt::format("F1 {:.4f} +/- {:.4f}  accuracy {:.4f} +/- {:.4f}\n", summary.f1.mean, summary.f1.stddev,
                     summary.accuracy.mean, summary.accuracy.stddev);
  return kExitOk;
}

int cmd_grad_check(const RunConfig& cfg, bool write_report, std::ostream& out) {
  DreamRecord rec;
  std::vector<double> features;
  if (!cfg.data.empty()) {
    const auto data = load_data(cfg, cfg.model.feature_dim);
    auto it = std::find_if(data.records.begin(), data.records.end(),
                           [&](const DreamRecord& r) { return data.features.count(r.id) != 0; });
    if (it == data.records.end()) throw InputError("grad-check needs a record with EEG in " + cfg.data.string());
    rec = *it;
    features = data.features.at(rec.id);
  } else {
    GeneratorSpec spec = cfg.gen;
    spec.n = 1;
    spec.eeg_fraction = 1.0;
    spec.mean_words = 20;
    spec.sd_words = 4;
    spec.min_words = 12;
    auto ds = generate(spec);
    rec = ds.records.front();
    eeg::FeatureOptions opts = cfg.features;
    opts.dim = cfg.model.feature_dim;
    features = eeg::featurize(ds.eeg.at(rec.id), opts);
  }
  const std::vector<std::string> texts = {rec.text};
  const Vocab vocab = build_vocab(texts, 1);
  ModelConfig mc = cfg.model;
  mc.vocab_size = vocab.size();
  mc.fusion = FusionMode::kCrossAttention;
  DreamNetModel model(mc);
  const auto examples = make_examples(std::span<const DreamRecord>(&rec, 1), vocab, mc.max_len,
                                      {{rec.id, features}});
  const Example& ex = examples.front();
  auto params = model.parameter_list();
  GradCheckOptions opts;
  opts.max_coords_per_tensor = cfg.gradcheck_coords;
  opts.eps = cfg.gradcheck_eps;
  opts.min_scale = cfg.gradcheck_min_scale;
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = grad_check([&](Graph& g) { return example_loss(model, g, ex, cfg.train, Mode::kEval, nullptr); },
                            params, opts);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto names = model.params().named();
  out << fmt::format("max_rel_error {:.3e} over {} coordinates in {:.1f}s (worst {}[{}]: analytic {:.6e}, numeric {:.6e})\n",
                     r.max_rel_error, r.coords_checked, seconds, names.at(r.worst_param).first, r.worst_index,
                     r.worst_analytic, r.worst_numeric);
  if (write_report) write_manifest(cfg.report_dir, "grad-check", cfg);
  if (!(r.max_rel_error < cfg.gradcheck_tolerance)) {
    out << fmt::format("FAILED: above tolerance {:.1e}\n", cfg.gradcheck_tolerance);
    return kExitNumerical;
  }
  return kExitOk;
}

}  // namespace

std::vector<std::string> known_keys() {
  std::set<std::string> keys;
  for (const auto& part : {GeneratorSpec::defaults().to_config(), ModelConfig{}.to_config(), TrainConfig{}.to_config()}) {
    for (const auto& [k, v] : part.entries()) keys.insert(k);
  }
  keys.insert(own_keys().begin(), own_keys().end());
  return {keys.begin(), keys.end()};
}

RunConfig RunConfig::from_config(const KeyValueConfig& source) {
  const auto keys = known_keys();
  for (const auto& [k, v] : source.entries()) {
    if (!std::binary_search(keys.begin(), keys.end(), k)) throw ConfigError("unknown config key '" + k + "'");
  }
  RunConfig r;
  KeyValueConfig c = source;
  if (!c.contains("seed")) c.set("seed", std::to_string(r.seed));
  r.seed = static_cast<std::uint64_t>(c.get_size("seed", r.seed));
  r.gen = GeneratorSpec::from_config(c);
  r.model = ModelConfig::from_config(c, r.model);
  r.train = TrainConfig::from_config(c, r.train);
  r.gen.validate();
  r.train.validate();

  const auto ratios = c.get_doubles("split", {r.split.train, r.split.val, r.split.test});
  if (ratios.size() != 3) throw ConfigError("config key 'split': expected three ratios");
  r.split = {ratios[0], ratios[1], ratios[2]};
  r.features.dim = r.model.feature_dim;
  r.features.window_sec = c.get_double("feature_window_sec", r.features.window_sec);
  r.features.hop_sec = c.get_double("feature_hop_sec", r.features.hop_sec);

  r.data = c.get_string("data", r.data.string());
  r.out = c.get_string("out", r.out.string());
  r.ckpt = c.get_string("ckpt", r.ckpt.string());
  r.init_ckpt = c.get_string("init_ckpt", r.init_ckpt.string());
  r.report_dir = c.get_string("report_dir", r.report_dir.string());
  r.vocab_min_freq = c.get_size("vocab_min_freq", r.vocab_min_freq);
  if (c.contains("ablation_seeds")) {
    r.ablation_seeds.clear();
    for (double v : c.get_doubles("ablation_seeds", {})) r.ablation_seeds.push_back(to_seed("ablation_seeds", v));
    if (r.ablation_seeds.empty()) throw ConfigError("config key 'ablation_seeds': at least one seed is needed");
  }
  r.n_perm = c.get_size("n_perm", r.n_perm);
  r.kfold_k = c.get_size("kfold_k", r.kfold_k);
  r.gradcheck_coords = c.get_size("gradcheck_coords", r.gradcheck_coords);
  r.gradcheck_eps = c.get_double("gradcheck_eps", r.gradcheck_eps);
  r.gradcheck_min_scale = c.get_double("gradcheck_min_scale", r.gradcheck_min_scale);
  r.gradcheck_tolerance = c.get_double("gradcheck_tolerance", r.gradcheck_tolerance);
  return r;
}

KeyValueConfig RunConfig::to_config() const {
  KeyValueConfig c;
  for (const auto& part : {gen.to_config(), model.to_config(), train.to_config()}) {
    for (const auto& [k, v] : part.entries()) c.set(k, v);
  }
  c.set("seed", std::to_string(seed));
  c.set("split", format_double(split.train) + "," + format_double(split.val) + "," + format_double(split.test));
  c.set("feature_window_sec", format_double(features.window_sec));
  c.set("feature_hop_sec", format_double(features.hop_sec));
  c.set("data", data.string());
  c.set("out", out.string());
  c.set("ckpt", ckpt.string());
  c.set("init_ckpt", init_ckpt.string());
  c.set("report_dir", report_dir.string());
  c.set("vocab_min_freq", std::to_string(vocab_min_freq));
  c.set("ablation_seeds", join_seeds(ablation_seeds));
  c.set("n_perm", std::to_string(n_perm));
  c.set("kfold_k", std::to_string(kfold_k));
  c.set("gradcheck_coords", std::to_string(gradcheck_coords));
  c.set("gradcheck_eps", format_double(gradcheck_eps));
  c.set("gradcheck_min_scale", format_double(gradcheck_min_scale));
  c.set("gradcheck_tolerance", format_double(gradcheck_tolerance));
  return c;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DreamNet: dream narrative emotion and theme classifier"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // flag values keyed by config key; only flags given on the command line override the file
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;
  std::string config_file;
  std::vector<std::string> sets;
  std::string eval_split = "test";
  std::string predictions;
  std::string corr_source;

  auto flag = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    options[sub->get_name() + key] = sub->add_option(name, values[sub->get_name() + key], help);
  };
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_file, "key=value configuration file")->check(CLI::ExistingFile);
    sub->add_option("--set", sets, "override one config key, KEY=VALUE (repeatable)");
    flag(sub, "--seed", "seed", "seed for generation, splitting, initialization and training");
  };

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset (JSONL plus EEG sidecars)");
  common(gen);
  flag(gen, "--n", "n", "number of records");
  flag(gen, "--eeg-fraction", "eeg_fraction", "fraction of records with EEG");
  flag(gen, "--out", "out", "output JSONL path");

  auto* pre = app.add_subcommand("pretrain", "masked-LM pretraining of the text encoder on the training split");
  common(pre);
  flag(pre, "--data", "data", "dataset JSONL");
  flag(pre, "--ckpt-out", "ckpt", "checkpoint to write");
  flag(pre, "--report-dir", "report_dir", "directory for loss.csv and manifest.txt");

  auto* fine = app.add_subcommand("finetune", "train the classifier with early stopping");
  common(fine);
  flag(fine, "--data", "data", "dataset JSONL");
  flag(fine, "--ckpt-out", "ckpt", "checkpoint to write");
  flag(fine, "--init-ckpt", "init_ckpt", "pretrained checkpoint; only embed.* and encoder.* are loaded");
  flag(fine, "--report-dir", "report_dir", "directory for loss.csv and manifest.txt");

  auto* ev = app.add_subcommand("eval", "metrics, per-label and per-dream-type reports");
  common(ev);
  flag(ev, "--data", "data", "dataset JSONL");
  flag(ev, "--ckpt", "ckpt", "checkpoint to evaluate");
  flag(ev, "--report-dir", "report_dir", "output directory");
  ev->add_option("--split", eval_split, "records to evaluate: train, val, test or all")->capture_default_str();
  ev->add_option("--predictions", predictions, "evaluate a predictions CSV instead of a checkpoint");

  auto* abl = app.add_subcommand("ablate", "train and test the four architecture variants");
  common(abl);
  flag(abl, "--data", "data", "dataset JSONL");
  flag(abl, "--report-dir", "report_dir", "output directory");
  flag(abl, "--seeds", "ablation_seeds", "comma-separated seeds");

  auto* cor = app.add_subcommand("correlate", "theme/emotion correlation matrix with permutation p-values");
  common(cor);
  flag(cor, "--data", "data", "dataset JSONL");
  flag(cor, "--ckpt", "ckpt", "checkpoint whose predicted emotions are correlated with the gold themes");
  cor->add_option("--source", corr_source, "emotion source: gold or predicted (default: predicted with --ckpt)");
  flag(cor, "--report-dir", "report_dir", "output directory");
  flag(cor, "--n-perm", "n_perm", "permutations for the p-values");

  auto* kf = app.add_subcommand("kfold", "k-fold cross-validation");
  common(kf);
  flag(kf, "--data", "data", "dataset JSONL");
  flag(kf, "--report-dir", "report_dir", "output directory");
  flag(kf, "--k", "kfold_k", "number of folds");

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full multimodal graph");
  common(gc);
  flag(gc, "--data", "data", "dataset JSONL (optional; a generated record is used otherwise)");
  flag(gc, "--d-model", "d_model", "encoder width (default 16)");
  flag(gc, "--report-dir", "report_dir", "directory for manifest.txt");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    KeyValueConfig kv = config_file.empty() ? KeyValueConfig{} : KeyValueConfig::load(config_file);
    if (name == "grad-check" && !kv.contains("d_model")) kv.set("d_model", "16");
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects KEY=VALUE, got '" + s + "'");
      kv.set(s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [id, opt] : options) {
      if (id.rfind(name, 0) != 0 || opt->count() == 0) continue;
      kv.set(id.substr(name.size()), values[id]);
    }
    const RunConfig cfg = RunConfig::from_config(kv);

    if (name == "gen-data") return cmd_gen_data(cfg, out);
    if (name == "pretrain") return cmd_pretrain(cfg, out);
    if (name == "finetune") return cmd_finetune(cfg, out);
    if (name == "eval") return cmd_eval(cfg, eval_split, predictions, out);
    if (name == "ablate") return cmd_ablate(cfg, out);
    if (name == "correlate") return cmd_correlate(cfg, corr_source, out);
    if (name == "kfold") return cmd_kfold(cfg, out);
    if (name == "grad-check") return cmd_grad_check(cfg, options.at(name + "report_dir")->count() > 0, out);
    err << "unknown subcommand " << name << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
    return kExitInput;
  } catch (const SchemaError& e) {
    err << "schema error: " << e.what() << '\n';
    return kExitInput;
  } catch (const ShapeError& e) {
    err << "shape error: " << e.what() << '\n';
    return kExitInput;
  } catch (const fs::filesystem_error& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kExitInternal;
  }
}

}  // namespace dreamnet::cli
