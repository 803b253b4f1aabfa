#include "dreamnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "dreamnet/errors.hpp"
#include "dreamnet/text.hpp"

namespace dreamnet {

std::string_view label_name(std::size_t label) {
  if (label < kNumEmotions) return kEmotionNames[label];
  if (label < kNumLabels) return kThemeNames[label - kNumEmotions];
  throw InputError("label index " + std::to_string(label) + " out of range");
}

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0;
};

// 0/0 cases count as perfect agreement: no positives predicted and none present.
double precision_of(const Counts& c) {
  if (c.tp + c.fp == 0) return c.fn == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
}

double recall_of(const Counts& c) {
  if (c.tp + c.fn == 0) return c.fp == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

double harmonic(double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); }

}  // namespace

std::optional<double> auc(std::span<const double> scores, std::span<const double> labels) {
  if (scores.size() != labels.size()) throw ShapeError("auc: scores and labels differ in length");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of positive ranks with tied groups sharing their mean rank (ranks doubled to stay integral).
  std::uint64_t pos = 0, neg = 0, rank_sum2 = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const std::uint64_t twice_mean_rank = (i + 1) + j;  // ranks i+1 .. j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] > 0.5) {
        ++pos;
        rank_sum2 += twice_mean_rank;
      } else {
        ++neg;
      }
    }
    i = j;
  }
  if (pos == 0 || neg == 0) return std::nullopt;
  // U = rank_sum - pos(pos+1)/2, computed on doubled integers.
  const std::uint64_t u2 = rank_sum2 - pos * (pos + 1);
  return static_cast<double>(u2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

MetricsReport multilabel_metrics(std::span<const LabelRow> probs, std::span<const LabelRow> labels,
                                 const MetricsOptions& options) {
  if (probs.size() != labels.size()) {
    throw ShapeError("multilabel_metrics: " + std::to_string(probs.size()) + " prediction rows vs " +
                     std::to_string(labels.size()) + " label rows");
  }
  if (probs.empty()) throw InputError("multilabel_metrics: no samples");
  const std::size_t n = probs.size();
  MetricsReport rep;
  rep.n = n;
  std::array<Counts, kNumLabels> per{};
  std::size_t correct = 0, exact = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool all = true;
    for (std::size_t l = 0; l < kNumLabels; ++l) {
      const double p = probs[i][l];
      if (!(p >= 0.0 && p <= 1.0)) throw InputError("multilabel_metrics: probability outside [0, 1]");
      const bool pred = p >= options.threshold;
      const bool truth = labels[i][l] > 0.5;
      if (pred == truth) {
        ++correct;
      } else {
        all = false;
      }
      if (pred && truth) ++per[l].tp;
      if (pred && !truth) ++per[l].fp;
      if (!pred && truth) ++per[l].fn;
    }
    if (all) ++exact;
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(n * kNumLabels);
  rep.subset_accuracy = static_cast<double>(exact) / static_cast<double>(n);

  Counts micro;
  std::vector<double> scores(n), truth(n);
  std::vector<double> pooled_scores, pooled_truth;
  double auc_sum = 0.0;
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    auto& lm = rep.per_label[l];
    lm.precision = precision_of(per[l]);
    lm.recall = recall_of(per[l]);
    lm.f1 = harmonic(lm.precision, lm.recall);
    micro.tp += per[l].tp;
    micro.fp += per[l].fp;
    micro.fn += per[l].fn;
    for (std::size_t i = 0; i < n; ++i) {
      scores[i] = probs[i][l];
      truth[i] = labels[i][l];
      lm.positives += truth[i] > 0.5 ? 1 : 0;
    }
    lm.auc = auc(scores, truth);
    if (lm.auc) {
      auc_sum += *lm.auc;
      ++rep.auc_labels;
    }
    if (options.auc == Averaging::kMicro) {
      pooled_scores.insert(pooled_scores.end(), scores.begin(), scores.end());
      pooled_truth.insert(pooled_truth.end(), truth.begin(), truth.end());
    }
  }
  if (options.prf == Averaging::kMicro) {
    rep.precision = precision_of(micro);
    rep.recall = recall_of(micro);
  } else {
    for (const auto& lm : rep.per_label) {
      rep.precision += lm.precision / kNumLabels;
      rep.recall += lm.recall / kNumLabels;
    }
  }
  rep.f1 = harmonic(rep.precision, rep.recall);
  if (options.auc == Averaging::kMicro) {
    rep.auc = auc(pooled_scores, pooled_truth).value_or(0.0);
  } else {
    rep.auc = rep.auc_labels > 0 ? auc_sum / static_cast<double>(rep.auc_labels) : 0.0;
  }
  return rep;
}

std::vector<LabelRow> predict_all(DreamNetModel& model, std::span<const Example> examples) {
  std::vector<LabelRow> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    out.push_back(model.predict(ex.tokens, ex.features ? &*ex.features : nullptr).joined());
  }
  return out;
}

std::vector<LabelRow> labels_of(std::span<const Example> examples) {
  std::vector<LabelRow> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(ex.labels());
  return out;
}

std::vector<DreamTypeRow> stratified_eval(std::span<const LabelRow> probs, std::span<const LabelRow> labels,
                                          std::span<const DreamType> types, const MetricsOptions& options) {
  if (probs.size() != labels.size() || probs.size() != types.size()) {
    throw ShapeError("stratified_eval: predictions, labels and types differ in length");
  }
  std::vector<DreamTypeRow> rows;
  for (std::size_t t = 0; t < kNumDreamTypes; ++t) {
    const auto type = static_cast<DreamType>(t);
    std::vector<LabelRow> p, y;
    for (std::size_t i = 0; i < types.size(); ++i) {
      if (types[i] != type) continue;
      p.push_back(probs[i]);
      y.push_back(labels[i]);
    }
    DreamTypeRow row{type, std::nullopt};
    if (!p.empty()) row.metrics = multilabel_metrics(p, y, options);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<DreamTypeRow> stratified_eval(DreamNetModel& model, std::span<const Example> test,
                                          const MetricsOptions& options) {
  const auto probs = predict_all(model, test);
  const auto labels = labels_of(test);
  std::vector<DreamType> types;
  for (const auto& ex : test) types.push_back(ex.dream_type);
  return stratified_eval(probs, labels, types, options);
}

namespace {

// Centers a column and scales it to unit norm; throws on a constant column.
std::vector<double> standardize(std::span<const double> x, const char* which) {
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  std::vector<double> z(x.size());
  double ss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    z[i] = x[i] - mean;
    ss += z[i] * z[i];
  }
  if (!(ss > 0.0)) throw InputError(std::string("pearson: ") + which + " column is constant; correlation undefined");
  const double inv = 1.0 / std::sqrt(ss);
  for (double& v : z) v *= inv;
  return z;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double clamp_r(double r) { return std::clamp(r, -1.0, 1.0); }

// Guards the |r_perm| >= |r_obs| comparison against last-bit rounding.
constexpr double kTieTolerance = 1e-12;

}  // namespace

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ShapeError("pearson: columns differ in length");
  if (x.size() < 3) throw InputError("pearson: need at least 3 samples");
  return clamp_r(dot(standardize(x, "first"), standardize(y, "second")));
}

CorrelationResult correlation_test(std::span<const double> theme_col, std::span<const double> emotion_col,
                                   std::size_t n_perm, Rng& rng) {
  if (theme_col.size() != emotion_col.size()) throw ShapeError("correlation_test: columns differ in length");
  if (theme_col.size() < 3) throw InputError("pearson: need at least 3 samples");
  const auto zx = standardize(theme_col, "theme");
  auto zy = standardize(emotion_col, "emotion");
  CorrelationResult res;
  res.n = theme_col.size();
  res.r = clamp_r(dot(zx, zy));
  std::size_t extreme = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    rng.shuffle(zy);
    if (std::abs(dot(zx, zy)) >= std::abs(res.r) - kTieTolerance) ++extreme;
  }
  res.p_value = static_cast<double>(extreme + 1) / static_cast<double>(n_perm + 1);
  return res;
}

std::vector<CorrelationResult> correlation_matrix(std::span<const LabelRow> emotions_source,
                                                  std::span<const LabelRow> themes_source, std::size_t n_perm,
                                                  std::uint64_t seed) {
  if (emotions_source.size() != themes_source.size()) throw ShapeError("correlation_matrix: row counts differ");
  const std::size_t n = themes_source.size();
  if (n < 3) throw InputError("pearson: need at least 3 samples");

  auto column = [n](std::span<const LabelRow> rows, std::size_t l) {
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i) c[i] = rows[i][l];
    return c;
  };
  std::vector<std::optional<std::vector<double>>> zt(kNumThemes), ze(kNumEmotions);
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    auto c = column(themes_source, kNumEmotions + k);
    if (std::adjacent_find(c.begin(), c.end(), std::not_equal_to<>()) != c.end()) zt[k] = standardize(c, "theme");
  }
  for (std::size_t j = 0; j < kNumEmotions; ++j) {
    auto c = column(emotions_source, j);
    if (std::adjacent_find(c.begin(), c.end(), std::not_equal_to<>()) != c.end()) ze[j] = standardize(c, "emotion");
  }

  std::array<std::array<double, kNumEmotions>, kNumThemes> r{};
  std::array<std::array<std::size_t, kNumEmotions>, kNumThemes> extreme{};
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    for (std::size_t j = 0; j < kNumEmotions; ++j) {
      if (zt[k] && ze[j]) r[k][j] = clamp_r(dot(*zt[k], *ze[j]));
    }
  }
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> shuffled(n);
  for (std::size_t p = 0; p < n_perm; ++p) {
    rng.shuffle(perm);
    for (std::size_t j = 0; j < kNumEmotions; ++j) {
      if (!ze[j]) continue;
      for (std::size_t i = 0; i < n; ++i) shuffled[i] = (*ze[j])[perm[i]];
      for (std::size_t k = 0; k < kNumThemes; ++k) {
        if (zt[k] && std::abs(dot(*zt[k], shuffled)) >= std::abs(r[k][j]) - kTieTolerance) ++extreme[k][j];
      }
    }
  }
  std::vector<CorrelationResult> out;
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    for (std::size_t j = 0; j < kNumEmotions; ++j) {
      if (!zt[k] || !ze[j]) continue;
      out.push_back({std::string(kThemeNames[k]), std::string(kEmotionNames[j]), r[k][j],
                     static_cast<double>(extreme[k][j] + 1) / static_cast<double>(n_perm + 1), n});
    }
  }
  return out;
}

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("kfold: k must be at least 2");
  if (n < k) throw InputError("kfold: " + std::to_string(n) + " samples cannot fill " + std::to_string(k) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<std::size_t>> folds(k);
  for (std::size_t i = 0; i < n; ++i) folds[i % k].push_back(order[i]);
  for (auto& f : folds) std::sort(f.begin(), f.end());
  return folds;
}

MetricSummary summarize(std::span<const double> values) {
  MetricSummary s;
  if (values.empty()) return s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / static_cast<double>(values.size()));
  return s;
}

KFoldSummary kfold(std::span<const Example> examples, std::size_t k, std::uint64_t seed, const FoldRunner& run) {
  const auto folds = kfold_indices(examples.size(), k, seed);
  KFoldSummary out;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<Example> train, test;
    std::vector<bool> in_test(examples.size(), false);
    for (std::size_t i : folds[f]) in_test[i] = true;
    for (std::size_t i = 0; i < examples.size(); ++i) (in_test[i] ? test : train).push_back(examples[i]);
    out.folds.push_back(run(train, test));
  }
  auto collect = [&out](double MetricsReport::*field) {
    std::vector<double> v;
    for (const auto& r : out.folds) v.push_back(r.*field);
    return summarize(v);
  };
  out.accuracy = collect(&MetricsReport::accuracy);
  out.precision = collect(&MetricsReport::precision);
  out.recall = collect(&MetricsReport::recall);
  out.f1 = collect(&MetricsReport::f1);
  out.auc = collect(&MetricsReport::auc);
  return out;
}

RuleLexicon RuleLexicon::defaults() {
  RuleLexicon lex;
  lex.keywords = theme_keywords();
  // Folk associations between dream themes and feelings, not fitted to any data.
  auto prior = [&lex](Theme t, Emotion e) { lex.emotion_priors[index(t)][index(e)] = 0.6; };
  prior(Theme::kFlying, Emotion::kJoy);
  prior(Theme::kFalling, Emotion::kFear);
  prior(Theme::kFalling, Emotion::kAnxiety);
  prior(Theme::kPursuit, Emotion::kFear);
  prior(Theme::kLoss, Emotion::kSadness);
  prior(Theme::kSocialInteraction, Emotion::kJoy);
  prior(Theme::kWater, Emotion::kCalmness);
  prior(Theme::kAnimals, Emotion::kSurprise);
  prior(Theme::kDeath, Emotion::kSadness);
  prior(Theme::kDeath, Emotion::kFear);
  prior(Theme::kTransformation, Emotion::kSurprise);
  prior(Theme::kSchool, Emotion::kAnxiety);
  prior(Theme::kFood, Emotion::kJoy);
  prior(Theme::kTravel, Emotion::kCalmness);
  return lex;
}

RuleBaseline::RuleBaseline(RuleLexicon lexicon) : lexicon_(std::move(lexicon)) {
  for (const auto& row : lexicon_.emotion_priors) {
    for (double p : row) {
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("rule baseline: emotion priors must lie in [0, 1]");
    }
  }
}

LabelRow RuleBaseline::predict(std::string_view text) const {
  const auto words = split_words(text);
  const std::set<std::string> present(words.begin(), words.end());
  LabelRow out{};
  std::array<double, kNumEmotions> absent;
  absent.fill(1.0);
  for (std::size_t k = 0; k < kNumThemes; ++k) {
    const bool fired = std::any_of(lexicon_.keywords[k].begin(), lexicon_.keywords[k].end(),
                                   [&present](const std::string& w) { return present.count(w) > 0; });
    if (!fired) continue;
    out[kNumEmotions + k] = 1.0;
    for (std::size_t j = 0; j < kNumEmotions; ++j) absent[j] *= 1.0 - lexicon_.emotion_priors[k][j];
  }
  for (std::size_t j = 0; j < kNumEmotions; ++j) out[j] = 1.0 - absent[j];
  return out;
}

std::vector<LabelRow> RuleBaseline::predict_all(std::span<const DreamRecord> records) const {
  std::vector<LabelRow> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(predict(r.text));
  return out;
}

std::vector<AblationVariant> ablation_variants() {
  return {
      {"DNet-M", TemporalMode::kBiLstm, FusionMode::kCrossAttention},
      {"DNet-T", TemporalMode::kBiLstm, FusionMode::kNone},
      {"-LSTM", TemporalMode::kMeanPool, FusionMode::kCrossAttention},
      {"-Cross-Attention", TemporalMode::kBiLstm, FusionMode::kConcat},
  };
}

AblationResult run_ablation(std::span<const Example> train, std::span<const Example> val,
                            std::span<const Example> test, const ModelConfig& base, const TrainConfig& train_cfg,
                            std::span<const std::uint64_t> seeds, const AblationProgress& progress) {
  if (seeds.empty()) throw ConfigError("ablation: no seeds given");
  if (test.empty()) throw InputError("ablation: test split is empty");
  AblationResult result;
  const auto labels = labels_of(test);
  for (const auto& variant : ablation_variants()) {
    std::vector<MetricsReport> reports;
    for (std::uint64_t seed : seeds) {
      ModelConfig mc = base;
      mc.temporal = variant.temporal;
      mc.fusion = variant.fusion;
      mc.init_seed = seed;
      TrainConfig tc = train_cfg;
      tc.seed = seed;
      DreamNetModel model(mc);
      AblationRun run;
      run.variant = variant.name;
      run.seed = seed;
      run.history = finetune(model, train, val, tc);
      run.test = multilabel_metrics(predict_all(model, test), labels);
      if (progress) progress(run);
      reports.push_back(run.test);
      result.runs.push_back(std::move(run));
    }
    AblationRow row;
    row.variant = variant.name;
    row.seeds = reports.size();
    std::vector<double> f1s;
    for (const auto& r : reports) {
      const double w = 1.0 / static_cast<double>(reports.size());
      row.mean.accuracy += w * r.accuracy;
      row.mean.subset_accuracy += w * r.subset_accuracy;
      row.mean.precision += w * r.precision;
      row.mean.recall += w * r.recall;
      row.mean.f1 += w * r.f1;
      row.mean.auc += w * r.auc;
      row.mean.n = r.n;
      f1s.push_back(r.f1);
    }
    row.f1_stddev = summarize(f1s).stddev;
    result.rows.push_back(std::move(row));
  }
  return result;
}

namespace {

std::ofstream open_report(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write report '" + path.string() + "'");
  out.precision(6);
  out << std::fixed;
  return out;
}

void finish(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw InputError("failed writing report '" + path.string() + "'");
}

}  // namespace

void write_metrics_csv(const std::filesystem::path& path, std::span<const NamedReport> rows) {
  auto out = open_report(path);
  out << "model,accuracy,subset_accuracy,precision,recall,f1,auc,n\n";
  for (const auto& [name, r] : rows) {
    out << name << ',' << r.accuracy << ',' << r.subset_accuracy << ',' << r.precision << ',' << r.recall << ','
        << r.f1 << ',' << r.auc << ',' << r.n << '\n';
  }
  finish(out, path);
}

void write_per_label_csv(const std::filesystem::path& path, const MetricsReport& report) {
  auto out = open_report(path);
  out << "label,precision,recall,f1,auc,positives\n";
  for (std::size_t l = 0; l < kNumLabels; ++l) {
    const auto& lm = report.per_label[l];
    out << label_name(l) << ',' << lm.precision << ',' << lm.recall << ',' << lm.f1 << ',';
    if (lm.auc) out << *lm.auc;
    out << ',' << lm.positives << '\n';
  }
  finish(out, path);
}

void write_dream_types_csv(const std::filesystem::path& path, std::span<const DreamTypeRow> rows) {
  auto out = open_report(path);
  out << "dream_type,accuracy,precision,recall,f1,auc,n\n";
  for (const auto& row : rows) {
    out << name(row.type);
    if (row.metrics) {
      const auto& r = *row.metrics;
      out << ',' << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ',' << r.auc << ',' << r.n;
    } else {
      out << ",absent,absent,absent,absent,absent,0";
    }
    out << '\n';
  }
  finish(out, path);
}

void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows) {
  auto out = open_report(path);
  out << "configuration,accuracy,precision,recall,f1,f1_std,auc,seeds\n";
  for (const auto& row : rows) {
    const auto& r = row.mean;
    out << row.variant << ',' << r.accuracy << ',' << r.precision << ',' << r.recall << ',' << r.f1 << ','
        << row.f1_stddev << ',' << r.auc << ',' << row.seeds << '\n';
  }
  finish(out, path);
}

void write_ablation_runs_csv(const std::filesystem::path& path, std::span<const AblationRun> runs) {
  auto out = open_report(path);
  out << "configuration,seed,accuracy,precision,recall,f1,auc,epochs\n";
  for (const auto& run : runs) {
    const auto& r = run.test;
    out << run.variant << ',' << run.seed << ',' << r.accuracy << ',' << r.precision << ',' << r.recall << ','
        << r.f1 << ',' << r.auc << ',' << run.history.train_loss.size() << '\n';
  }
  finish(out, path);
}

void write_correlations_csv(const std::filesystem::path& path, std::span<const CorrelationResult> results) {
  auto out = open_report(path);
  out << "theme,emotion,r,p_value,n\n";
  for (const auto& c : results) {
    out << c.theme << ',' << c.emotion << ',' << c.r << ',' << c.p_value << ',' << c.n << '\n';
  }
  finish(out, path);
}

void write_predictions_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                           std::span<const LabelRow> probs) {
  if (ids.size() != probs.size()) throw ShapeError("predictions: ids and rows differ in length");
  auto out = open_report(path);
  out << "id";
  for (std::size_t l = 0; l < kNumLabels; ++l) out << ',' << label_name(l);
  out << '\n';
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out << ids[i];
    for (double p : probs[i]) out << ',' << p;
    out << '\n';
  }
  finish(out, path);
}

}  // namespace dreamnet
