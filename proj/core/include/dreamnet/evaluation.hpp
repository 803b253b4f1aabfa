#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamnet/labels.hpp"
#include "dreamnet/model.hpp"
#include "dreamnet/rng.hpp"
#include "dreamnet/training.hpp"

namespace dreamnet {

// Label row layout used throughout: 8 emotions followed by 12 themes.
using LabelRow = std::array<double, kNumLabels>;

std::string_view label_name(std::size_t label);

enum class Averaging { kMicro, kMacro };

struct MetricsOptions {
  double threshold = 0.5;
  Averaging prf = Averaging::kMicro;
  Averaging auc = Averaging::kMacro;
};

struct LabelMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::optional<double> auc;  // absent when the label has a single class
  std::size_t positives = 0;
};

struct MetricsReport {
  // Mean correctness over all N x 20 binary decisions.
  double accuracy = 0.0;
  // Fraction of samples with all 20 decisions correct.
  double subset_accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc = 0.0;
  std::size_t auc_labels = 0;  // labels that contributed to a macro AUC
  std::size_t n = 0;
  std::array<LabelMetrics, kNumLabels> per_label{};
};

MetricsReport multilabel_metrics(std::span<const LabelRow> probs, std::span<const LabelRow> labels,
                                 const MetricsOptions& options = {});

// Probability that a random positive outranks a random negative, ties
// counting one half. nullopt when either class is missing.
std::optional<double> auc(std::span<const double> scores, std::span<const double> labels);

// Eval-mode predictions for every example; examples with features use them.
std::vector<LabelRow> predict_all(DreamNetModel& model, std::span<const Example> examples);
std::vector<LabelRow> labels_of(std::span<const Example> examples);

struct DreamTypeRow {
  DreamType type;
  std::optional<MetricsReport> metrics;  // absent when no sample has this type
};

// One row per dream type, in the fixed type order.
std::vector<DreamTypeRow> stratified_eval(std::span<const LabelRow> probs, std::span<const LabelRow> labels,
                                          std::span<const DreamType> types, const MetricsOptions& options = {});
std::vector<DreamTypeRow> stratified_eval(DreamNetModel& model, std::span<const Example> test,
                                          const MetricsOptions& options = {});

// Sample Pearson correlation. Throws InputError for N < 3 or a constant column.
double pearson(std::span<const double> x, std::span<const double> y);

struct CorrelationResult {
  std::string theme;
  std::string emotion;
  double r = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

// Pearson r with a two-sided permutation p-value, (count + 1) / (n_perm + 1),
// where count is the number of shuffles of `emotion_col` whose |r| reaches the observed |r|.
CorrelationResult correlation_test(std::span<const double> theme_col, std::span<const double> emotion_col,
                                   std::size_t n_perm, Rng& rng);

// All 12 x 8 theme/emotion pairs. Each permutation shuffles the emotion rows
// once and is shared by every pair. Pairs with a constant column are skipped.
std::vector<CorrelationResult> correlation_matrix(std::span<const LabelRow> emotions_source,
                                                  std::span<const LabelRow> themes_source, std::size_t n_perm,
                                                  std::uint64_t seed);

// Deterministic k-way partition of [0, n): a seeded shuffle dealt into k
// folds whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t k, std::uint64_t seed);

struct MetricSummary {
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation over folds
};

struct KFoldSummary {
  std::vector<MetricsReport> folds;
  MetricSummary accuracy, precision, recall, f1, auc;
};

// Trains on k-1 folds and evaluates on the held-out fold, for each fold in order.
using FoldRunner = std::function<MetricsReport(std::span<const Example> train, std::span<const Example> test)>;
KFoldSummary kfold(std::span<const Example> examples, std::size_t k, std::uint64_t seed, const FoldRunner& run);

MetricSummary summarize(std::span<const double> values);

// Keyword lexicon: a theme fires when any of its keywords occurs as a word;
// each emotion is the noisy-OR of the priors of the fired themes.
struct RuleLexicon {
  std::array<std::vector<std::string>, kNumThemes> keywords;
  std::array<std::array<double, kNumEmotions>, kNumThemes> emotion_priors{};

  static RuleLexicon defaults();
};

class RuleBaseline {
 public:
  explicit RuleBaseline(RuleLexicon lexicon = RuleLexicon::defaults());
  LabelRow predict(std::string_view text) const;
  std::vector<LabelRow> predict_all(std::span<const DreamRecord> records) const;

 private:
  RuleLexicon lexicon_;
};

struct AblationVariant {
  std::string name;
  TemporalMode temporal;
  FusionMode fusion;
};

// DNet-M, DNet-T, -LSTM, -Cross-Attention.
std::vector<AblationVariant> ablation_variants();

struct AblationRun {
  std::string variant;
  std::uint64_t seed = 0;
  MetricsReport test;
  FinetuneResult history;
};

struct AblationRow {
  std::string variant;
  MetricsReport mean;  // per-metric mean over seeds (per_label left empty)
  double f1_stddev = 0.0;
  std::size_t seeds = 0;
};

struct AblationResult {
  std::vector<AblationRun> runs;  // variant-major, seeds in the given order
  std::vector<AblationRow> rows;  // one per variant
};

// Trains and tests every variant at every seed. The seed sets both the model
// init seed and the training seed, so variants share their common weights at
// initialization.
using AblationProgress = std::function<void(const AblationRun&)>;
AblationResult run_ablation(std::span<const Example> train, std::span<const Example> val,
                            std::span<const Example> test, const ModelConfig& base, const TrainConfig& train_cfg,
                            std::span<const std::uint64_t> seeds, const AblationProgress& progress = {});

// ---- report files -----------------------------------------------------------

struct NamedReport {
  std::string name;
  MetricsReport report;
};

void write_metrics_csv(const std::filesystem::path& path, std::span<const NamedReport> rows);
void write_per_label_csv(const std::filesystem::path& path, const MetricsReport& report);
void write_dream_types_csv(const std::filesystem::path& path, std::span<const DreamTypeRow> rows);
void write_ablation_csv(const std::filesystem::path& path, std::span<const AblationRow> rows);
void write_ablation_runs_csv(const std::filesystem::path& path, std::span<const AblationRun> runs);
void write_correlations_csv(const std::filesystem::path& path, std::span<const CorrelationResult> results);
void write_predictions_csv(const std::filesystem::path& path, std::span<const std::string> ids,
                           std::span<const LabelRow> probs);

}  // namespace dreamnet
