#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dreamnet/config.hpp"
#include "dreamnet/dataset.hpp"
#include "dreamnet/eeg.hpp"
#include "dreamnet/model.hpp"
#include "dreamnet/text.hpp"

namespace dreamnet {

struct TrainConfig {
  std::size_t pre_epochs = 25;
  double pre_lr = 1e-5;
  std::size_t ft_epochs = 15;
  double ft_lr = 2e-5;
  std::size_t batch_size = 8;
  double lambda_e = 1.0;
  double lambda_s = 1.0;
  double dropout = 0.1;
  double weight_decay = 0.01;
  double mask_rate = 0.15;
  // Epochs without validation improvement before stopping; kNoPatience disables.
  std::size_t patience = 3;
  double prob_clamp = 1e-7;
  std::uint64_t seed = 0;

  static constexpr std::size_t kNoPatience = std::numeric_limits<std::size_t>::max();

  void validate() const;
  KeyValueConfig to_config() const;
  static TrainConfig from_config(const KeyValueConfig& cfg);
  static TrainConfig from_config(const KeyValueConfig& cfg, const TrainConfig& base);
};

// -[y ln p + (1-y) ln(1-p)] with p clamped to [eps, 1-eps].
double bce(double p, double y, double eps = 1e-7);

// Per-sample objective: lambda_e * sum_j bce(e_hat_j, e_j) + lambda_s * sum_k bce(s_hat_k, s_k).
double total_loss(std::span<const double> e_hat, std::span<const double> s_hat, std::span<const double> e,
                  std::span<const double> s, double lambda_e = 1.0, double lambda_s = 1.0, double eps = 1e-7);

// Batch mean of total_loss; each row holds 8 emotions then 12 themes.
double batch_total_loss(std::span<const std::array<double, kNumLabels>> predictions,
                        std::span<const std::array<double, kNumLabels>> labels, double lambda_e = 1.0,
                        double lambda_s = 1.0, double eps = 1e-7);

// Differentiable form of total_loss for one sample.
Var total_loss(Var e_hat, Var s_hat, std::span<const double> e, std::span<const double> s, double lambda_e,
               double lambda_s, double eps);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static OptimizerState for_params(std::span<Tensor* const> params);
};

// Adam with bias correction; weight decay is decoupled and applied as
// param -= lr * weight_decay * param before the moment update.
void adam_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, OptimizerState& state,
               double lr, double weight_decay);

class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience) : patience_(patience) {}

  // Returns true when `val_loss` is a new best.
  bool update(double val_loss);
  bool should_stop() const { return patience_ != TrainConfig::kNoPatience && bad_epochs_ >= patience_; }
  double best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t bad_epochs_ = 0;
  double best_ = std::numeric_limits<double>::infinity();
};

struct Example {
  std::string id;
  TokenSequence tokens;
  std::optional<std::vector<double>> features;
  std::array<double, kNumEmotions> emotions{};
  std::array<double, kNumThemes> themes{};
  DreamType dream_type = DreamType::kGeneral;

  std::array<double, kNumLabels> labels() const;
};

// EEG feature vectors keyed by record id.
std::map<std::string, std::vector<double>> featurize_all(const std::map<std::string, eeg::EegRecording>& eeg,
                                                         const eeg::FeatureOptions& opts = {});

// Records without an entry in `features` become text-only examples.
std::vector<Example> make_examples(std::span<const DreamRecord> records, const Vocab& vocab, std::size_t max_len,
                                   const std::map<std::string, std::vector<double>>& features);

// One sample's objective. Samples with features take the multimodal path.
Var example_loss(DreamNetModel& model, Graph& g, const Example& ex, const TrainConfig& cfg, Mode mode, Rng* rng);

// Mean objective over examples in eval mode (no dropout).
double evaluate_loss(DreamNetModel& model, std::span<const Example> examples, const TrainConfig& cfg);

// Called after each epoch with (epoch index, train loss, val loss or NaN).
using EpochCallback = std::function<void(std::size_t, double, double)>;

struct FinetuneResult {
  std::vector<double> train_loss;
  std::vector<double> val_loss;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Mini-batch fine-tuning with early stopping on validation loss; the best
// validation parameters are restored on return. Throws NumericalError on a
// non-finite loss.
FinetuneResult finetune(DreamNetModel& model, std::span<const Example> train, std::span<const Example> val,
                        const TrainConfig& cfg, const EpochCallback& on_epoch = {});

// Masked-LM pretraining over token sequences; returns the mean loss per epoch.
std::vector<double> pretrain(DreamNetModel& model, std::span<const TokenSequence> corpus, const TrainConfig& cfg,
                             const EpochCallback& on_epoch = {});

// Writes `epoch,train_loss,val_loss`, one row per epoch (val empty when absent).
void write_loss_csv(const std::string& path, std::span<const double> train_loss, std::span<const double> val_loss);

}  // namespace dreamnet
