#include "dreamnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <optional>
#include <unordered_map>

#include "dreamnet/errors.hpp"

namespace dreamnet {

void TrainConfig::validate() const {
  if (!(lambda_e >= 0.0 && lambda_s >= 0.0)) throw ConfigError("train: lambda_e and lambda_s must be >= 0");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ConfigError("train: mask_rate must lie in [0, 1]");
  if (!(prob_clamp > 0.0 && prob_clamp < 0.5)) throw ConfigError("train: prob_clamp must lie in (0, 0.5)");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("train: dropout must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
  if (!(pre_lr >= 0.0 && ft_lr >= 0.0)) throw ConfigError("train: learning rates must be >= 0");
  if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
}

KeyValueConfig TrainConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("pre_epochs", std::to_string(pre_epochs));
  cfg.set("pre_lr", format_double(pre_lr));
  cfg.set("ft_epochs", std::to_string(ft_epochs));
  cfg.set("ft_lr", format_double(ft_lr));
  cfg.set("batch_size", std::to_string(batch_size));
  cfg.set("lambda_e", format_double(lambda_e));
  cfg.set("lambda_s", format_double(lambda_s));
  cfg.set("dropout", format_double(dropout));
  cfg.set("weight_decay", format_double(weight_decay));
  cfg.set("mask_rate", format_double(mask_rate));
  cfg.set("patience", patience == kNoPatience ? "none" : std::to_string(patience));
  cfg.set("prob_clamp", format_double(prob_clamp));
  cfg.set("seed", std::to_string(seed));
  return cfg;
}

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg) { return from_config(cfg, TrainConfig{}); }

TrainConfig TrainConfig::from_config(const KeyValueConfig& cfg, const TrainConfig& base) {
  TrainConfig t = base;
  t.pre_epochs = cfg.get_size("pre_epochs", t.pre_epochs);
  t.pre_lr = cfg.get_double("pre_lr", t.pre_lr);
  t.ft_epochs = cfg.get_size("ft_epochs", t.ft_epochs);
  t.ft_lr = cfg.get_double("ft_lr", t.ft_lr);
  t.batch_size = cfg.get_size("batch_size", t.batch_size);
  t.lambda_e = cfg.get_double("lambda_e", t.lambda_e);
  t.lambda_s = cfg.get_double("lambda_s", t.lambda_s);
  t.dropout = cfg.get_double("dropout", t.dropout);
  t.weight_decay = cfg.get_double("weight_decay", t.weight_decay);
  t.mask_rate = cfg.get_double("mask_rate", t.mask_rate);
  if (auto p = cfg.get("patience"); p && *p == "none") {
    t.patience = kNoPatience;
  } else {
    t.patience = cfg.get_size("patience", t.patience);
  }
  t.prob_clamp = cfg.get_double("prob_clamp", t.prob_clamp);
  t.seed = cfg.get_size("seed", t.seed);
  t.validate();
  return t;
}

double bce(double p, double y, double eps) {
  const double q = std::clamp(p, eps, 1.0 - eps);
  return -(y * std::log(q) + (1.0 - y) * std::log(1.0 - q));
}

double total_loss(std::span<const double> e_hat, std::span<const double> s_hat, std::span<const double> e,
                  std::span<const double> s, double lambda_e, double lambda_s, double eps) {
  if (e_hat.size() != kNumEmotions || e.size() != kNumEmotions) {
    throw ShapeError("total_loss: emotion vectors must have " + std::to_string(kNumEmotions) + " entries");
  }
  if (s_hat.size() != kNumThemes || s.size() != kNumThemes) {
    throw ShapeError("total_loss: theme vectors must have " + std::to_string(kNumThemes) + " entries");
  }
  double le = 0.0, ls = 0.0;
  for (std::size_t j = 0; j < kNumEmotions; ++j) le += bce(e_hat[j], e[j], eps);
  for (std::size_t k = 0; k < kNumThemes; ++k) ls += bce(s_hat[k], s[k], eps);
  return lambda_e * le + lambda_s * ls;
}

double batch_total_loss(std::span<const std::array<double, kNumLabels>> predictions,
                        std::span<const std::array<double, kNumLabels>> labels, double lambda_e, double lambda_s,
                        double eps) {
  if (predictions.size() != labels.size()) throw ShapeError("batch_total_loss: batch sizes differ");
  if (predictions.empty()) throw InputError("batch_total_loss: empty batch");
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    const auto& y = labels[i];
    total += total_loss(std::span(p).first(kNumEmotions), std::span(p).subspan(kNumEmotions),
                        std::span(y).first(kNumEmotions), std::span(y).subspan(kNumEmotions), lambda_e, lambda_s,
                        eps);
  }
  return total / static_cast<double>(predictions.size());
}

Var total_loss(Var e_hat, Var s_hat, std::span<const double> e, std::span<const double> s, double lambda_e,
               double lambda_s, double eps) {
  const Var le = scale(bce_sum(e_hat, e, eps), lambda_e);
  const Var ls = scale(bce_sum(s_hat, s, eps), lambda_s);
  return add(le, ls);
}

OptimizerState OptimizerState::for_params(std::span<Tensor* const> params) {
  OptimizerState st;
  for (const Tensor* p : params) {
    st.m.emplace_back(p->numel(), 0.0);
    st.v.emplace_back(p->numel(), 0.0);
  }
  return st;
}

void adam_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, OptimizerState& state,
               double lr, double weight_decay) {
  if (grads.size() != params.size() || state.m.size() != params.size()) {
    throw ContractError("adam_step: params, grads and optimizer state disagree in length");
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto& w = params[p]->data;
    const auto& g = grads[p];
    auto& m = state.m[p];
    auto& v = state.v[p];
    if (g.size() != w.size() || m.size() != w.size()) throw ContractError("adam_step: gradient shape mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      w[i] -= lr * weight_decay * w[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

bool EarlyStopper::update(double val_loss) {
  if (val_loss < best_) {
    best_ = val_loss;
    bad_epochs_ = 0;
    return true;
  }
  ++bad_epochs_;
  return false;
}

std::array<double, kNumLabels> Example::labels() const {
  std::array<double, kNumLabels> out{};
  std::copy(emotions.begin(), emotions.end(), out.begin());
  std::copy(themes.begin(), themes.end(), out.begin() + kNumEmotions);
  return out;
}

std::map<std::string, std::vector<double>> featurize_all(const std::map<std::string, eeg::EegRecording>& eeg,
                                                         const eeg::FeatureOptions& opts) {
  std::map<std::string, std::vector<double>> out;
  for (const auto& [id, rec] : eeg) out.emplace(id, eeg::featurize(rec, opts));
  return out;
}

std::vector<Example> make_examples(std::span<const DreamRecord> records, const Vocab& vocab, std::size_t max_len,
                                   const std::map<std::string, std::vector<double>>& features) {
  std::vector<Example> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    Example ex;
    ex.id = r.id;
    ex.tokens = tokenize(r.text, vocab, max_len);
    if (auto it = features.find(r.id); it != features.end()) ex.features = it->second;
    std::copy(r.emotions.begin(), r.emotions.end(), ex.emotions.begin());
    std::copy(r.themes.begin(), r.themes.end(), ex.themes.begin());
    ex.dream_type = r.dream_type;
    out.push_back(std::move(ex));
  }
  return out;
}

Var example_loss(DreamNetModel& model, Graph& g, const Example& ex, const TrainConfig& cfg, Mode mode, Rng* rng) {
  const std::vector<double>* features = ex.features ? &*ex.features : nullptr;
  auto out = model.forward(g, ex.tokens, features, mode, rng);
  return total_loss(out.emotions, out.themes, ex.emotions, ex.themes, cfg.lambda_e, cfg.lambda_s, cfg.prob_clamp);
}

double evaluate_loss(DreamNetModel& model, std::span<const Example> examples, const TrainConfig& cfg) {
  if (examples.empty()) throw InputError("evaluate_loss: no examples");
  double total = 0.0;
  for (const auto& ex : examples) {
    Graph g;
    g.set_grad_enabled(false);
    total += example_loss(model, g, ex, cfg, Mode::kEval, nullptr).item();
  }
  return total / static_cast<double>(examples.size());
}

namespace {

void check_finite(double loss, const std::string& what, std::size_t epoch) {
  if (!std::isfinite(loss)) {
    throw NumericalError(what + ": non-finite loss at epoch " + std::to_string(epoch + 1));
  }
}

// Runs one epoch of shuffled mini-batches. `sample_loss` builds the loss of
// sample i on a fresh graph (or returns nullopt to skip it). Gradients are
// averaged over the samples of each batch in index order. Returns the mean
// sample loss, or nullopt when every sample was skipped.
template <typename SampleLoss>
std::optional<double> run_epoch(std::span<Tensor* const> params, OptimizerState& state, std::size_t n, const TrainConfig& cfg,
                 double lr, Rng& rng, SampleLoss&& sample_loss) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<std::vector<double>> grads;
  grads.reserve(params.size());
  for (const Tensor* p : params) grads.emplace_back(p->numel(), 0.0);
  std::unordered_map<const Tensor*, std::size_t> slot;
  for (std::size_t i = 0; i < params.size(); ++i) slot[params[i]] = i;

  double epoch_total = 0.0;
  std::size_t epoch_count = 0;
  for (std::size_t start = 0; start < n; start += cfg.batch_size) {
    const std::size_t end = std::min(n, start + cfg.batch_size);
    for (auto& g : grads) std::fill(g.begin(), g.end(), 0.0);
    std::size_t used = 0;
    for (std::size_t b = start; b < end; ++b) {
      Graph g;
      auto loss = sample_loss(g, order[b]);
      if (!loss) continue;
      const double value = loss->item();
      if (!std::isfinite(value)) return value;
      g.backward(*loss);
      for (auto& [param, grad] : g.collect_param_grads()) {
        auto it = slot.find(param);
        if (it == slot.end()) continue;
        auto& acc = grads[it->second];
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += grad[i];
      }
      epoch_total += value;
      ++epoch_count;
      ++used;
    }
    if (used == 0) continue;
    const double inv = 1.0 / static_cast<double>(used);
    for (auto& g : grads) {
      for (double& x : g) x *= inv;
    }
    adam_step(params, grads, state, lr, cfg.weight_decay);
  }
  if (epoch_count == 0) return std::nullopt;
  return epoch_total / static_cast<double>(epoch_count);
}

// Parameters touched by fine-tuning; the MLM head is left alone.
std::vector<Tensor*> finetune_params(DreamNetModel& model) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : model.params().named()) {
    if (name.rfind("mlm.", 0) != 0) out.push_back(t);
  }
  return out;
}

// Parameters touched by pretraining: embeddings, encoder and MLM head.
std::vector<Tensor*> pretrain_params(DreamNetModel& model) {
  std::vector<Tensor*> out;
  for (auto& [name, t] : model.params().named()) {
    if (name.rfind("embed.", 0) == 0 || name.rfind("encoder.", 0) == 0 || name.rfind("mlm.", 0) == 0) {
      out.push_back(t);
    }
  }
  return out;
}

}  // namespace

FinetuneResult finetune(DreamNetModel& model, std::span<const Example> train, std::span<const Example> val,
                        const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate();
  if (train.empty()) throw InputError("finetune: training split is empty");
  if (val.empty()) throw InputError("finetune: validation split is empty");
  model.set_dropout(cfg.dropout);
  const auto params = finetune_params(model);
  auto state = OptimizerState::for_params(params);
  Rng rng(mix_seed(cfg.seed, fnv1a("finetune")));
  EarlyStopper stopper(cfg.patience);
  std::vector<std::vector<double>> best;

  FinetuneResult result;
  for (std::size_t epoch = 0; epoch < cfg.ft_epochs; ++epoch) {
    const double train_loss = *run_epoch(params, state, train.size(), cfg, cfg.ft_lr, rng,
                                         [&](Graph& g, std::size_t i) -> std::optional<Var> {
                                           return example_loss(model, g, train[i], cfg, Mode::kTrain, &rng);
                                         });
    check_finite(train_loss, "finetune", epoch);
    const double val_loss = evaluate_loss(model, val, cfg);
    check_finite(val_loss, "finetune validation", epoch);
    result.train_loss.push_back(train_loss);
    result.val_loss.push_back(val_loss);
    if (on_epoch) on_epoch(epoch, train_loss, val_loss);
    if (stopper.update(val_loss)) {
      result.best_epoch = epoch;
      best.clear();
      for (const Tensor* p : params) best.push_back(p->data);
    }
    if (stopper.should_stop()) {
      result.stopped_early = epoch + 1 < cfg.ft_epochs;
      break;
    }
  }
  for (std::size_t i = 0; i < best.size(); ++i) params[i]->data = best[i];
  return result;
}

std::vector<double> pretrain(DreamNetModel& model, std::span<const TokenSequence> corpus, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  cfg.validate();
  if (corpus.empty()) throw InputError("pretrain: corpus is empty");
  if (cfg.mask_rate == 0.0) throw ConfigError("pretrain: mask_rate 0 leaves no masked positions to predict");
  model.set_dropout(cfg.dropout);
  const auto params = pretrain_params(model);
  auto state = OptimizerState::for_params(params);
  Rng rng(mix_seed(cfg.seed, fnv1a("pretrain")));

  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < cfg.pre_epochs; ++epoch) {
    const auto loss = run_epoch(params, state, corpus.size(), cfg, cfg.pre_lr, rng,
                                  [&](Graph& g, std::size_t i) -> std::optional<Var> {
                                    auto masked = mask_tokens(corpus[i], cfg.mask_rate, rng);
                                    if (masked.targets.empty()) return std::nullopt;
                                    const Var h_x = model.encode_text(g, masked.masked, Mode::kTrain, &rng, false);
                                    return softmax_cross_entropy(model.mlm_logits(g, h_x), masked.targets);
                                  });
    if (!loss) throw InputError("pretrain: no position was masked in epoch " + std::to_string(epoch + 1));
    check_finite(*loss, "pretrain", epoch);
    history.push_back(*loss);
    if (on_epoch) on_epoch(epoch, *loss, std::numeric_limits<double>::quiet_NaN());
  }
  return history;
}

void write_loss_csv(const std::string& path, std::span<const double> train_loss, std::span<const double> val_loss) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write loss history to '" + path + "'");
  out.precision(10);
  out << "epoch,train_loss,val_loss\n";
  for (std::size_t i = 0; i < train_loss.size(); ++i) {
    out << (i + 1) << ',' << train_loss[i] << ',';
    if (i < val_loss.size()) out << val_loss[i];
    out << '\n';
  }
  if (!out) throw InputError("failed writing loss history to '" + path + "'");
}

}  // namespace dreamnet
