#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dreamnet/autograd.hpp"
#include "dreamnet/checkpoint.hpp"
#include "dreamnet/config.hpp"
#include "dreamnet/labels.hpp"
#include "dreamnet/text.hpp"

namespace dreamnet {

// How h_t is produced from the encoder output.
enum class TemporalMode { kBiLstm, kMeanPool };
// How h_f is produced when physiological features are present.
enum class FusionMode { kCrossAttention, kConcat, kNone };

enum class Mode { kTrain, kEval };

std::string to_string(TemporalMode m);
std::string to_string(FusionMode m);

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads_text = 4;
  std::size_t d_ff = 0;  // 0 means 4 * d_model
  std::size_t max_len = 256;
  std::size_t lstm_hidden = 128;  // both directions together
  std::size_t mlp_hidden = 256;
  std::size_t phys_dim = 128;
  std::size_t fusion_heads = 8;
  std::size_t fusion_d_k = 16;
  std::size_t feature_dim = 768;
  std::size_t phys_tokens = 4;
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;
  TemporalMode temporal = TemporalMode::kBiLstm;
  FusionMode fusion = FusionMode::kCrossAttention;
  std::uint64_t init_seed = 0;

  std::size_t ff_width() const { return d_ff == 0 ? 4 * d_model : d_ff; }
  std::size_t fused_dim() const { return fusion_heads * fusion_d_k; }
  std::size_t phys_chunk() const { return (feature_dim + phys_tokens - 1) / phys_tokens; }

  void validate() const;
  KeyValueConfig to_config() const;
  static ModelConfig from_config(const KeyValueConfig& cfg);
  static ModelConfig from_config(const KeyValueConfig& cfg, const ModelConfig& base);
};

struct TransformerLayerParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor ln1_gain, ln1_bias;
  Tensor w1, b1, w2, b2;
  Tensor ln2_gain, ln2_bias;
};

struct LstmDirectionParams {
  Tensor w_ih;  // d_model x 4H, gate order i, f, g, o
  Tensor w_hh;  // H x 4H
  Tensor bias;  // 1 x 4H
};

// Every learnable weight. Tensors that the configuration does not use are
// left empty and are not listed by named().
struct ModelParams {
  Tensor token_embedding;
  std::vector<TransformerLayerParams> layers;
  LstmDirectionParams lstm_fwd, lstm_bwd;
  Tensor pool_w, pool_b;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;
  Tensor att_wq, att_wk, att_wv, att_wo, att_bo;
  Tensor concat_w, concat_b;
  Tensor emotion_w, emotion_b;
  Tensor theme_w, theme_b;
  Tensor mlm_w, mlm_b;

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
};

struct CrossAttentionOutput {
  Var fused;       // 1 x fused_dim, residual included
  Tensor weights;  // fusion_heads x N_p, each row a softmax distribution
};

struct ForwardOutput {
  Var emotions;  // 1 x 8 probabilities
  Var themes;    // 1 x 12 probabilities
  std::optional<Tensor> attention;
};

struct Prediction {
  std::array<double, kNumEmotions> emotions{};
  std::array<double, kNumThemes> themes{};
  std::optional<Tensor> attention;

  // emotions followed by themes
  std::array<double, kNumLabels> joined() const;
};

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d_model);

class DreamNetModel {
 public:
  explicit DreamNetModel(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::vector<Tensor*> parameter_list();
  std::size_t parameter_count() const;

  // Re-draws every parameter from the config's init seed.
  void initialize();
  void set_dropout(double rate);

  // h_x, one row per position. With `full_length` false only the first
  // seq.true_len rows are computed; those rows are identical to the full
  // computation because PAD keys are masked out of attention.
  Var encode_text(Graph& g, const TokenSequence& seq, Mode mode, Rng* rng, bool full_length = true);
  // 1 x lstm_hidden: final forward state over positions [0, true_len) and final
  // backward state over the same positions in reverse.
  Var bilstm(Graph& g, Var h_x, std::size_t true_len);
  Var temporal(Graph& g, Var h_x, std::size_t true_len);
  // N_p x phys_dim physiological tokens.
  Var phys_encode(Graph& g, std::span<const double> features);
  CrossAttentionOutput cross_attention(Graph& g, Var h_t, Var h_p);
  ForwardOutput forward(Graph& g, const TokenSequence& seq, const std::vector<double>* features, Mode mode,
                        Rng* rng);
  Var mlm_logits(Graph& g, Var h_x);

  // Eval-mode forward without gradient bookkeeping.
  Prediction predict(const TokenSequence& seq, const std::vector<double>* features);

  Checkpoint to_checkpoint() const;
  // Throws ConfigError on a malformed header and ShapeError when a tensor
  // does not match the configuration.
  static DreamNetModel from_checkpoint(const Checkpoint& ckpt);
  // Copies tensors whose names start with one of `prefixes`; returns how many were loaded.
  std::size_t load_matching(const Checkpoint& ckpt, std::span<const std::string> prefixes);

 private:
  Var param(Graph& g, Tensor& t) const;
  Var maybe_dropout(Var x, Mode mode, Rng* rng) const;
  Var transformer_layer(Graph& g, Var x, TransformerLayerParams& p, std::size_t valid, Mode mode, Rng* rng);

  ModelConfig config_;
  ModelParams params_;
};

}  // namespace dreamnet
