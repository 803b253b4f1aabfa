#include "dreamnet/model.hpp"

#include <cmath>
#include <functional>

#include "dreamnet/errors.hpp"

namespace dreamnet {

namespace {

constexpr double kForgetBias = 1.0;

enum class InitKind { kUniform, kOnes, kZeros };

struct ParamSlot {
  std::string name;
  Tensor* tensor;
  std::size_t rows, cols;
  InitKind kind;
  std::size_t fan_in;
};

// Single source of truth for parameter names, shapes and init rules.
template <typename Params>
void visit_params(const ModelConfig& c, Params& p, const std::function<void(const ParamSlot&)>& fn) {
  auto* self = const_cast<ModelParams*>(&p);
  auto w = [&](const std::string& name, Tensor& t, std::size_t rows, std::size_t cols, std::size_t fan_in) {
    fn({name, &t, rows, cols, InitKind::kUniform, fan_in});
  };
  auto fixed = [&](const std::string& name, Tensor& t, std::size_t cols, InitKind kind) {
    fn({name, &t, 1, cols, kind, 1});
  };
  const std::size_t d = c.d_model, ff = c.ff_width(), h = c.lstm_hidden / 2, fused = c.fused_dim();

  // Embedding rows are selected one-hot, so each output sees a single input.
  w("embed.token", self->token_embedding, c.vocab_size, d, 1);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    auto& L = self->layers[l];
    const std::string pre = "encoder." + std::to_string(l) + ".";
    w(pre + "attn.wq", L.wq, d, d, d);
    w(pre + "attn.bq", L.bq, 1, d, d);
    w(pre + "attn.wk", L.wk, d, d, d);
    w(pre + "attn.bk", L.bk, 1, d, d);
    w(pre + "attn.wv", L.wv, d, d, d);
    w(pre + "attn.bv", L.bv, 1, d, d);
    w(pre + "attn.wo", L.wo, d, d, d);
    w(pre + "attn.bo", L.bo, 1, d, d);
    fixed(pre + "ln1.gain", L.ln1_gain, d, InitKind::kOnes);
    fixed(pre + "ln1.bias", L.ln1_bias, d, InitKind::kZeros);
    w(pre + "ffn.w1", L.w1, d, ff, d);
    w(pre + "ffn.b1", L.b1, 1, ff, d);
    w(pre + "ffn.w2", L.w2, ff, d, ff);
    w(pre + "ffn.b2", L.b2, 1, d, ff);
    fixed(pre + "ln2.gain", L.ln2_gain, d, InitKind::kOnes);
    fixed(pre + "ln2.bias", L.ln2_bias, d, InitKind::kZeros);
  }
  if (c.temporal == TemporalMode::kBiLstm) {
    for (auto [dir, P] : {std::pair{"fwd", &self->lstm_fwd}, std::pair{"bwd", &self->lstm_bwd}}) {
      const std::string pre = std::string("lstm.") + dir + ".";
      w(pre + "w_ih", P->w_ih, d, 4 * h, h);
      w(pre + "w_hh", P->w_hh, h, 4 * h, h);
      w(pre + "bias", P->bias, 1, 4 * h, h);
    }
  } else {
    w("pool.w", self->pool_w, d, c.lstm_hidden, d);
    w("pool.b", self->pool_b, 1, c.lstm_hidden, d);
  }
  if (c.fusion != FusionMode::kNone) {
    const std::size_t chunk = c.phys_chunk();
    w("phys.w1", self->mlp_w1, chunk, c.mlp_hidden, chunk);
    w("phys.b1", self->mlp_b1, 1, c.mlp_hidden, chunk);
    w("phys.w2", self->mlp_w2, c.mlp_hidden, c.phys_dim, c.mlp_hidden);
    w("phys.b2", self->mlp_b2, 1, c.phys_dim, c.mlp_hidden);
  }
  if (c.fusion == FusionMode::kCrossAttention) {
    w("fusion.wq", self->att_wq, c.lstm_hidden, fused, c.lstm_hidden);
    w("fusion.wk", self->att_wk, c.phys_dim, fused, c.phys_dim);
    w("fusion.wv", self->att_wv, c.phys_dim, fused, c.phys_dim);
    w("fusion.wo", self->att_wo, fused, c.lstm_hidden, fused);
    w("fusion.bo", self->att_bo, 1, c.lstm_hidden, fused);
  } else if (c.fusion == FusionMode::kConcat) {
    w("concat.w", self->concat_w, c.lstm_hidden + c.phys_dim, c.lstm_hidden, c.lstm_hidden + c.phys_dim);
    w("concat.b", self->concat_b, 1, c.lstm_hidden, c.lstm_hidden + c.phys_dim);
  }
  w("head.emotion.w", self->emotion_w, c.lstm_hidden, kNumEmotions, c.lstm_hidden);
  w("head.emotion.b", self->emotion_b, 1, kNumEmotions, c.lstm_hidden);
  w("head.theme.w", self->theme_w, c.lstm_hidden, kNumThemes, c.lstm_hidden);
  w("head.theme.b", self->theme_b, 1, kNumThemes, c.lstm_hidden);
  w("mlm.w", self->mlm_w, d, c.vocab_size, d);
  w("mlm.b", self->mlm_b, 1, c.vocab_size, d);
}

std::size_t parse_choice(const std::string& key, const std::string& value, std::initializer_list<const char*> names) {
  std::size_t i = 0;
  for (const char* n : names) {
    if (value == n) return i;
    ++i;
  }
  throw ConfigError("config key '" + key + "': unknown value '" + value + "'");
}

}  // namespace

std::string to_string(TemporalMode m) { return m == TemporalMode::kBiLstm ? "bilstm" : "mean_pool"; }

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::kCrossAttention: return "cross_attention";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kNone: return "none";
  }
  return "none";
}

void ModelConfig::validate() const {
  if (vocab_size < Vocab::kReserved) throw ConfigError("model: vocab_size must cover the reserved tokens");
  if (d_model == 0 || n_heads_text == 0 || d_model % n_heads_text != 0) {
    throw ConfigError("model: d_model must be a positive multiple of n_heads_text");
  }
  if (max_len == 0) throw ConfigError("model: max_len must be positive");
  if (fused_dim() != 128 || lstm_hidden != 128 || phys_dim != 128) {
    throw ConfigError("model: fusion_heads x fusion_d_k, lstm_hidden and phys_dim must all equal 128");
  }
  if (phys_tokens == 0 || phys_tokens > feature_dim) {
    throw ConfigError("model: phys_tokens must lie in [1, feature_dim]");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("model: layer_norm_eps must be positive");
}

KeyValueConfig ModelConfig::to_config() const {
  KeyValueConfig cfg;
  cfg.set("vocab_size", std::to_string(vocab_size));
  cfg.set("d_model", std::to_string(d_model));
  cfg.set("n_layers", std::to_string(n_layers));
  cfg.set("n_heads_text", std::to_string(n_heads_text));
  cfg.set("d_ff", std::to_string(d_ff));
  cfg.set("max_len", std::to_string(max_len));
  cfg.set("lstm_hidden", std::to_string(lstm_hidden));
  cfg.set("mlp_hidden", std::to_string(mlp_hidden));
  cfg.set("phys_dim", std::to_string(phys_dim));
  cfg.set("fusion_heads", std::to_string(fusion_heads));
  cfg.set("fusion_d_k", std::to_string(fusion_d_k));
  cfg.set("feature_dim", std::to_string(feature_dim));
  cfg.set("phys_tokens", std::to_string(phys_tokens));
  cfg.set("dropout", format_double(dropout));
  cfg.set("layer_norm_eps", format_double(layer_norm_eps));
  cfg.set("temporal", to_string(temporal));
  cfg.set("fusion", to_string(fusion));
  cfg.set("init_seed", std::to_string(init_seed));
  return cfg;
}

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg) { return from_config(cfg, ModelConfig{}); }

ModelConfig ModelConfig::from_config(const KeyValueConfig& cfg, const ModelConfig& base) {
  ModelConfig c = base;
  c.vocab_size = cfg.get_size("vocab_size", c.vocab_size);
  c.d_model = cfg.get_size("d_model", c.d_model);
  c.n_layers = cfg.get_size("n_layers", c.n_layers);
  c.n_heads_text = cfg.get_size("n_heads_text", c.n_heads_text);
  c.d_ff = cfg.get_size("d_ff", c.d_ff);
  c.max_len = cfg.get_size("max_len", c.max_len);
  c.lstm_hidden = cfg.get_size("lstm_hidden", c.lstm_hidden);
  c.mlp_hidden = cfg.get_size("mlp_hidden", c.mlp_hidden);
  c.phys_dim = cfg.get_size("phys_dim", c.phys_dim);
  c.fusion_heads = cfg.get_size("fusion_heads", c.fusion_heads);
  c.fusion_d_k = cfg.get_size("fusion_d_k", c.fusion_d_k);
  c.feature_dim = cfg.get_size("feature_dim", c.feature_dim);
  c.phys_tokens = cfg.get_size("phys_tokens", c.phys_tokens);
  c.dropout = cfg.get_double("dropout", c.dropout);
  c.layer_norm_eps = cfg.get_double("layer_norm_eps", c.layer_norm_eps);
  if (auto v = cfg.get("temporal")) {
    c.temporal = static_cast<TemporalMode>(parse_choice("temporal", *v, {"bilstm", "mean_pool"}));
  }
  if (auto v = cfg.get("fusion")) {
    c.fusion = static_cast<FusionMode>(parse_choice("fusion", *v, {"cross_attention", "concat", "none"}));
  }
  c.init_seed = static_cast<std::uint64_t>(
      cfg.get_size("init_seed", cfg.get_size("seed", static_cast<std::size_t>(c.init_seed))));
  return c;
}

std::vector<std::pair<std::string, Tensor*>> ModelParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  // Only tensors that have been shaped belong to the active configuration.
  auto add = [&out](const std::string& n, Tensor& t) {
    if (!t.shape.empty()) out.emplace_back(n, &t);
  };
  add("embed.token", token_embedding);
  for (std::size_t l = 0; l < layers.size(); ++l) {
    auto& L = layers[l];
    const std::string pre = "encoder." + std::to_string(l) + ".";
    add(pre + "attn.wq", L.wq);
    add(pre + "attn.bq", L.bq);
    add(pre + "attn.wk", L.wk);
    add(pre + "attn.bk", L.bk);
    add(pre + "attn.wv", L.wv);
    add(pre + "attn.bv", L.bv);
    add(pre + "attn.wo", L.wo);
    add(pre + "attn.bo", L.bo);
    add(pre + "ln1.gain", L.ln1_gain);
    add(pre + "ln1.bias", L.ln1_bias);
    add(pre + "ffn.w1", L.w1);
    add(pre + "ffn.b1", L.b1);
    add(pre + "ffn.w2", L.w2);
    add(pre + "ffn.b2", L.b2);
    add(pre + "ln2.gain", L.ln2_gain);
    add(pre + "ln2.bias", L.ln2_bias);
  }
  add("lstm.fwd.w_ih", lstm_fwd.w_ih);
  add("lstm.fwd.w_hh", lstm_fwd.w_hh);
  add("lstm.fwd.bias", lstm_fwd.bias);
  add("lstm.bwd.w_ih", lstm_bwd.w_ih);
  add("lstm.bwd.w_hh", lstm_bwd.w_hh);
  add("lstm.bwd.bias", lstm_bwd.bias);
  add("pool.w", pool_w);
  add("pool.b", pool_b);
  add("phys.w1", mlp_w1);
  add("phys.b1", mlp_b1);
  add("phys.w2", mlp_w2);
  add("phys.b2", mlp_b2);
  add("fusion.wq", att_wq);
  add("fusion.wk", att_wk);
  add("fusion.wv", att_wv);
  add("fusion.wo", att_wo);
  add("fusion.bo", att_bo);
  add("concat.w", concat_w);
  add("concat.b", concat_b);
  add("head.emotion.w", emotion_w);
  add("head.emotion.b", emotion_b);
  add("head.theme.w", theme_w);
  add("head.theme.b", theme_b);
  add("mlm.w", mlm_w);
  add("mlm.b", mlm_b);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named() const {
  auto mut = const_cast<ModelParams*>(this)->named();
  return {mut.begin(), mut.end()};
}

std::array<double, kNumLabels> Prediction::joined() const {
  std::array<double, kNumLabels> out{};
  std::copy(emotions.begin(), emotions.end(), out.begin());
  std::copy(themes.begin(), themes.end(), out.begin() + kNumEmotions);
  return out;
}

std::vector<double> sinusoidal_positions(std::size_t length, std::size_t d_model) {
  std::vector<double> pe(length * d_model);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      pe[pos * d_model + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return pe;
}

DreamNetModel::DreamNetModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  params_.layers.resize(config_.n_layers);
  initialize();
}

void DreamNetModel::initialize() {
  visit_params(config_, params_, [this](const ParamSlot& s) {
    *s.tensor = Tensor::zeros(s.rows, s.cols);
    if (s.kind == InitKind::kOnes) {
      std::fill(s.tensor->data.begin(), s.tensor->data.end(), 1.0);
    } else if (s.kind == InitKind::kUniform) {
      // Per-name streams keep each tensor's values independent of which
      // other modules the configuration enables.
      Rng rng(mix_seed(config_.init_seed, fnv1a(s.name)));
      const double bound = 1.0 / std::sqrt(static_cast<double>(s.fan_in));
      for (double& v : s.tensor->data) v = rng.uniform(-bound, bound);
    }
  });
  // Forget gates start biased open so early tokens survive the first epochs.
  for (auto* dir : {&params_.lstm_fwd, &params_.lstm_bwd}) {
    if (dir->bias.shape.empty()) continue;
    const std::size_t h = dir->bias.cols() / 4;
    for (std::size_t j = h; j < 2 * h; ++j) dir->bias.data[j] += kForgetBias;
  }
}

void DreamNetModel::set_dropout(double rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ConfigError("model: dropout must lie in [0, 1)");
  config_.dropout = rate;
}

std::vector<Tensor*> DreamNetModel::parameter_list() {
  std::vector<Tensor*> out;
  for (auto& [n, t] : params_.named()) out.push_back(t);
  return out;
}

std::size_t DreamNetModel::parameter_count() const {
  std::size_t total = 0;
  for (const auto& [n, t] : params_.named()) total += t->numel();
  return total;
}

Var DreamNetModel::param(Graph& g, Tensor& t) const { return g.parameter(t); }

Var DreamNetModel::maybe_dropout(Var x, Mode mode, Rng* rng) const {
  if (mode != Mode::kTrain || config_.dropout <= 0.0) return x;
  if (rng == nullptr) throw ContractError("train-mode forward requires an rng for dropout");
  return dropout(x, config_.dropout, *rng);
}

Var DreamNetModel::transformer_layer(Graph& g, Var x, TransformerLayerParams& p, std::size_t valid, Mode mode,
                                     Rng* rng) {
  const std::size_t d = config_.d_model, heads = config_.n_heads_text, dh = d / heads;
  const Var q = add_row(matmul(x, param(g, p.wq)), param(g, p.bq));
  const Var k = add_row(matmul(x, param(g, p.wk)), param(g, p.bk));
  const Var v = add_row(matmul(x, param(g, p.wv)), param(g, p.bv));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? q : slice_cols(q, h * dh, dh);
    const Var kh = heads == 1 ? k : slice_cols(k, h * dh, dh);
    const Var vh = heads == 1 ? v : slice_cols(v, h * dh, dh);
    const Var weights = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt), valid);
    head_out.push_back(matmul(weights, vh));
  }
  const Var merged = heads == 1 ? head_out[0] : concat_cols(head_out);
  Var attn = add_row(matmul(merged, param(g, p.wo)), param(g, p.bo));
  attn = maybe_dropout(attn, mode, rng);
  const Var x1 = layer_norm_rows(add(x, attn), param(g, p.ln1_gain), param(g, p.ln1_bias), config_.layer_norm_eps);
  const Var hidden = relu(add_row(matmul(x1, param(g, p.w1)), param(g, p.b1)));
  Var ff = add_row(matmul(hidden, param(g, p.w2)), param(g, p.b2));
  ff = maybe_dropout(ff, mode, rng);
  return layer_norm_rows(add(x1, ff), param(g, p.ln2_gain), param(g, p.ln2_bias), config_.layer_norm_eps);
}

Var DreamNetModel::encode_text(Graph& g, const TokenSequence& seq, Mode mode, Rng* rng, bool full_length) {
  if (seq.ids.size() != config_.max_len) {
    throw ShapeError("encode_text: sequence length " + std::to_string(seq.ids.size()) + " != max_len " +
                     std::to_string(config_.max_len));
  }
  if (seq.true_len == 0 || seq.true_len > seq.ids.size()) throw InputError("encode_text: invalid true_len");
  for (std::size_t id : seq.ids) {
    if (id >= config_.vocab_size) {
      throw InputError("encode_text: token id " + std::to_string(id) + " out of range for vocabulary of " +
                       std::to_string(config_.vocab_size));
    }
  }
  const std::size_t rows = full_length ? seq.ids.size() : seq.true_len;
  const std::span<const std::size_t> ids(seq.ids.data(), rows);
  Var x = embedding(param(g, params_.token_embedding), ids);
  x = add(x, g.constant(Tensor({rows, config_.d_model}, sinusoidal_positions(rows, config_.d_model))));
  x = maybe_dropout(x, mode, rng);
  for (auto& layer : params_.layers) x = transformer_layer(g, x, layer, seq.true_len, mode, rng);
  return x;
}

Var DreamNetModel::bilstm(Graph& g, Var h_x, std::size_t true_len) {
  if (params_.lstm_fwd.w_ih.shape.empty()) throw ContractError("bilstm: model has no Bi-LSTM parameters");
  if (true_len == 0) throw InputError("bilstm: true_len must be positive");
  if (h_x.cols() != config_.d_model) throw ShapeError("bilstm: h_x width does not match d_model");
  if (true_len > h_x.rows()) throw ShapeError("bilstm: true_len exceeds h_x rows");
  const Var x = h_x.rows() == true_len ? h_x : slice_rows(h_x, 0, true_len);
  const Var pf = add_row(matmul(x, param(g, params_.lstm_fwd.w_ih)), param(g, params_.lstm_fwd.bias));
  const Var pb = add_row(matmul(x, param(g, params_.lstm_bwd.w_ih)), param(g, params_.lstm_bwd.bias));
  const Var hf = lstm_final_state(pf, param(g, params_.lstm_fwd.w_hh), false);
  const Var hb = lstm_final_state(pb, param(g, params_.lstm_bwd.w_hh), true);
  const Var parts[] = {hf, hb};
  return concat_cols(parts);
}

Var DreamNetModel::temporal(Graph& g, Var h_x, std::size_t true_len) {
  if (config_.temporal == TemporalMode::kBiLstm) return bilstm(g, h_x, true_len);
  if (true_len == 0) throw InputError("temporal: true_len must be positive");
  const Var x = h_x.rows() == true_len ? h_x : slice_rows(h_x, 0, true_len);
  return add_row(matmul(mean_rows(x), param(g, params_.pool_w)), param(g, params_.pool_b));
}

Var DreamNetModel::phys_encode(Graph& g, std::span<const double> features) {
  if (config_.fusion == FusionMode::kNone) throw ContractError("phys_encode: model has no physiological encoder");
  if (features.size() != config_.feature_dim) {
    throw ShapeError("phys_encode: expected " + std::to_string(config_.feature_dim) + " features, got " +
                     std::to_string(features.size()));
  }
  const std::size_t tokens = config_.phys_tokens, chunk = config_.phys_chunk();
  Tensor x = Tensor::zeros(tokens, chunk);
  std::copy(features.begin(), features.end(), x.data.begin());
  const Var hidden = relu(add_row(matmul(g.constant(std::move(x)), param(g, params_.mlp_w1)), param(g, params_.mlp_b1)));
  return add_row(matmul(hidden, param(g, params_.mlp_w2)), param(g, params_.mlp_b2));
}

CrossAttentionOutput DreamNetModel::cross_attention(Graph& g, Var h_t, Var h_p) {
  if (config_.fusion != FusionMode::kCrossAttention) throw ContractError("cross_attention: not configured");
  if (h_t.rows() != 1 || h_t.cols() != config_.lstm_hidden) {
    throw ShapeError("cross_attention: h_t must be 1 x " + std::to_string(config_.lstm_hidden) + ", got " +
                     shape_str(h_t.value().shape));
  }
  if (h_p.cols() != config_.phys_dim || h_p.rows() == 0) {
    throw ShapeError("cross_attention: h_p must be N_p x " + std::to_string(config_.phys_dim) + ", got " +
                     shape_str(h_p.value().shape));
  }
  const std::size_t heads = config_.fusion_heads, dk = config_.fusion_d_k, np = h_p.rows();
  const Var q = matmul(h_t, param(g, params_.att_wq));
  const Var k = matmul(h_p, param(g, params_.att_wk));
  const Var v = matmul(h_p, param(g, params_.att_wv));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));
  CrossAttentionOutput out{Var{}, Tensor::zeros(heads, np)};
  std::vector<Var> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Var scores = scale(matmul_nt(slice_cols(q, h * dk, dk), slice_cols(k, h * dk, dk)), inv_sqrt);
    const Var weights = softmax_rows(scores);
    std::copy(weights.value().data.begin(), weights.value().data.end(), out.weights.data.begin() + h * np);
    head_out.push_back(matmul(weights, slice_cols(v, h * dk, dk)));
  }
  const Var projected = add_row(matmul(concat_cols(head_out), param(g, params_.att_wo)), param(g, params_.att_bo));
  out.fused = add(projected, h_t);
  return out;
}

ForwardOutput DreamNetModel::forward(Graph& g, const TokenSequence& seq, const std::vector<double>* features,
                                     Mode mode, Rng* rng) {
  const Var h_x = encode_text(g, seq, mode, rng, false);
  Var h_f = temporal(g, h_x, seq.true_len);
  std::optional<Tensor> attention;
  if (features != nullptr && config_.fusion != FusionMode::kNone) {
    const Var h_p = phys_encode(g, *features);
    if (config_.fusion == FusionMode::kCrossAttention) {
      auto fused = cross_attention(g, h_f, h_p);
      h_f = fused.fused;
      attention = std::move(fused.weights);
    } else {
      const Var parts[] = {h_f, mean_rows(h_p)};
      h_f = add_row(matmul(concat_cols(parts), param(g, params_.concat_w)), param(g, params_.concat_b));
    }
  }
  h_f = maybe_dropout(h_f, mode, rng);
  const Var emotions = sigmoid(add_row(matmul(h_f, param(g, params_.emotion_w)), param(g, params_.emotion_b)));
  const Var themes = sigmoid(add_row(matmul(h_f, param(g, params_.theme_w)), param(g, params_.theme_b)));
  return {emotions, themes, std::move(attention)};
}

Var DreamNetModel::mlm_logits(Graph& g, Var h_x) {
  if (h_x.cols() != config_.d_model) throw ShapeError("mlm_logits: h_x width does not match d_model");
  return add_row(matmul(h_x, param(g, params_.mlm_w)), param(g, params_.mlm_b));
}

Prediction DreamNetModel::predict(const TokenSequence& seq, const std::vector<double>* features) {
  Graph g;
  g.set_grad_enabled(false);
  auto out = forward(g, seq, features, Mode::kEval, nullptr);
  Prediction p;
  std::copy_n(out.emotions.value().data.begin(), kNumEmotions, p.emotions.begin());
  std::copy_n(out.themes.value().data.begin(), kNumThemes, p.themes.begin());
  p.attention = std::move(out.attention);
  return p;
}

Checkpoint DreamNetModel::to_checkpoint() const {
  Checkpoint ckpt;
  ckpt.header = config_.to_config().to_string();
  for (const auto& [name, t] : params_.named()) {
    Tensor copy;
    copy.shape = t->shape;
    copy.data = t->data;
    ckpt.tensors.emplace_back(name, std::move(copy));
  }
  return ckpt;
}

DreamNetModel DreamNetModel::from_checkpoint(const Checkpoint& ckpt) {
  DreamNetModel model(ModelConfig::from_config(KeyValueConfig::parse(ckpt.header, "checkpoint header")));
  for (auto& [name, t] : model.params_.named()) {
    const Tensor* src = ckpt.find(name);
    if (src == nullptr) throw ShapeError("checkpoint is missing tensor '" + name + "'");
    if (src->shape != t->shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape) + ", model expects " +
                       shape_str(t->shape));
    }
    t->data = src->data;
  }
  return model;
}

std::size_t DreamNetModel::load_matching(const Checkpoint& ckpt, std::span<const std::string> prefixes) {
  std::size_t loaded = 0;
  for (auto& [name, t] : params_.named()) {
    const bool wanted = std::any_of(prefixes.begin(), prefixes.end(),
                                    [&name](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (!wanted) continue;
    const Tensor* src = ckpt.find(name);
    if (src == nullptr) continue;
    if (src->shape != t->shape) {
      throw ShapeError("checkpoint tensor '" + name + "' has shape " + shape_str(src->shape) + ", model expects " +
                       shape_str(t->shape));
    }
    t->data = src->data;
    ++loaded;
  }
  return loaded;
}

}  // namespace dreamnet
