#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cslb/error.hpp"
#include "cslb/tape.hpp"
#include "cslb/tensor.hpp"

namespace cslb {

enum class AttenuationMode { kBaseline, kFixed, kGated };

inline const char* to_string(AttenuationMode m) {
  switch (m) {
    case AttenuationMode::kBaseline: return "baseline";
    case AttenuationMode::kFixed: return "fixed";
    case AttenuationMode::kGated: return "gated";
  }
  return "?";
}

// Per-layer residual scaling policy. Baseline keeps every alpha at 1; fixed
// pins explicit per-layer values; gated derives alphas from learned logits
// as alpha_l = 1 - cut_strength * softmax(theta)_l.
struct AttenuationSpec {
  AttenuationMode mode = AttenuationMode::kBaseline;
  std::vector<double> fixed_alphas;
  double cut_strength = 0.9;
  double alpha_min = 0.05;

  static AttenuationSpec baseline() { return {}; }

  static AttenuationSpec fixed(std::vector<double> alphas) {
    AttenuationSpec s;
    s.mode = AttenuationMode::kFixed;
    s.fixed_alphas = std::move(alphas);
    return s;
  }

  // All layers at 1 except `cut_layer` at `alpha`.
  static AttenuationSpec fixed_cut(int n_layers, int cut_layer, double alpha) {
    std::vector<double> a(n_layers, 1.0);
    if (cut_layer < 0 || cut_layer >= n_layers)
      throw ConfigError("fixed_cut: cut_layer " + std::to_string(cut_layer) +
                        " outside [0, " + std::to_string(n_layers) + ")");
    a[cut_layer] = alpha;
    return fixed(std::move(a));
  }

  static AttenuationSpec gated(double cut_strength = 0.9,
                               double alpha_min = 0.05) {
    AttenuationSpec s;
    s.mode = AttenuationMode::kGated;
    s.cut_strength = cut_strength;
    s.alpha_min = alpha_min;
    return s;
  }

  void validate(int n_layers) const {
    switch (mode) {
      case AttenuationMode::kBaseline:
        break;
      case AttenuationMode::kFixed:
        if (static_cast<int>(fixed_alphas.size()) != n_layers)
          throw ConfigError("attenuation: " +
                            std::to_string(fixed_alphas.size()) +
                            " fixed alphas for " + std::to_string(n_layers) +
                            " layers");
        for (size_t l = 0; l < fixed_alphas.size(); ++l)
          if (!(fixed_alphas[l] > 0.0) || fixed_alphas[l] > 1.0)
            throw ConfigError(
                "attenuation: alpha at layer " + std::to_string(l) + " is " +
                std::to_string(fixed_alphas[l]) +
                "; every alpha must lie in (0, 1] (strictly positive)");
        break;
      case AttenuationMode::kGated:
        if (!(cut_strength > 0.0) || !(cut_strength < 1.0))
          throw ConfigError("attenuation: cut_strength must lie in (0, 1)");
        if (!(alpha_min > 0.0))
          throw ConfigError("attenuation: alpha_min must be > 0");
        if (1.0 - cut_strength < alpha_min)
          throw ConfigError(
              "attenuation: 1 - cut_strength = " +
              std::to_string(1.0 - cut_strength) + " falls below alpha_min " +
              std::to_string(alpha_min));
        break;
    }
  }
};

struct ModelConfig {
  int n_layers = 12;
  int d_model = 128;
  int n_heads = 4;
  int d_ff = 512;
  int vocab_size = 256;
  int max_seq_len = 256;
  AttenuationSpec attenuation;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_layers < 1) throw ConfigError("model: n_layers must be >= 1");
    if (vocab_size < 2) throw ConfigError("model: vocab_size must be >= 2");
    if (d_model < 1 || d_ff < 1 || max_seq_len < 1)
      throw ConfigError("model: dimensions must be positive");
    if (n_heads < 1 || d_model % n_heads != 0)
      throw ConfigError("model: n_heads must divide d_model (" +
                        std::to_string(d_model) + " % " +
                        std::to_string(n_heads) + " != 0)");
    if ((d_model / n_heads) % 2 != 0)
      throw ConfigError("model: head dim must be even for rotary encoding");
    attenuation.validate(n_layers);
  }
};

// Parameters per block, in storage order.
enum class LayerParam {
  kAttnGain, kWq, kBq, kWk, kBk, kWv, kBv, kWo, kBo,
  kMlpGain, kW1, kB1, kW2, kB2,
};
inline constexpr int kLayerParamCount = 14;

inline std::int64_t param_count(const ModelConfig& cfg) {
  const std::int64_t d = cfg.d_model, ff = cfg.d_ff;
  const std::int64_t per_layer = 4 * d * d + 2 * d * ff + ff + 7 * d;
  std::int64_t n = static_cast<std::int64_t>(cfg.vocab_size) * d +
                   cfg.n_layers * per_layer + d;
  if (cfg.attenuation.mode == AttenuationMode::kGated) n += cfg.n_layers;
  return n;
}

template <typename S>
struct ForwardResult {
  Tensor<S> logits;                 // [batch*T, vocab]
  std::vector<Tensor<S>> states;    // n_layers+1 residual snapshots
  std::optional<Tensor<S>> alphas;  // gated mode: [n_layers]
};

// Decoder-only pre-norm transformer with tied embeddings, rotary positions
// and per-layer residual attenuation. Parameters live in a flat named list;
// `bind` registers them on a tape for one forward/backward cycle.
template <typename S>
class TransformerModel {
 public:
  static constexpr S kNormEps = S(1e-5);

  using Bound = std::vector<Tensor<S>>;

  explicit TransformerModel(ModelConfig cfg) : config_(std::move(cfg)) {
    config_.validate();
    build();
    init_weights();
  }

  const ModelConfig& config() const { return config_; }
  bool gated() const {
    return config_.attenuation.mode == AttenuationMode::kGated;
  }

  size_t num_params() const { return params_.size(); }
  const std::vector<std::string>& names() const { return names_; }
  const std::vector<bool>& decay_mask() const { return decay_; }
  std::vector<Tensor<S>>& params() { return params_; }
  const std::vector<Tensor<S>>& params() const { return params_; }

  std::int64_t total_scalars() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.numel();
    return n;
  }

  size_t idx_embedding() const { return 0; }
  size_t idx_layer(int l, LayerParam which) const {
    return 1 + static_cast<size_t>(l) * kLayerParamCount +
           static_cast<size_t>(which);
  }
  size_t idx_final_gain() const {
    return 1 + static_cast<size_t>(config_.n_layers) * kLayerParamCount;
  }
  size_t idx_gate_theta() const {
    if (!gated()) throw ContractError("model has no gate parameters");
    return idx_final_gain() + 1;
  }

  Tensor<S>& embedding() { return params_[idx_embedding()]; }
  const Tensor<S>& embedding() const { return params_[idx_embedding()]; }
  Tensor<S>& gate_theta() { return params_[idx_gate_theta()]; }
  const Tensor<S>& gate_theta() const { return params_[idx_gate_theta()]; }
  Tensor<S>& final_gain() { return params_[idx_final_gain()]; }

  Bound bind(Tape<S>& tape, bool trainable) const {
    Bound b;
    b.reserve(params_.size());
    for (const auto& p : params_) b.push_back(tape.leaf(p, trainable));
    return b;
  }

  // Attention sub-block on an already-normalized input.
  Tensor<S> causal_attention(Tape<S>& tape, const Bound& b, int l,
                             const Tensor<S>& h, std::int64_t seq_len) const {
    if (seq_len > config_.max_seq_len)
      throw ContractError("causal_attention: sequence of " +
                          std::to_string(seq_len) + " exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
    auto proj = [&](LayerParam w, LayerParam bias) {
      return tape.add_bias(tape.matmul(h, b[idx_layer(l, w)]),
                           b[idx_layer(l, bias)]);
    };
    Tensor<S> q = tape.rope(proj(LayerParam::kWq, LayerParam::kBq), seq_len,
                            config_.n_heads);
    Tensor<S> k = tape.rope(proj(LayerParam::kWk, LayerParam::kBk), seq_len,
                            config_.n_heads);
    Tensor<S> v = proj(LayerParam::kWv, LayerParam::kBv);
    Tensor<S> att =
        tape.causal_attention(q, k, v, seq_len, config_.n_heads);
    return tape.add_bias(tape.matmul(att, b[idx_layer(l, LayerParam::kWo)]),
                         b[idx_layer(l, LayerParam::kBo)]);
  }

  // attn(norm(x)) for block l.
  Tensor<S> attention_sublayer(Tape<S>& tape, const Bound& b, int l,
                               const Tensor<S>& x, std::int64_t seq_len) const {
    Tensor<S> h =
        tape.rms_norm(x, b[idx_layer(l, LayerParam::kAttnGain)], kNormEps);
    return causal_attention(tape, b, l, h, seq_len);
  }

  // mlp(norm(a)) for block l.
  Tensor<S> mlp_sublayer(Tape<S>& tape, const Bound& b, int l,
                         const Tensor<S>& a) const {
    Tensor<S> h =
        tape.rms_norm(a, b[idx_layer(l, LayerParam::kMlpGain)], kNormEps);
    Tensor<S> up = tape.gelu(tape.add_bias(
        tape.matmul(h, b[idx_layer(l, LayerParam::kW1)]),
        b[idx_layer(l, LayerParam::kB1)]));
    return tape.add_bias(tape.matmul(up, b[idx_layer(l, LayerParam::kW2)]),
                         b[idx_layer(l, LayerParam::kB2)]);
  }

  // Per-layer alphas as a differentiable [n_layers] tensor (gated mode).
  Tensor<S> gated_alphas(Tape<S>& tape, const Bound& b) const {
    Tensor<S> p = tape.softmax_rows(b[idx_gate_theta()]);
    return tape.affine(p, static_cast<S>(-config_.attenuation.cut_strength),
                       S(1));
  }

  double fixed_alpha(int l) const {
    switch (config_.attenuation.mode) {
      case AttenuationMode::kBaseline: return 1.0;
      case AttenuationMode::kFixed: return config_.attenuation.fixed_alphas[l];
      case AttenuationMode::kGated:
        throw ContractError("fixed_alpha: model is gated");
    }
    return 1.0;
  }

  // Full forward over `batch` sequences of `seq_len` tokens, flattened
  // row-major into ids. Returns logits plus every residual snapshot.
  ForwardResult<S> forward(Tape<S>& tape, const Bound& b,
                           std::span<const std::int32_t> ids,
                           std::int64_t batch, std::int64_t seq_len) const {
    if (batch < 1 || seq_len < 1 ||
        static_cast<std::int64_t>(ids.size()) != batch * seq_len)
      throw ContractError("forward: ids do not cover batch*seq_len tokens");
    if (seq_len > config_.max_seq_len)
      throw ContractError("forward: sequence of " + std::to_string(seq_len) +
                          " exceeds max_seq_len " +
                          std::to_string(config_.max_seq_len));
    ForwardResult<S> out;
    Tensor<S> x = tape.embedding_lookup(b[idx_embedding()], ids);
    out.states.reserve(config_.n_layers + 1);
    out.states.push_back(x);
    if (gated()) out.alphas = gated_alphas(tape, b);
    const double c = config_.attenuation.cut_strength;
    for (int l = 0; l < config_.n_layers; ++l) {
      Tensor<S> attn = attention_sublayer(tape, b, l, x, seq_len);
      Tensor<S> a, next;
      if (gated()) {
        Tensor<S> alpha_l = tape.select(*out.alphas, l);
        a = tape.residual_combine(x, attn, alpha_l);
        Tensor<S> m = mlp_sublayer(tape, b, l, a);
        next = tape.residual_combine(a, m, alpha_l);
        (void)c;
      } else {
        const S alpha_l = static_cast<S>(fixed_alpha(l));
        a = tape.residual_combine(x, attn, alpha_l);
        Tensor<S> m = mlp_sublayer(tape, b, l, a);
        next = tape.residual_combine(a, m, alpha_l);
      }
      x = next;
      out.states.push_back(x);
    }
    Tensor<S> hf = final_norm(tape, b, x);
    out.logits = tape.matmul_nt(hf, b[idx_embedding()]);
    return out;
  }

  Tensor<S> final_norm(Tape<S>& tape, const Bound& b,
                       const Tensor<S>& x) const {
    return tape.rms_norm(x, b[idx_final_gain()], kNormEps);
  }

  // Mean next-token loss over batch*T positions; targets[i] supervises
  // position i of the flattened inputs.
  Tensor<S> loss_on_tokens(Tape<S>& tape, const Bound& b,
                           std::span<const std::int32_t> inputs,
                           std::span<const std::int32_t> targets,
                           std::int64_t batch, std::int64_t seq_len) const {
    ForwardResult<S> fwd = forward(tape, b, inputs, batch, seq_len);
    return tape.cross_entropy_mean(fwd.logits, targets);
  }

  // The one-token shift between inputs and supervision happens here and
  // nowhere else: tokens[0..n-1) feed the model, tokens[1..n) are targets.
  Tensor<S> loss_on_sequence(Tape<S>& tape, const Bound& b,
                             std::span<const std::int32_t> tokens) const {
    if (tokens.size() < 2)
      throw ContractError("loss_on_sequence: need at least 2 tokens, got " +
                          std::to_string(tokens.size()));
    const std::int64_t t = static_cast<std::int64_t>(tokens.size()) - 1;
    return loss_on_tokens(tape, b, tokens.subspan(0, t), tokens.subspan(1, t),
                          1, t);
  }

  // Convenience inference-mode loss (fresh tape, no gradients).
  double eval_loss(std::span<const std::int32_t> tokens) const {
    Tape<S> tape;
    Bound b = bind(tape, false);
    return static_cast<double>(loss_on_sequence(tape, b, tokens).at(0));
  }

 private:
  void build() {
    auto push = [&](std::string name, Shape shape, bool decay) {
      names_.push_back(std::move(name));
      params_.push_back(Tensor<S>::zeros(std::move(shape)));
      decay_.push_back(decay);
    };
    const std::int64_t d = config_.d_model, ff = config_.d_ff;
    push("embedding", {config_.vocab_size, d}, true);
    for (int l = 0; l < config_.n_layers; ++l) {
      const std::string p = "layer" + std::to_string(l) + ".";
      push(p + "attn_gain", {d}, false);
      push(p + "wq", {d, d}, true);
      push(p + "bq", {d}, true);
      push(p + "wk", {d, d}, true);
      push(p + "bk", {d}, true);
      push(p + "wv", {d, d}, true);
      push(p + "bv", {d}, true);
      push(p + "wo", {d, d}, true);
      push(p + "bo", {d}, true);
      push(p + "mlp_gain", {d}, false);
      push(p + "w1", {d, ff}, true);
      push(p + "b1", {ff}, true);
      push(p + "w2", {ff, d}, true);
      push(p + "b2", {d}, true);
    }
    push("final_gain", {d}, false);
    if (gated()) push("gate_theta", {config_.n_layers}, false);
  }

  void init_weights() {
    std::mt19937_64 rng(config_.seed);
    const S base_std = S(0.02);
    // Residual output projections are damped so the stream keeps unit scale.
    const S proj_std =
        base_std / std::sqrt(S(2) * static_cast<S>(config_.n_layers));
    std::normal_distribution<double> dist(0.0, 1.0);
    auto fill = [&](Tensor<S>& t, S stddev) {
      for (auto& v : *t.data) v = static_cast<S>(dist(rng)) * stddev;
    };
    fill(params_[idx_embedding()], base_std);
    for (int l = 0; l < config_.n_layers; ++l) {
      set_ones(params_[idx_layer(l, LayerParam::kAttnGain)]);
      fill(params_[idx_layer(l, LayerParam::kWq)], base_std);
      fill(params_[idx_layer(l, LayerParam::kWk)], base_std);
      fill(params_[idx_layer(l, LayerParam::kWv)], base_std);
      fill(params_[idx_layer(l, LayerParam::kWo)], proj_std);
      set_ones(params_[idx_layer(l, LayerParam::kMlpGain)]);
      fill(params_[idx_layer(l, LayerParam::kW1)], base_std);
      fill(params_[idx_layer(l, LayerParam::kW2)], proj_std);
    }
    set_ones(params_[idx_final_gain()]);
  }

  static void set_ones(Tensor<S>& t) {
    std::fill(t.data->begin(), t.data->end(), S(1));
  }

  ModelConfig config_;
  std::vector<std::string> names_;
  std::vector<Tensor<S>> params_;
  std::vector<bool> decay_;
};

}  // namespace cslb
