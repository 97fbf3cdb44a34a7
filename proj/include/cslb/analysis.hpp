#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cslb/csv.hpp"
#include "cslb/data.hpp"
#include "cslb/error.hpp"
#include "cslb/kernels.hpp"
#include "cslb/model.hpp"

namespace cslb {

enum class InputAnchor { kLayer0Hidden, kInputEmbedding };
enum class OutputAnchor { kFinalHidden, kTargetEmbedding };

inline const char* to_string(InputAnchor a) {
  return a == InputAnchor::kLayer0Hidden ? "layer0_hidden" : "input_embedding";
}
inline const char* to_string(OutputAnchor a) {
  return a == OutputAnchor::kFinalHidden ? "final_hidden" : "target_embedding";
}

struct LensConfig {
  int k = 5;
  bool apply_final_norm = true;
  OutputAnchor output_anchor = OutputAnchor::kFinalHidden;
  InputAnchor input_anchor = InputAnchor::kLayer0Hidden;
  bool exclude_position0 = false;

  void validate(int vocab_size) const {
    if (k < 1 || k > vocab_size)
      throw ConfigError("lens: k must lie in [1, vocab_size], got " +
                        std::to_string(k));
  }
};

// Per-layer aggregates over a corpus. Layer 0 is the embedding output,
// layer L the final block output. sample_count is the number of scored
// positions; degenerate positions (zero-norm states, coincident anchors)
// are excluded from the affected means and tallied separately.
struct AlignmentProfile {
  int n_layers = 0;
  std::vector<double> match_input, match_shifted;
  std::vector<double> cos_to_input, cos_to_output;
  std::vector<double> mean_projection;
  std::int64_t sample_count = 0;
  std::vector<std::int64_t> cos_excluded;
  std::int64_t proj_excluded = 0;

  std::string to_csv() const {
    std::string out = "layer,match_input,match_shifted,cos_in,cos_out,mean_proj,n\n";
    for (int l = 0; l <= n_layers; ++l) {
      out += csv::row({std::to_string(l), csv::fmt(match_input[l]),
                       csv::fmt(match_shifted[l]), csv::fmt(cos_to_input[l]),
                       csv::fmt(cos_to_output[l]),
                       csv::fmt(mean_projection[l]),
                       std::to_string(sample_count)});
    }
    return out;
  }
};

struct ShiftEstimate {
  int layer = 0;
  bool crossover = false;

  nlohmann::json to_json() const {
    return {{"shift_layer", layer}, {"crossover", crossover}};
  }
};

// Smallest layer where the shifted-input match rate reaches the input match
// rate; without a crossover, reports the last layer and says so.
inline ShiftEstimate shift_layer_estimate(const AlignmentProfile& profile) {
  for (int l = 0; l <= profile.n_layers; ++l)
    if (profile.match_shifted[l] >= profile.match_input[l])
      return {l, true};
  return {profile.n_layers, false};
}

namespace detail {

// Lens logits for one residual snapshot: optional final norm, then the tied
// unembedding. Uses the same kernels as the model head, so the final-layer
// lens is bit-identical to the model's own logits.
template <typename S>
std::vector<S> lens_logits(const Tensor<S>& state,
                           const TransformerModel<S>& model,
                           const LensConfig& cfg) {
  const auto rows = state.rows();
  const auto d = state.cols();
  const auto& emb = model.embedding();
  const auto vocab = emb.shape[0];
  std::vector<S> h(static_cast<size_t>(rows) * d);
  if (cfg.apply_final_norm) {
    const auto& gain = model.params()[model.idx_final_gain()];
    kern::rmsnorm_fwd(state.ptr(), gain.ptr(), h.data(),
                      static_cast<S*>(nullptr), rows, d,
                      TransformerModel<S>::kNormEps);
  } else {
    std::copy(state.data->begin(), state.data->end(), h.begin());
  }
  std::vector<S> logits(static_cast<size_t>(rows) * vocab);
  kern::gemm_nt(h.data(), emb.ptr(), logits.data(), rows, d, vocab, false);
  return logits;
}

// Top-k token ids of one logit row, highest first; ties break toward the
// lower token id, which keeps every profile deterministic.
template <typename S>
std::vector<std::int32_t> topk_row(const S* row, std::int64_t vocab, int k) {
  std::vector<std::int32_t> idx(vocab);
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [row](std::int32_t a, std::int32_t b) {
                      if (row[a] != row[b]) return row[a] > row[b];
                      return a < b;
                    });
  idx.resize(k);
  return idx;
}

template <typename S>
double dot_d(const S* a, const S* b, std::int64_t n) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i)
    acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return acc;
}

}  // namespace detail

// Squared length of the input-output axis v - u, in double.
template <typename S>
double axis_norm2(const S* u, const S* v, std::int64_t d) {
  double acc = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double w = static_cast<double>(v[j]) - static_cast<double>(u[j]);
    acc += w * w;
  }
  return acc;
}

// Coordinate of h along the u -> v axis: <h-u, v-u> / |v-u|^2. 0 lands on
// the input anchor, 1 on the output anchor. Caller guards degeneracy.
template <typename S>
double projection_coordinate(const S* h, const S* u, const S* v,
                             std::int64_t d) {
  double num = 0.0, den = 0.0;
  for (std::int64_t j = 0; j < d; ++j) {
    const double hu = static_cast<double>(h[j]) - static_cast<double>(u[j]);
    const double vu = static_cast<double>(v[j]) - static_cast<double>(u[j]);
    num += hu * vu;
    den += vu * vu;
  }
  return num / den;
}

// Top-k lens decode of a residual snapshot: one id list per position.
template <typename S>
std::vector<std::vector<std::int32_t>> logit_lens(
    const Tensor<S>& state, const TransformerModel<S>& model,
    const LensConfig& cfg) {
  cfg.validate(model.config().vocab_size);
  const auto vocab = model.config().vocab_size;
  std::vector<S> logits = detail::lens_logits(state, model, cfg);
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(state.rows());
  for (std::int64_t i = 0; i < state.rows(); ++i)
    out.push_back(detail::topk_row(logits.data() + i * vocab, vocab, cfg.k));
  return out;
}

// Full per-layer measurement pass: top-k match rates against the input and
// shifted-input tokens, cosines to the two anchors, and the normalized
// projection onto the input-output axis. One forward per sequence feeds all
// five metrics; the final position of each sequence has no shifted target
// and is excluded throughout.
template <typename S>
AlignmentProfile alignment_profile(
    const TransformerModel<S>& model,
    const std::vector<std::vector<std::int32_t>>& corpus,
    const LensConfig& cfg) {
  cfg.validate(model.config().vocab_size);
  if (corpus.empty()) throw ContractError("alignment: empty corpus");
  const int layers = model.config().n_layers;
  const int d = model.config().d_model;

  AlignmentProfile profile;
  profile.n_layers = layers;
  profile.match_input.assign(layers + 1, 0.0);
  profile.match_shifted.assign(layers + 1, 0.0);
  profile.cos_to_input.assign(layers + 1, 0.0);
  profile.cos_to_output.assign(layers + 1, 0.0);
  profile.mean_projection.assign(layers + 1, 0.0);
  profile.cos_excluded.assign(layers + 1, 0);
  std::vector<std::int64_t> cos_in_n(layers + 1, 0), cos_out_n(layers + 1, 0);
  std::vector<std::int64_t> proj_n(layers + 1, 0);

  for (const auto& seq : corpus) {
    if (seq.size() < 2)
      throw ContractError("alignment: sequences need at least 2 tokens");
    const std::int64_t t_len = static_cast<std::int64_t>(seq.size());
    Tape<S> tape;
    auto bound = model.bind(tape, false);
    auto fwd = model.forward(tape, bound, seq, 1, t_len);

    // Lens decodes per layer.
    std::vector<std::vector<std::vector<std::int32_t>>> topk(layers + 1);
    for (int l = 0; l <= layers; ++l)
      topk[l] = logit_lens(fwd.states[l], model, cfg);

    const std::int64_t first = cfg.exclude_position0 ? 1 : 0;
    for (std::int64_t i = first; i + 1 < t_len; ++i) {
      ++profile.sample_count;
      const std::int32_t tok_in = seq[i];
      const std::int32_t tok_next = seq[i + 1];

      const S* u = cfg.input_anchor == InputAnchor::kLayer0Hidden
                       ? fwd.states[0].ptr() + i * d
                       : model.embedding().ptr() + tok_in * d;
      const S* v = cfg.output_anchor == OutputAnchor::kFinalHidden
                       ? fwd.states[layers].ptr() + i * d
                       : model.embedding().ptr() + tok_next * d;
      const double uu = detail::dot_d(u, u, d);
      const double vv = detail::dot_d(v, v, d);
      const double axis2 = axis_norm2(u, v, d);
      const bool axis_ok = axis2 >= 1e-12;
      if (!axis_ok) ++profile.proj_excluded;

      for (int l = 0; l <= layers; ++l) {
        const auto& ids = topk[l][i];
        if (std::find(ids.begin(), ids.end(), tok_in) != ids.end())
          profile.match_input[l] += 1.0;
        if (std::find(ids.begin(), ids.end(), tok_next) != ids.end())
          profile.match_shifted[l] += 1.0;

        const S* h = fwd.states[l].ptr() + i * d;
        const double hh = detail::dot_d(h, h, d);
        if (hh > 0.0 && uu > 0.0) {
          profile.cos_to_input[l] +=
              detail::dot_d(h, u, d) / (std::sqrt(hh) * std::sqrt(uu));
          ++cos_in_n[l];
        } else {
          ++profile.cos_excluded[l];
        }
        if (hh > 0.0 && vv > 0.0) {
          profile.cos_to_output[l] +=
              detail::dot_d(h, v, d) / (std::sqrt(hh) * std::sqrt(vv));
          ++cos_out_n[l];
        } else {
          ++profile.cos_excluded[l];
        }
        if (axis_ok) {
          profile.mean_projection[l] += projection_coordinate(h, u, v, d);
          ++proj_n[l];
        }
      }
    }
  }

  if (profile.sample_count == 0)
    throw ContractError("alignment: no scorable positions in the corpus");
  for (int l = 0; l <= layers; ++l) {
    profile.match_input[l] /= static_cast<double>(profile.sample_count);
    profile.match_shifted[l] /= static_cast<double>(profile.sample_count);
    if (cos_in_n[l] == 0 || cos_out_n[l] == 0)
      throw NumericError("alignment: every position degenerate at layer " +
                         std::to_string(l));
    profile.cos_to_input[l] /= static_cast<double>(cos_in_n[l]);
    profile.cos_to_output[l] /= static_cast<double>(cos_out_n[l]);
    if (proj_n[l] == 0)
      throw NumericError(
          "alignment: projection axis degenerate at every position");
    profile.mean_projection[l] /= static_cast<double>(proj_n[l]);
  }
  return profile;
}

// The three figure-style views over the shared measurement pass.
template <typename S>
std::vector<std::pair<double, double>> topk_match_profile(
    const TransformerModel<S>& model,
    const std::vector<std::vector<std::int32_t>>& corpus,
    const LensConfig& cfg) {
  auto p = alignment_profile(model, corpus, cfg);
  std::vector<std::pair<double, double>> out;
  for (int l = 0; l <= p.n_layers; ++l)
    out.emplace_back(p.match_input[l], p.match_shifted[l]);
  return out;
}

template <typename S>
std::vector<std::pair<double, double>> cosine_profile(
    const TransformerModel<S>& model,
    const std::vector<std::vector<std::int32_t>>& corpus,
    const LensConfig& cfg) {
  auto p = alignment_profile(model, corpus, cfg);
  std::vector<std::pair<double, double>> out;
  for (int l = 0; l <= p.n_layers; ++l)
    out.emplace_back(p.cos_to_input[l], p.cos_to_output[l]);
  return out;
}

template <typename S>
std::vector<double> projection_profile(
    const TransformerModel<S>& model,
    const std::vector<std::vector<std::int32_t>>& corpus,
    const LensConfig& cfg) {
  auto p = alignment_profile(model, corpus, cfg);
  return p.mean_projection;
}

// Layer-by-position table of top-1 decodes. Adjacent layers are merged when
// they decode identically at every displayed position; cells are flagged
// when they reproduce the input token or the shifted (next) token.
struct DecodeTable {
  struct Cell {
    std::int32_t token;
    std::string text;
    bool matches_input = false;
    bool matches_shifted = false;
  };
  struct Row {
    int layer_lo, layer_hi;
    std::vector<Cell> cells;

    std::string label() const {
      if (layer_lo == layer_hi) return std::to_string(layer_lo);
      return std::to_string(layer_lo) + " - " + std::to_string(layer_hi);
    }
  };

  std::vector<std::int64_t> positions;
  std::vector<std::int32_t> input_tokens;
  std::vector<Row> rows;

  std::string to_text() const {
    size_t width = 8;
    for (const auto& row : rows)
      for (const auto& c : row.cells) width = std::max(width, c.text.size() + 3);
    auto pad = [&](std::string s) {
      s.resize(width, ' ');
      return s;
    };
    std::string out = pad("layer");
    for (auto p : positions) out += pad("#" + std::to_string(p));
    out += '\n';
    out += pad("input");
    for (auto t : input_tokens) out += pad(token_display(t));
    out += '\n';
    for (const auto& row : rows) {
      out += pad(row.label());
      for (const auto& c : row.cells) {
        std::string mark;
        if (c.matches_input) mark += "=";
        if (c.matches_shifted) mark += ">";
        out += pad(c.text + (mark.empty() ? "" : " " + mark));
      }
      out += '\n';
    }
    return out;
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["positions"] = positions;
    nlohmann::json inputs = nlohmann::json::array();
    for (auto t : input_tokens) inputs.push_back(token_display(t));
    j["input_tokens"] = std::move(inputs);
    nlohmann::json jrows = nlohmann::json::array();
    for (const auto& row : rows) {
      nlohmann::json jr;
      jr["layers"] = row.label();
      nlohmann::json cells = nlohmann::json::array();
      for (const auto& c : row.cells) {
        cells.push_back({{"token", c.token},
                         {"text", c.text},
                         {"matches_input", c.matches_input},
                         {"matches_shifted", c.matches_shifted}});
      }
      jr["cells"] = std::move(cells);
      jrows.push_back(std::move(jr));
    }
    j["rows"] = std::move(jrows);
    return j;
  }
};

template <typename S>
DecodeTable decode_table(const TransformerModel<S>& model,
                         std::span<const std::int32_t> sequence,
                         std::int64_t pos_begin, std::int64_t pos_end,
                         const LensConfig& cfg) {
  const std::int64_t t_len = static_cast<std::int64_t>(sequence.size());
  if (pos_begin < 0 || pos_end > t_len || pos_begin >= pos_end)
    throw ContractError("decode_table: position range [" +
                        std::to_string(pos_begin) + ", " +
                        std::to_string(pos_end) + ") outside sequence of " +
                        std::to_string(t_len));
  LensConfig top1 = cfg;
  top1.k = 1;

  Tape<S> tape;
  auto bound = model.bind(tape, false);
  auto fwd = model.forward(tape, bound, sequence, 1, t_len);

  const int layers = model.config().n_layers;
  std::vector<std::vector<std::int32_t>> decoded(layers + 1);
  for (int l = 0; l <= layers; ++l) {
    auto ids = logit_lens(fwd.states[l], model, top1);
    for (std::int64_t i = pos_begin; i < pos_end; ++i)
      decoded[l].push_back(ids[i][0]);
  }

  DecodeTable table;
  for (std::int64_t i = pos_begin; i < pos_end; ++i) {
    table.positions.push_back(i);
    table.input_tokens.push_back(sequence[i]);
  }
  auto make_row = [&](int lo, int hi) {
    DecodeTable::Row row{lo, hi, {}};
    for (size_t c = 0; c < decoded[lo].size(); ++c) {
      const std::int64_t pos = pos_begin + static_cast<std::int64_t>(c);
      DecodeTable::Cell cell;
      cell.token = decoded[lo][c];
      cell.text = token_display(cell.token);
      cell.matches_input = cell.token == sequence[pos];
      cell.matches_shifted = pos + 1 < t_len && cell.token == sequence[pos + 1];
      row.cells.push_back(std::move(cell));
    }
    return row;
  };
  int lo = 0;
  for (int l = 1; l <= layers + 1; ++l) {
    if (l <= layers && decoded[l] == decoded[lo]) continue;
    table.rows.push_back(make_row(lo, l - 1));
    lo = l;
  }
  return table;
}

// Corpus preparation for analysis: consecutive non-overlapping windows.
inline std::vector<std::vector<std::int32_t>> chop_sequences(
    std::span<const std::int32_t> tokens, std::int64_t seq_len,
    std::int64_t max_sequences) {
  std::vector<std::vector<std::int32_t>> out;
  for (std::int64_t s = 0; s + seq_len <= static_cast<std::int64_t>(tokens.size());
       s += seq_len) {
    out.emplace_back(tokens.begin() + s, tokens.begin() + s + seq_len);
    if (max_sequences > 0 &&
        static_cast<std::int64_t>(out.size()) >= max_sequences)
      break;
  }
  return out;
}

}  // namespace cslb
