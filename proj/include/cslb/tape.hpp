#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "cslb/error.hpp"
#include "cslb/kernels.hpp"
#include "cslb/tensor.hpp"

namespace cslb {

// Reverse-mode tape. Ops append nodes in topological order; backward walks
// the list once, in reverse, accumulating into per-node gradient buffers.
// A tape is single-owner: one forward graph, one backward call.
template <typename S>
class Tape {
 public:
  struct Node {
    const char* op;
    std::array<std::int32_t, 3> inputs{-1, -1, -1};
    Tensor<S> value;
    bool needs_grad = false;
    std::function<void(Tape&, std::int32_t)> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  size_t size() const { return nodes_.size(); }
  const Node& node(std::int32_t id) const { return nodes_.at(id); }

  // Binds a tensor to this tape as a leaf. The returned handle aliases the
  // same buffer, so parameter updates outside the tape stay visible.
  Tensor<S> leaf(const Tensor<S>& t, bool requires_grad) {
    Tensor<S> bound = t;
    bound.requires_grad = requires_grad;
    bound.tape = this;
    bound.node = add_node("leaf", {}, bound, requires_grad, nullptr);
    return bound;
  }

  // -- elementwise ----------------------------------------------------------

  Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    require_bound(a, "add lhs");
    require_bound(b, "add rhs");
    if (a.shape != b.shape)
      throw ShapeError("add: shape mismatch " + shape_str(a.shape) + " vs " +
                       shape_str(b.shape));
    Tensor<S> out = Tensor<S>::zeros(a.shape);
    kern::ew_add(a.ptr(), b.ptr(), out.ptr(), out.numel());
    return emit("add", {a.node, b.node}, std::move(out),
                [a, b](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  const auto n = a.numel();
                  if (t.wants_grad(a.node))
                    kern::ew_add_scaled(g, t.grad_buf(a.node), S(1), n);
                  if (t.wants_grad(b.node))
                    kern::ew_add_scaled(g, t.grad_buf(b.node), S(1), n);
                });
  }

  Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    require_bound(a, "mul lhs");
    require_bound(b, "mul rhs");
    if (a.shape != b.shape)
      throw ShapeError("mul: shape mismatch " + shape_str(a.shape) + " vs " +
                       shape_str(b.shape));
    Tensor<S> out = Tensor<S>::zeros(a.shape);
    kern::ew_mul(a.ptr(), b.ptr(), out.ptr(), out.numel());
    return emit("mul", {a.node, b.node}, std::move(out),
                [a, b](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  const auto n = a.numel();
                  if (t.wants_grad(a.node))
                    kern::ew_mul_acc(g, b.ptr(), t.grad_buf(a.node), n);
                  if (t.wants_grad(b.node))
                    kern::ew_mul_acc(g, a.ptr(), t.grad_buf(b.node), n);
                });
  }

  // scale * x + shift, elementwise with scalar constants
  Tensor<S> affine(const Tensor<S>& x, S scale, S shift) {
    require_bound(x, "affine input");
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::ew_affine(x.ptr(), out.ptr(), scale, shift, out.numel());
    return emit("affine", {x.node}, std::move(out),
                [x, scale](Tape& t, std::int32_t self) {
                  if (t.wants_grad(x.node))
                    kern::ew_add_scaled(t.grad_data(self), t.grad_buf(x.node),
                                        scale, x.numel());
                });
  }

  // Picks one element of a vector as a [1] tensor.
  Tensor<S> select(const Tensor<S>& x, std::int64_t index) {
    require_bound(x, "select input");
    if (index < 0 || index >= x.numel())
      throw ShapeError("select: index " + std::to_string(index) +
                       " out of range for " + shape_str(x.shape));
    Tensor<S> out = Tensor<S>::scalar(x.at(index));
    return emit("select", {x.node}, std::move(out),
                [x, index](Tape& t, std::int32_t self) {
                  if (t.wants_grad(x.node))
                    t.grad_buf(x.node)[index] += t.grad_data(self)[0];
                });
  }

  Tensor<S> sum(const Tensor<S>& x) {
    require_bound(x, "sum input");
    S acc = S(0);
    for (auto v : *x.data) acc += v;
    return emit("sum", {x.node}, Tensor<S>::scalar(acc),
                [x](Tape& t, std::int32_t self) {
                  if (!t.wants_grad(x.node)) return;
                  const S g = t.grad_data(self)[0];
                  S* dx = t.grad_buf(x.node);
                  const auto n = x.numel();
                  for (std::int64_t i = 0; i < n; ++i) dx[i] += g;
                });
  }

  // -- residual combination: out = alpha * x + f ----------------------------

  Tensor<S> residual_combine(const Tensor<S>& x, const Tensor<S>& f, S alpha) {
    check_residual_args(x, f, alpha);
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::ew_residual(x.ptr(), f.ptr(), out.ptr(), alpha, out.numel());
    return emit("residual_combine", {x.node, f.node}, std::move(out),
                [x, f, alpha](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  if (t.wants_grad(x.node))
                    kern::ew_add_scaled(g, t.grad_buf(x.node), alpha,
                                        x.numel());
                  if (t.wants_grad(f.node))
                    kern::ew_add_scaled(g, t.grad_buf(f.node), S(1),
                                        f.numel());
                });
  }

  // Variant with a differentiable [1] alpha (learned gating).
  Tensor<S> residual_combine(const Tensor<S>& x, const Tensor<S>& f,
                             const Tensor<S>& alpha) {
    require_bound(alpha, "residual_combine alpha");
    if (alpha.numel() != 1)
      throw ShapeError("residual_combine: alpha must be a scalar tensor, got " +
                       shape_str(alpha.shape));
    const S av = alpha.at(0);
    check_residual_args(x, f, av);
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::ew_residual(x.ptr(), f.ptr(), out.ptr(), av, out.numel());
    return emit("residual_combine", {x.node, f.node, alpha.node},
                std::move(out), [x, f, alpha, av](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  if (t.wants_grad(x.node))
                    kern::ew_add_scaled(g, t.grad_buf(x.node), av, x.numel());
                  if (t.wants_grad(f.node))
                    kern::ew_add_scaled(g, t.grad_buf(f.node), S(1),
                                        f.numel());
                  if (t.wants_grad(alpha.node))
                    t.grad_buf(alpha.node)[0] +=
                        kern::dot(x.ptr(), g, x.numel());
                });
  }

  // -- matmul ----------------------------------------------------------------

  Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    require_bound(a, "matmul lhs");
    require_bound(b, "matmul rhs");
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[0])
      throw ShapeError("matmul: dimension mismatch " + shape_str(a.shape) +
                       " vs " + shape_str(b.shape));
    const auto m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<S> out = Tensor<S>::zeros({m, n});
    kern::gemm_nn(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
    return emit("matmul", {a.node, b.node}, std::move(out),
                [a, b, m, k, n](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  if (t.wants_grad(a.node))
                    kern::gemm_nt(g, b.ptr(), t.grad_buf(a.node), m, n, k,
                                  true);
                  if (t.wants_grad(b.node))
                    kern::gemm_tn(a.ptr(), g, t.grad_buf(b.node), m, k, n,
                                  true);
                });
  }

  // a[m,k] * b[n,k]^T; shares storage-friendly form with tied unembedding.
  Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    require_bound(a, "matmul_nt lhs");
    require_bound(b, "matmul_nt rhs");
    if (a.shape.size() != 2 || b.shape.size() != 2 || a.shape[1] != b.shape[1])
      throw ShapeError("matmul_nt: dimension mismatch " + shape_str(a.shape) +
                       " vs " + shape_str(b.shape));
    const auto m = a.shape[0], k = a.shape[1], n = b.shape[0];
    Tensor<S> out = Tensor<S>::zeros({m, n});
    kern::gemm_nt(a.ptr(), b.ptr(), out.ptr(), m, k, n, false);
    return emit("matmul_nt", {a.node, b.node}, std::move(out),
                [a, b, m, k, n](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  if (t.wants_grad(a.node))
                    kern::gemm_nn(g, b.ptr(), t.grad_buf(a.node), m, n, k,
                                  true);
                  if (t.wants_grad(b.node))
                    kern::gemm_tn(g, a.ptr(), t.grad_buf(b.node), m, n, k,
                                  true);
                });
  }

  Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& bias) {
    require_bound(x, "add_bias input");
    require_bound(bias, "add_bias bias");
    if (bias.shape.size() != 1 || bias.shape[0] != x.cols())
      throw ShapeError("add_bias: bias " + shape_str(bias.shape) +
                       " does not match rows of " + shape_str(x.shape));
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::bias_add_fwd(x.ptr(), bias.ptr(), out.ptr(), x.rows(), x.cols());
    return emit("add_bias", {x.node, bias.node}, std::move(out),
                [x, bias](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  if (t.wants_grad(x.node))
                    kern::ew_add_scaled(g, t.grad_buf(x.node), S(1),
                                        x.numel());
                  if (t.wants_grad(bias.node))
                    kern::bias_bwd_db(g, t.grad_buf(bias.node), x.rows(),
                                      x.cols());
                });
  }

  // -- normalization / activation -------------------------------------------

  Tensor<S> rms_norm(const Tensor<S>& x, const Tensor<S>& gain, S eps) {
    require_bound(x, "rms_norm input");
    require_bound(gain, "rms_norm gain");
    if (gain.shape.size() != 1 || gain.shape[0] != x.cols())
      throw ShapeError("rms_norm: gain " + shape_str(gain.shape) +
                       " does not match " + shape_str(x.shape));
    if (!(eps > S(0))) throw ConfigError("rms_norm: eps must be positive");
    const auto rows = x.rows(), d = x.cols();
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    auto inv_rms = std::make_shared<std::vector<S>>(rows);
    kern::rmsnorm_fwd(x.ptr(), gain.ptr(), out.ptr(), inv_rms->data(), rows, d,
                      eps);
    return emit("rms_norm", {x.node, gain.node}, std::move(out),
                [x, gain, inv_rms, rows, d](Tape& t, std::int32_t self) {
                  const S* g = t.grad_data(self);
                  S* dx = t.wants_grad(x.node) ? t.grad_buf(x.node) : nullptr;
                  S* dg =
                      t.wants_grad(gain.node) ? t.grad_buf(gain.node) : nullptr;
                  kern::rmsnorm_bwd(x.ptr(), gain.ptr(), inv_rms->data(), g,
                                    dx, dg, rows, d);
                });
  }

  Tensor<S> gelu(const Tensor<S>& x) {
    require_bound(x, "gelu input");
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::gelu_fwd(x.ptr(), out.ptr(), out.numel());
    return emit("gelu", {x.node}, std::move(out),
                [x](Tape& t, std::int32_t self) {
                  if (t.wants_grad(x.node))
                    kern::gelu_bwd(x.ptr(), t.grad_data(self),
                                   t.grad_buf(x.node), x.numel());
                });
  }

  Tensor<S> softmax_rows(const Tensor<S>& x) {
    require_bound(x, "softmax_rows input");
    if (x.shape.empty() || x.cols() < 1)
      throw ShapeError("softmax_rows: needs a non-empty last dimension, got " +
                       shape_str(x.shape));
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::softmax_rows_fwd(x.ptr(), out.ptr(), x.rows(), x.cols());
    Tensor<S> saved = out;  // aliases; probs are needed in backward
    return emit("softmax_rows", {x.node}, std::move(out),
                [x, saved](Tape& t, std::int32_t self) {
                  if (t.wants_grad(x.node))
                    kern::softmax_rows_bwd(saved.ptr(), t.grad_data(self),
                                           t.grad_buf(x.node), x.rows(),
                                           x.cols());
                });
  }

  // -- token ops --------------------------------------------------------------

  Tensor<S> embedding_lookup(const Tensor<S>& table,
                             std::span<const std::int32_t> ids) {
    require_bound(table, "embedding table");
    if (table.shape.size() != 2)
      throw ShapeError("embedding_lookup: table must be [vocab, dim], got " +
                       shape_str(table.shape));
    const auto vocab = table.shape[0], d = table.shape[1];
    for (size_t i = 0; i < ids.size(); ++i)
      if (ids[i] < 0 || ids[i] >= vocab)
        throw std::out_of_range("embedding_lookup: id " +
                                std::to_string(ids[i]) + " at position " +
                                std::to_string(i) + " outside vocab of " +
                                std::to_string(vocab));
    const auto count = static_cast<std::int64_t>(ids.size());
    Tensor<S> out = Tensor<S>::zeros({count, d});
    auto ids_copy =
        std::make_shared<std::vector<std::int32_t>>(ids.begin(), ids.end());
    kern::embedding_gather(table.ptr(), ids_copy->data(), out.ptr(), count, d);
    return emit("embedding_lookup", {table.node}, std::move(out),
                [table, ids_copy, count, d](Tape& t, std::int32_t self) {
                  if (t.wants_grad(table.node))
                    kern::embedding_scatter_add(t.grad_data(self),
                                                ids_copy->data(),
                                                t.grad_buf(table.node), count,
                                                d);
                });
  }

  Tensor<S> cross_entropy_mean(const Tensor<S>& logits,
                               std::span<const std::int32_t> targets) {
    require_bound(logits, "cross_entropy logits");
    const auto rows = logits.rows(), vocab = logits.cols();
    if (rows < 1) throw ContractError("cross_entropy_mean: empty logits");
    if (static_cast<std::int64_t>(targets.size()) != rows)
      throw ShapeError("cross_entropy_mean: " + std::to_string(targets.size()) +
                       " targets for " + std::to_string(rows) + " rows");
    for (size_t i = 0; i < targets.size(); ++i)
      if (targets[i] < 0 || targets[i] >= vocab)
        throw std::out_of_range("cross_entropy_mean: target " +
                                std::to_string(targets[i]) + " at position " +
                                std::to_string(i) + " outside vocab of " +
                                std::to_string(vocab));
    auto tgt = std::make_shared<std::vector<std::int32_t>>(targets.begin(),
                                                           targets.end());
    std::vector<S> losses(rows);
    kern::cross_entropy_rows(logits.ptr(), tgt->data(), losses.data(), rows,
                             vocab);
    double mean = 0.0;
    for (S v : losses) mean += static_cast<double>(v);
    mean /= static_cast<double>(rows);
    return emit("cross_entropy_mean", {logits.node},
                Tensor<S>::scalar(static_cast<S>(mean)),
                [logits, tgt, rows, vocab](Tape& t, std::int32_t self) {
                  if (!t.wants_grad(logits.node)) return;
                  const S scale = t.grad_data(self)[0] / S(rows);
                  kern::cross_entropy_bwd(logits.ptr(), tgt->data(), scale,
                                          t.grad_buf(logits.node), rows,
                                          vocab);
                });
  }

  // -- positional / attention -------------------------------------------------

  Tensor<S> rope(const Tensor<S>& x, std::int64_t seq_len,
                 std::int64_t n_heads, double base = 10000.0) {
    require_bound(x, "rope input");
    const auto rows = x.rows(), d = x.cols();
    if (rows % seq_len != 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0)
      throw ShapeError("rope: incompatible shape " + shape_str(x.shape) +
                       " for seq_len=" + std::to_string(seq_len) +
                       " heads=" + std::to_string(n_heads));
    const auto hs = d / n_heads;
    Tensor<S> out = Tensor<S>::zeros(x.shape);
    kern::rope_fwd(x.ptr(), out.ptr(), rows, seq_len, n_heads, hs, base);
    return emit("rope", {x.node}, std::move(out),
                [x, rows, seq_len, n_heads, hs, base](Tape& t,
                                                      std::int32_t self) {
                  if (t.wants_grad(x.node))
                    kern::rope_bwd(t.grad_data(self), t.grad_buf(x.node), rows,
                                   seq_len, n_heads, hs, base);
                });
  }

  // Causally masked multi-head attention over [batch*T, d] projections.
  // probs_out, when given, receives the [batch, heads, T, T] weights.
  Tensor<S> causal_attention(const Tensor<S>& q, const Tensor<S>& k,
                             const Tensor<S>& v, std::int64_t seq_len,
                             std::int64_t n_heads,
                             std::vector<S>* probs_out = nullptr) {
    require_bound(q, "attention q");
    require_bound(k, "attention k");
    require_bound(v, "attention v");
    if (q.shape != k.shape || q.shape != v.shape)
      throw ShapeError("causal_attention: q/k/v shapes disagree");
    const auto rows = q.rows(), d = q.cols();
    if (rows % seq_len != 0 || d % n_heads != 0)
      throw ShapeError("causal_attention: incompatible shape " +
                       shape_str(q.shape));
    const auto batch = rows / seq_len;
    const auto hs = d / n_heads;
    const S scale = S(1) / std::sqrt(S(hs));
    auto probs = std::make_shared<std::vector<S>>(
        static_cast<size_t>(batch * n_heads * seq_len * seq_len));
    Tensor<S> out = Tensor<S>::zeros(q.shape);
    kern::attention_fwd(q.ptr(), k.ptr(), v.ptr(), probs->data(), out.ptr(),
                        batch, seq_len, n_heads, hs, scale);
    if (probs_out) *probs_out = *probs;
    return emit("causal_attention", {q.node, k.node, v.node}, std::move(out),
                [q, k, v, probs, batch, seq_len, n_heads, hs,
                 scale](Tape& t, std::int32_t self) {
                  const bool gq = t.wants_grad(q.node);
                  const bool gk = t.wants_grad(k.node);
                  const bool gv = t.wants_grad(v.node);
                  if (!gq && !gk && !gv) return;
                  // attention_bwd writes all three; route unused ones into a
                  // scratch buffer.
                  std::vector<S> scratch;
                  auto buf = [&](bool want, std::int32_t id) -> S* {
                    if (want) return t.grad_buf(id);
                    if (scratch.empty()) scratch.assign(q.numel(), S(0));
                    return scratch.data();
                  };
                  kern::attention_bwd(q.ptr(), k.ptr(), v.ptr(), probs->data(),
                                      t.grad_data(self), buf(gq, q.node),
                                      buf(gk, k.node), buf(gv, v.node), batch,
                                      seq_len, n_heads, hs, scale);
                });
  }

  // -- backward ----------------------------------------------------------------

  void backward(const Tensor<S>& loss) {
    if (loss.tape != this || loss.node < 0)
      throw ContractError("backward: loss is not attached to this tape");
    if (loss.numel() != 1)
      throw ContractError("backward: loss must be a scalar, got " +
                          shape_str(loss.shape));
    if (backward_done_)
      throw ContractError("backward: already called on this tape");
    backward_done_ = true;
    grads_.resize(nodes_.size());
    grads_[loss.node].assign(1, S(1));
    for (std::int32_t id = static_cast<std::int32_t>(nodes_.size()) - 1;
         id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.needs_grad || grads_[id].empty() || !n.backward) continue;
      n.backward(*this, id);
    }
  }

  bool backward_done() const { return backward_done_; }

  bool has_grad(const Tensor<S>& t) const {
    return t.tape == this && t.node >= 0 &&
           static_cast<size_t>(t.node) < grads_.size() &&
           !grads_[t.node].empty();
  }

  std::span<const S> grad(const Tensor<S>& t) const {
    if (t.tape != this || t.node < 0)
      throw ContractError("grad: tensor is not attached to this tape");
    if (static_cast<size_t>(t.node) >= grads_.size() ||
        grads_[t.node].empty())
      throw ContractError("grad: no gradient recorded for this tensor");
    return {grads_[t.node].data(), grads_[t.node].size()};
  }

  bool wants_grad(std::int32_t id) const { return nodes_[id].needs_grad; }

  S* grad_buf(std::int32_t id) {
    auto& g = grads_[id];
    if (g.empty()) g.assign(nodes_[id].value.numel(), S(0));
    return g.data();
  }

  const S* grad_data(std::int32_t id) const { return grads_[id].data(); }

 private:
  void require_bound(const Tensor<S>& t, const char* what) const {
    if (t.tape != this || t.node < 0)
      throw ContractError(std::string(what) +
                          ": tensor is not bound to this tape");
  }

  void check_residual_args(const Tensor<S>& x, const Tensor<S>& f,
                           S alpha) const {
    require_bound(x, "residual_combine x");
    require_bound(f, "residual_combine f");
    if (x.shape != f.shape)
      throw ShapeError("residual_combine: shape mismatch " +
                       shape_str(x.shape) + " vs " + shape_str(f.shape));
    if (!(alpha > S(0)))
      throw ConfigError(
          "residual_combine: alpha must be strictly positive (got " +
          std::to_string(static_cast<double>(alpha)) +
          "); the residual path may be attenuated but not removed");
  }

  std::int32_t add_node(const char* op, std::array<std::int32_t, 3> inputs,
                        const Tensor<S>& value, bool needs_grad,
                        std::function<void(Tape&, std::int32_t)> backward) {
    Node n;
    n.op = op;
    n.inputs = inputs;
    n.value = value;
    n.needs_grad = needs_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return static_cast<std::int32_t>(nodes_.size()) - 1;
  }

  Tensor<S> emit(const char* op, std::initializer_list<std::int32_t> ins,
                 Tensor<S> out,
                 std::function<void(Tape&, std::int32_t)> backward) {
    std::array<std::int32_t, 3> inputs{-1, -1, -1};
    bool needs = false;
    size_t i = 0;
    for (auto id : ins) {
      inputs[i++] = id;
      if (id >= 0 && nodes_[id].needs_grad) needs = true;
    }
#ifndef NDEBUG
    if (!out.finite())
      throw NumericError(std::string("non-finite values produced by op '") +
                         op + "'");
#endif
    out.tape = this;
    out.requires_grad = needs;
    out.node = add_node(op, inputs, out, needs, needs ? std::move(backward)
                                                      : nullptr);
    return out;
  }

  std::vector<Node> nodes_;
  std::vector<std::vector<S>> grads_;
  bool backward_done_ = false;
};

}  // namespace cslb
