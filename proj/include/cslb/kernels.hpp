#pragma once

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cslb/threads.hpp"

// Data-parallel kernels behind the tape ops. Every kernel splits work across
// independent output rows (or columns), and every floating-point accumulation
// runs in a fixed ascending order. Results are therefore bit-identical for
// any thread count, including the serial path. The naive implementations in
// cslb::kern::ref are the reference oracles used by tests and benchmarks.
namespace cslb::kern {

using i64 = std::int64_t;

namespace detail {

inline int threads_for(i64 work, int threads) {
  if (threads <= 1 || omp_in_parallel()) return 1;
  return static_cast<int>(std::min<i64>(threads, std::max<i64>(1, work)));
}

// Runs body(first, last) over [0, count) in contiguous chunks, one per thread.
template <typename F>
void split(i64 count, int threads, F&& body) {
  const int nt = threads_for(count, threads);
  if (nt <= 1) {
    if (count > 0) body(i64{0}, count);
    return;
  }
#pragma omp parallel num_threads(nt)
  {
    const int t = omp_get_thread_num();
    const i64 chunk = (count + nt - 1) / nt;
    const i64 lo = std::min<i64>(count, t * chunk);
    const i64 hi = std::min<i64>(count, lo + chunk);
    if (lo < hi) body(lo, hi);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// GEMM family. Row-major storage throughout.
// ---------------------------------------------------------------------------

// C[m,n] = (accum ? C : 0) + A[m,k] * B[k,n]
template <typename S>
void gemm_nn(const S* a, const S* b, S* c, i64 m, i64 k, i64 n, bool accum,
             int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(m, threads, [=](i64 i0, i64 i1) {
    for (i64 i = i0; i < i1; ++i) {
      S* crow = c + i * n;
      if (!accum) std::fill(crow, crow + n, S(0));
      const S* arow = a + i * k;
      for (i64 kk = 0; kk < k; ++kk) {
        const S av = arow[kk];
        const S* brow = b + kk * n;
        for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  });
}

// C[m,n] = (accum ? C : 0) + A[m,k] * B[n,k]^T. Implemented by transposing B
// into a scratch buffer and running the nn loop; the per-element accumulation
// order (ascending k) is the same as a plain dot product.
template <typename S>
void gemm_nt(const S* a, const S* b, S* c, i64 m, i64 k, i64 n, bool accum,
             int threads = -1) {
  if (threads < 0) threads = max_threads();
  std::vector<S> bt(static_cast<size_t>(k) * n);
  for (i64 j = 0; j < n; ++j)
    for (i64 kk = 0; kk < k; ++kk) bt[kk * n + j] = b[j * k + kk];
  gemm_nn(a, bt.data(), c, m, k, n, accum, threads);
}

// C[k,n] = (accum ? C : 0) + A[m,k]^T * B[m,n]. Output rows are processed in
// blocks of eight so each B row streams once per block; the per-element
// accumulation order (ascending i) matches the naive loop exactly.
template <typename S>
void gemm_tn(const S* a, const S* b, S* c, i64 m, i64 k, i64 n, bool accum,
             int threads = -1) {
  if (threads < 0) threads = max_threads();
  constexpr i64 kBlock = 8;
  detail::split(k, threads, [=](i64 k0, i64 k1) {
    for (i64 kb = k0; kb < k1; kb += kBlock) {
      const i64 ke = std::min(k1, kb + kBlock);
      if (!accum)
        for (i64 kk = kb; kk < ke; ++kk)
          std::fill(c + kk * n, c + kk * n + n, S(0));
      for (i64 i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        const S* brow = b + i * n;
        for (i64 kk = kb; kk < ke; ++kk) {
          const S av = arow[kk];
          S* crow = c + kk * n;
          for (i64 j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise kernels.
// ---------------------------------------------------------------------------

template <typename S>
void ew_add(const S* a, const S* b, S* y, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] = a[i] + b[i];
  });
}

template <typename S>
void ew_mul(const S* a, const S* b, S* y, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] = a[i] * b[i];
  });
}

// y += a * b
template <typename S>
void ew_mul_acc(const S* a, const S* b, S* y, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] += a[i] * b[i];
  });
}

// y = scale * x + shift
template <typename S>
void ew_affine(const S* x, S* y, S scale, S shift, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] = scale * x[i] + shift;
  });
}

// y += scale * x
template <typename S>
void ew_add_scaled(const S* x, S* y, S scale, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] += scale * x[i];
  });
}

// out = alpha * x + f
template <typename S>
void ew_residual(const S* x, const S* f, S* out, S alpha, i64 n,
                 int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) out[i] = alpha * x[i] + f[i];
  });
}

// Serial dot product, ascending index order.
template <typename S>
S dot(const S* a, const S* b, i64 n) {
  S acc = S(0);
  for (i64 i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// ---------------------------------------------------------------------------
// GELU (tanh approximation).
// ---------------------------------------------------------------------------

template <typename S>
S gelu_scalar(S x) {
  const S c = S(0.7978845608028654);  // sqrt(2/pi)
  const S u = c * (x + S(0.044715) * x * x * x);
  return S(0.5) * x * (S(1) + std::tanh(u));
}

template <typename S>
S gelu_grad_scalar(S x) {
  const S c = S(0.7978845608028654);
  const S u = c * (x + S(0.044715) * x * x * x);
  const S t = std::tanh(u);
  const S du = c * (S(1) + S(3) * S(0.044715) * x * x);
  return S(0.5) * (S(1) + t) + S(0.5) * x * (S(1) - t * t) * du;
}

template <typename S>
void gelu_fwd(const S* x, S* y, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) y[i] = gelu_scalar(x[i]);
  });
}

template <typename S>
void gelu_bwd(const S* x, const S* dy, S* dx, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 lo, i64 hi) {
    for (i64 i = lo; i < hi; ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
  });
}

// ---------------------------------------------------------------------------
// Row softmax with max subtraction.
// ---------------------------------------------------------------------------

template <typename S>
void softmax_rows_fwd(const S* x, S* y, i64 rows, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* xr = x + r * n;
      S* yr = y + r * n;
      S mx = xr[0];
      for (i64 j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
      S sum = S(0);
      for (i64 j = 0; j < n; ++j) {
        yr[j] = std::exp(xr[j] - mx);
        sum += yr[j];
      }
      const S inv = S(1) / sum;
      for (i64 j = 0; j < n; ++j) yr[j] *= inv;
    }
  });
}

// dx += p * (dy - sum_j p_j dy_j), with p the forward output.
template <typename S>
void softmax_rows_bwd(const S* p, const S* dy, S* dx, i64 rows, i64 n,
                      int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* pr = p + r * n;
      const S* dyr = dy + r * n;
      S* dxr = dx + r * n;
      const S d = dot(pr, dyr, n);
      for (i64 j = 0; j < n; ++j) dxr[j] += pr[j] * (dyr[j] - d);
    }
  });
}

// ---------------------------------------------------------------------------
// RMS normalization: y = x / sqrt(mean(x^2) + eps) * gain.
// ---------------------------------------------------------------------------

// inv_rms, when non-null, receives 1/sqrt(mean(x^2)+eps) per row for backward.
template <typename S>
void rmsnorm_fwd(const S* x, const S* gain, S* y, S* inv_rms, i64 rows, i64 d,
                 S eps, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* xr = x + r * d;
      S* yr = y + r * d;
      S ms = S(0);
      for (i64 j = 0; j < d; ++j) ms += xr[j] * xr[j];
      ms /= S(d);
      const S inv = S(1) / std::sqrt(ms + eps);
      if (inv_rms) inv_rms[r] = inv;
      for (i64 j = 0; j < d; ++j) yr[j] = xr[j] * inv * gain[j];
    }
  });
}

// dx += r*g*dy - x * r^3/d * sum(dy*g*x); dgain += sum_rows dy*x*r.
// dgain is accumulated column-parallel so each entry is owned by one thread.
template <typename S>
void rmsnorm_bwd(const S* x, const S* gain, const S* inv_rms, const S* dy,
                 S* dx, S* dgain, i64 rows, i64 d, int threads = -1) {
  if (threads < 0) threads = max_threads();
  if (dx) {
    detail::split(rows, threads, [=](i64 r0, i64 r1) {
      for (i64 r = r0; r < r1; ++r) {
        const S* xr = x + r * d;
        const S* dyr = dy + r * d;
        S* dxr = dx + r * d;
        const S inv = inv_rms[r];
        S s = S(0);
        for (i64 j = 0; j < d; ++j) s += dyr[j] * gain[j] * xr[j];
        const S coef = inv * inv * inv * s / S(d);
        for (i64 j = 0; j < d; ++j)
          dxr[j] += inv * gain[j] * dyr[j] - xr[j] * coef;
      }
    });
  }
  if (dgain) {
    detail::split(d, threads, [=](i64 j0, i64 j1) {
      for (i64 r = 0; r < rows; ++r) {
        const S* xr = x + r * d;
        const S* dyr = dy + r * d;
        const S inv = inv_rms[r];
        for (i64 j = j0; j < j1; ++j) dgain[j] += dyr[j] * xr[j] * inv;
      }
    });
  }
}

// ---------------------------------------------------------------------------
// Row-broadcast bias.
// ---------------------------------------------------------------------------

template <typename S>
void bias_add_fwd(const S* x, const S* b, S* y, i64 rows, i64 n,
                  int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* xr = x + r * n;
      S* yr = y + r * n;
      for (i64 j = 0; j < n; ++j) yr[j] = xr[j] + b[j];
    }
  });
}

// db += column sums of dy; each column owned by one thread, rows ascending.
template <typename S>
void bias_bwd_db(const S* dy, S* db, i64 rows, i64 n, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(n, threads, [=](i64 j0, i64 j1) {
    for (i64 r = 0; r < rows; ++r) {
      const S* dyr = dy + r * n;
      for (i64 j = j0; j < j1; ++j) db[j] += dyr[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Embedding gather/scatter.
// ---------------------------------------------------------------------------

template <typename S>
void embedding_gather(const S* table, const std::int32_t* ids, S* out,
                      i64 count, i64 d, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(count, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r)
      std::copy_n(table + static_cast<i64>(ids[r]) * d, d, out + r * d);
  });
}

// dtable[ids[r]] += dy[r]. Column-parallel: duplicate ids collide only within
// a column, which is accumulated serially in ascending row order.
template <typename S>
void embedding_scatter_add(const S* dy, const std::int32_t* ids, S* dtable,
                           i64 count, i64 d, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(d, threads, [=](i64 j0, i64 j1) {
    for (i64 r = 0; r < count; ++r) {
      S* trow = dtable + static_cast<i64>(ids[r]) * d;
      const S* dyr = dy + r * d;
      for (i64 j = j0; j < j1; ++j) trow[j] += dyr[j];
    }
  });
}

// ---------------------------------------------------------------------------
// Cross entropy (log-sum-exp form). Per-row losses; the caller reduces.
// ---------------------------------------------------------------------------

template <typename S>
void cross_entropy_rows(const S* logits, const std::int32_t* targets,
                        S* losses, i64 rows, i64 vocab, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* lr = logits + r * vocab;
      S mx = lr[0];
      for (i64 j = 1; j < vocab; ++j) mx = std::max(mx, lr[j]);
      S sum = S(0);
      for (i64 j = 0; j < vocab; ++j) sum += std::exp(lr[j] - mx);
      losses[r] = mx + std::log(sum) - lr[targets[r]];
    }
  });
}

// dlogits += scale * (softmax(logits) - onehot(target)) per row.
template <typename S>
void cross_entropy_bwd(const S* logits, const std::int32_t* targets, S scale,
                       S* dlogits, i64 rows, i64 vocab, int threads = -1) {
  if (threads < 0) threads = max_threads();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const S* lr = logits + r * vocab;
      S* dlr = dlogits + r * vocab;
      S mx = lr[0];
      for (i64 j = 1; j < vocab; ++j) mx = std::max(mx, lr[j]);
      S sum = S(0);
      for (i64 j = 0; j < vocab; ++j) sum += std::exp(lr[j] - mx);
      const S inv = S(1) / sum;
      for (i64 j = 0; j < vocab; ++j)
        dlr[j] += scale * std::exp(lr[j] - mx) * inv;
      dlr[targets[r]] -= scale;
    }
  });
}

// ---------------------------------------------------------------------------
// Rotary position encoding. x is [batch*T, d]; row r has position r % T.
// Pairs (2u, 2u+1) inside each head are rotated by pos * base^(-2u/hs).
// ---------------------------------------------------------------------------

template <typename S>
void rope_fwd(const S* x, S* y, i64 rows, i64 seq_len, i64 n_heads,
              i64 head_dim, double base, int threads = -1) {
  if (threads < 0) threads = max_threads();
  const i64 half = head_dim / 2;
  std::vector<S> cs(static_cast<size_t>(seq_len) * half);
  std::vector<S> sn(static_cast<size_t>(seq_len) * half);
  for (i64 p = 0; p < seq_len; ++p)
    for (i64 u = 0; u < half; ++u) {
      const double ang =
          static_cast<double>(p) *
          std::pow(base, -2.0 * static_cast<double>(u) / static_cast<double>(head_dim));
      cs[p * half + u] = static_cast<S>(std::cos(ang));
      sn[p * half + u] = static_cast<S>(std::sin(ang));
    }
  const S* csp = cs.data();
  const S* snp = sn.data();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const i64 pos = r % seq_len;
      const S* xr = x + r * n_heads * head_dim;
      S* yr = y + r * n_heads * head_dim;
      for (i64 h = 0; h < n_heads; ++h) {
        const S* xh = xr + h * head_dim;
        S* yh = yr + h * head_dim;
        for (i64 u = 0; u < half; ++u) {
          const S c = csp[pos * half + u];
          const S s = snp[pos * half + u];
          const S a = xh[2 * u];
          const S b = xh[2 * u + 1];
          yh[2 * u] = a * c - b * s;
          yh[2 * u + 1] = a * s + b * c;
        }
      }
    }
  });
}

// Backward of a rotation is the inverse rotation: dx += R(-theta) dy.
template <typename S>
void rope_bwd(const S* dy, S* dx, i64 rows, i64 seq_len, i64 n_heads,
              i64 head_dim, double base, int threads = -1) {
  if (threads < 0) threads = max_threads();
  const i64 half = head_dim / 2;
  std::vector<S> cs(static_cast<size_t>(seq_len) * half);
  std::vector<S> sn(static_cast<size_t>(seq_len) * half);
  for (i64 p = 0; p < seq_len; ++p)
    for (i64 u = 0; u < half; ++u) {
      const double ang =
          static_cast<double>(p) *
          std::pow(base, -2.0 * static_cast<double>(u) / static_cast<double>(head_dim));
      cs[p * half + u] = static_cast<S>(std::cos(ang));
      sn[p * half + u] = static_cast<S>(std::sin(ang));
    }
  const S* csp = cs.data();
  const S* snp = sn.data();
  detail::split(rows, threads, [=](i64 r0, i64 r1) {
    for (i64 r = r0; r < r1; ++r) {
      const i64 pos = r % seq_len;
      const S* dyr = dy + r * n_heads * head_dim;
      S* dxr = dx + r * n_heads * head_dim;
      for (i64 h = 0; h < n_heads; ++h) {
        const S* dyh = dyr + h * head_dim;
        S* dxh = dxr + h * head_dim;
        for (i64 u = 0; u < half; ++u) {
          const S c = csp[pos * half + u];
          const S s = snp[pos * half + u];
          const S da = dyh[2 * u];
          const S db = dyh[2 * u + 1];
          dxh[2 * u] += da * c + db * s;
          dxh[2 * u + 1] += -da * s + db * c;
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Causally masked multi-head attention core. q/k/v are [batch*T, d] with
// heads laid out contiguously. probs is [batch, heads, T, T]; entries above
// the diagonal stay exactly zero. Parallel over (batch, head) pairs.
// ---------------------------------------------------------------------------

template <typename S>
void attention_fwd(const S* q, const S* k, const S* v, S* probs, S* out,
                   i64 batch, i64 seq_len, i64 n_heads, i64 head_dim, S scale,
                   int threads = -1) {
  if (threads < 0) threads = max_threads();
  const i64 d = n_heads * head_dim;
  detail::split(batch * n_heads, threads, [=](i64 w0, i64 w1) {
    for (i64 w = w0; w < w1; ++w) {
      const i64 b = w / n_heads;
      const i64 h = w % n_heads;
      const i64 row0 = b * seq_len;
      const i64 off = h * head_dim;
      S* pbh = probs + w * seq_len * seq_len;
      for (i64 i = 0; i < seq_len; ++i) {
        const S* qi = q + (row0 + i) * d + off;
        S* pi = pbh + i * seq_len;
        S mx = S(0);
        for (i64 j = 0; j <= i; ++j) {
          pi[j] = dot(qi, k + (row0 + j) * d + off, head_dim) * scale;
          mx = (j == 0) ? pi[0] : std::max(mx, pi[j]);
        }
        S sum = S(0);
        for (i64 j = 0; j <= i; ++j) {
          pi[j] = std::exp(pi[j] - mx);
          sum += pi[j];
        }
        const S inv = S(1) / sum;
        for (i64 j = 0; j <= i; ++j) pi[j] *= inv;
        for (i64 j = i + 1; j < seq_len; ++j) pi[j] = S(0);
        S* oi = out + (row0 + i) * d + off;
        std::fill(oi, oi + head_dim, S(0));
        for (i64 j = 0; j <= i; ++j) {
          const S p = pi[j];
          const S* vj = v + (row0 + j) * d + off;
          for (i64 u = 0; u < head_dim; ++u) oi[u] += p * vj[u];
        }
      }
    }
  });
}

template <typename S>
void attention_bwd(const S* q, const S* k, const S* v, const S* probs,
                   const S* dout, S* dq, S* dk, S* dv, i64 batch, i64 seq_len,
                   i64 n_heads, i64 head_dim, S scale, int threads = -1) {
  if (threads < 0) threads = max_threads();
  const i64 d = n_heads * head_dim;
  detail::split(batch * n_heads, threads, [=](i64 w0, i64 w1) {
    std::vector<S> dp(static_cast<size_t>(seq_len));
    for (i64 w = w0; w < w1; ++w) {
      const i64 b = w / n_heads;
      const i64 h = w % n_heads;
      const i64 row0 = b * seq_len;
      const i64 off = h * head_dim;
      const S* pbh = probs + w * seq_len * seq_len;
      for (i64 i = 0; i < seq_len; ++i) {
        const S* pi = pbh + i * seq_len;
        const S* doi = dout + (row0 + i) * d + off;
        // dv[j] += p[i,j] * dout[i]; dp[j] = <dout[i], v[j]>
        for (i64 j = 0; j <= i; ++j) {
          const S p = pi[j];
          S* dvj = dv + (row0 + j) * d + off;
          const S* vj = v + (row0 + j) * d + off;
          S acc = S(0);
          for (i64 u = 0; u < head_dim; ++u) {
            dvj[u] += p * doi[u];
            acc += doi[u] * vj[u];
          }
          dp[j] = acc;
        }
        // softmax backward on the masked row, then dq/dk.
        S dsum = S(0);
        for (i64 j = 0; j <= i; ++j) dsum += pi[j] * dp[j];
        S* dqi = dq + (row0 + i) * d + off;
        const S* qi = q + (row0 + i) * d + off;
        for (i64 j = 0; j <= i; ++j) {
          const S ds = pi[j] * (dp[j] - dsum) * scale;
          const S* kj = k + (row0 + j) * d + off;
          S* dkj = dk + (row0 + j) * d + off;
          for (i64 u = 0; u < head_dim; ++u) {
            dqi[u] += ds * kj[u];
            dkj[u] += ds * qi[u];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Naive reference implementations, kept for tests and benchmarks.
// ---------------------------------------------------------------------------

namespace ref {

template <typename S>
void gemm_nn(const S* a, const S* b, S* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) {
      S acc = S(0);
      for (i64 kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[kk * n + j];
      c[i * n + j] = acc;
    }
}

template <typename S>
void gemm_nt(const S* a, const S* b, S* c, i64 m, i64 k, i64 n) {
  for (i64 i = 0; i < m; ++i)
    for (i64 j = 0; j < n; ++j) {
      S acc = S(0);
      for (i64 kk = 0; kk < k; ++kk) acc += a[i * k + kk] * b[j * k + kk];
      c[i * n + j] = acc;
    }
}

template <typename S>
void gemm_tn(const S* a, const S* b, S* c, i64 m, i64 k, i64 n) {
  for (i64 kk = 0; kk < k; ++kk)
    for (i64 j = 0; j < n; ++j) {
      S acc = S(0);
      for (i64 i = 0; i < m; ++i) acc += a[i * k + kk] * b[i * n + j];
      c[kk * n + j] = acc;
    }
}

template <typename S>
void softmax_rows(const S* x, S* y, i64 rows, i64 n) {
  for (i64 r = 0; r < rows; ++r) {
    const S* xr = x + r * n;
    S* yr = y + r * n;
    S mx = *std::max_element(xr, xr + n);
    S sum = S(0);
    for (i64 j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    for (i64 j = 0; j < n; ++j) yr[j] /= sum;
  }
}

template <typename S>
void rmsnorm(const S* x, const S* gain, S* y, i64 rows, i64 d, S eps) {
  for (i64 r = 0; r < rows; ++r) {
    S ms = S(0);
    for (i64 j = 0; j < d; ++j) ms += x[r * d + j] * x[r * d + j];
    const S inv = S(1) / std::sqrt(ms / S(d) + eps);
    for (i64 j = 0; j < d; ++j) y[r * d + j] = x[r * d + j] * inv * gain[j];
  }
}

// Single (batch, head) masked attention, direct form.
template <typename S>
void attention_single_head(const S* q, const S* k, const S* v, S* out,
                           i64 seq_len, i64 head_dim, S scale) {
  std::vector<S> row(static_cast<size_t>(seq_len));
  for (i64 i = 0; i < seq_len; ++i) {
    for (i64 j = 0; j <= i; ++j) {
      S acc = S(0);
      for (i64 u = 0; u < head_dim; ++u)
        acc += q[i * head_dim + u] * k[j * head_dim + u];
      row[j] = acc * scale;
    }
    S mx = row[0];
    for (i64 j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
    S sum = S(0);
    for (i64 j = 0; j <= i; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (i64 u = 0; u < head_dim; ++u) {
      S acc = S(0);
      for (i64 j = 0; j <= i; ++j) acc += (row[j] / sum) * v[j * head_dim + u];
      out[i * head_dim + u] = acc;
    }
  }
}

}  // namespace ref

}  // namespace cslb::kern
