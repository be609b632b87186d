#include "ptune/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

#include "ptune/error.hpp"

namespace ptune {

namespace {

void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

void require_same_tape(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw Error("operands recorded on different tapes");
}

// Adds `delta` into the adjoint of `v` when it participates in the gradient.
void accumulate(Tape& tape, Var v, const Tensor& delta) {
  if (!tape.requires_grad(v)) return;
  Tensor& g = tape.grad(v);
  auto dst = g.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

double gelu(double x) {
  const double inner = kGeluTanhScale * (x + kGeluCubic * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(inner));
}

double gelu_derivative(double x) {
  const double inner = kGeluTanhScale * (x + kGeluCubic * x * x * x);
  const double t = std::tanh(inner);
  const double d_inner = kGeluTanhScale * (1.0 + 3.0 * kGeluCubic * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner;
}

void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  // Transposing b lets the inner loop run over contiguous columns. Each
  // product still sums k terms in order from zero before touching `out`.
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<double> bt(k * n);
  const double* pb = b.data().data();
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t kk = 0; kk < k; ++kk) bt[kk * n + j] = pb[j * k + kk];
  }
  const double* pa = a.data().data();
  double* po = out.data().data();
  std::vector<double> acc(n);
  for (std::size_t i = 0; i < m; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      const double* brow = bt.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) acc[j] += aik * brow[j];
    }
    double* orow = po + i * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += acc[j];
  }
}

void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = pa[i * k + kk];
      double* orow = po + kk * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += aik * brow[j];
    }
  }
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  Tensor out = Tensor::matrix(av.rows(), bv.cols());
  matmul_acc(av, bv, out);
  Tape& tape = a.tape();
  const bool rg = a.requires_grad() || b.requires_grad();
  return tape.push(std::move(out), rg, "matmul", [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) matmul_nt_acc(g, t.value(b), t.grad(a));
    if (t.requires_grad(b)) matmul_tn_acc(t.value(a), g, t.grad(b));
  });
}

Var matmul_nt(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul_nt");
  require_matrix(bv, "matmul_nt");
  if (av.cols() != bv.cols()) {
    throw DimensionError("matmul_nt: inner dimensions disagree for " + shape_string(av.shape()) + " and " +
                         shape_string(bv.shape()));
  }
  Tensor out = Tensor::matrix(av.rows(), bv.rows());
  matmul_nt_acc(av, bv, out);
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().push(std::move(out), rg, "matmul_nt", [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) matmul_acc(g, t.value(b), t.grad(a));
    if (t.requires_grad(b)) matmul_tn_acc(g, t.value(a), t.grad(b));
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (!av.same_shape(bv)) {
    throw DimensionError("add: shapes " + shape_string(av.shape()) + " and " + shape_string(bv.shape()) + " differ");
  }
  Tensor out = av;
  out.set_trainable(false);
  auto o = out.data();
  auto bd = bv.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  const bool rg = a.requires_grad() || b.requires_grad();
  return a.tape().push(std::move(out), rg, "add", [a, b](Tape& t, const Tensor& g) {
    accumulate(t, a, g);
    accumulate(t, b, g);
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.set_trainable(false);
  for (double& v : out.data()) v *= factor;
  return a.tape().push(std::move(out), a.requires_grad(), "scale", [a, factor](Tape& t, const Tensor& g) {
    Tensor& ga = t.grad(a);
    auto dst = ga.data();
    auto src = g.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
  });
}

Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v;
  return a.tape().push(Tensor::scalar(s), a.requires_grad(), "sum", [a](Tape& t, const Tensor& g) {
    for (double& v : t.grad(a).data()) v += g[0];
  });
}

Var weighted_sum(Var a, const Tensor& weights) {
  const Tensor& av = a.value();
  if (av.size() != weights.size()) {
    throw DimensionError("weighted_sum: shapes " + shape_string(av.shape()) + " and " +
                         shape_string(weights.shape()) + " differ");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * weights[i];
  return a.tape().push(Tensor::scalar(s), a.requires_grad(), "weighted_sum",
                       [a, weights](Tape& t, const Tensor& g) {
                         auto dst = t.grad(a).data();
                         for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[0] * weights[i];
                       });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  Tape& tape = parts.front().tape();
  const std::size_t width = parts.front().value().cols();
  std::size_t rows = 0;
  bool rg = false;
  for (const Var& p : parts) {
    require_same_tape(parts.front(), p);
    const Tensor& v = p.value();
    require_matrix(v, "concat_rows");
    if (v.cols() != width) {
      throw DimensionError("concat_rows: widths " + shape_string(parts.front().value().shape()) + " and " +
                           shape_string(v.shape()) + " disagree");
    }
    rows += v.rows();
    rg = rg || p.requires_grad();
  }
  Tensor out = Tensor::matrix(rows, width);
  std::size_t offset = 0;
  for (const Var& p : parts) {
    auto src = p.value().data();
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += src.size();
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.push(std::move(out), rg, "concat", [inputs](Tape& t, const Tensor& g) {
    std::size_t offset = 0;
    for (const Var& p : inputs) {
      const std::size_t n = t.value(p).size();
      if (t.requires_grad(p)) {
        auto dst = t.grad(p).data();
        for (std::size_t i = 0; i < n; ++i) dst[i] += g[offset + i];
      }
      offset += n;
    }
  });
}

Var concat_rows(Var top, Var bottom) {
  const Var parts[] = {top, bottom};
  return concat_rows(std::span<const Var>(parts));
}

Var slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Tensor& av = a.value();
  require_matrix(av, "slice_rows");
  if (begin + count > av.rows()) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + shape_string(av.shape()));
  }
  const std::size_t width = av.cols();
  Tensor out = Tensor::matrix(count, width);
  auto src = av.data().subspan(begin * width, count * width);
  std::copy(src.begin(), src.end(), out.data().begin());
  return a.tape().push(std::move(out), a.requires_grad(), "slice_rows",
                       [a, begin, width](Tape& t, const Tensor& g) {
                         auto dst = t.grad(a).data().subspan(begin * width, g.size());
                         for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
                       });
}

Var embed(Var table, std::span<const TokenId> ids) {
  const Tensor& tv = table.value();
  require_matrix(tv, "embed");
  const std::size_t width = tv.cols();
  Tensor out = Tensor::matrix(ids.size(), width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= tv.rows()) {
      throw VocabularyError("token id " + std::to_string(ids[i]) + " outside vocabulary of " +
                            std::to_string(tv.rows()));
    }
    auto src = tv.row(ids[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  std::vector<TokenId> index(ids.begin(), ids.end());
  return table.tape().push(std::move(out), table.requires_grad(), "embed",
                           [table, index = std::move(index)](Tape& t, const Tensor& g) {
                             Tensor& gt = t.grad(table);
                             for (std::size_t i = 0; i < index.size(); ++i) {
                               auto dst = gt.row(index[i]);
                               auto src = g.row(i);
                               for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
                             }
                           });
}

Var softmax_rows(Var a, bool causal) {
  const Tensor& av = a.value();
  require_matrix(av, "softmax_rows");
  const std::size_t m = av.rows(), n = av.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t limit = causal ? std::min(n, i + 1) : n;
    auto x = av.row(i);
    auto y = out.row(i);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < limit; ++j) mx = std::max(mx, x[j]);
    double total = 0.0;
    for (std::size_t j = 0; j < limit; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < limit; ++j) y[j] /= total;
  }
  Tape& tape = a.tape();
  const Var self(&tape, tape.size());
  return tape.push(std::move(out), a.requires_grad(), "softmax", [a, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad(a);
    const std::size_t cols = y.cols();
    for (std::size_t i = 0; i < y.rows(); ++i) {
      auto yr = y.row(i);
      auto gr = g.row(i);
      auto dr = ga.row(i);
      double dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += yr[j] * gr[j];
      for (std::size_t j = 0; j < cols; ++j) dr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

Var rmsnorm(Var a, Var gain) {
  require_same_tape(a, gain);
  const Tensor& av = a.value();
  const Tensor& gv = gain.value();
  require_matrix(av, "rmsnorm");
  const std::size_t m = av.rows(), e = av.cols();
  if (gv.size() != e) {
    throw DimensionError("rmsnorm: gain " + shape_string(gv.shape()) + " does not match " + shape_string(av.shape()));
  }
  if (e == 0) throw DimensionError("rmsnorm: zero width");
  Tensor out = Tensor::matrix(m, e);
  std::vector<double> inv(m);
  for (std::size_t i = 0; i < m; ++i) {
    auto x = av.row(i);
    double sq = 0.0;
    for (double v : x) sq += v * v;
    inv[i] = 1.0 / std::sqrt(sq / static_cast<double>(e) + kRmsNormEpsilon);
    auto y = out.row(i);
    for (std::size_t j = 0; j < e; ++j) y[j] = x[j] * inv[i] * gv[j];
  }
  const bool rg = a.requires_grad() || gain.requires_grad();
  return a.tape().push(std::move(out), rg, "rmsnorm", [a, gain, inv = std::move(inv)](Tape& t, const Tensor& g) {
    const Tensor& x = t.value(a);
    const Tensor& gv = t.value(gain);
    const std::size_t e = x.cols();
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto xr = x.row(i);
      auto gr = g.row(i);
      const double r = inv[i];
      if (t.requires_grad(a)) {
        double dot = 0.0;
        for (std::size_t j = 0; j < e; ++j) dot += gv[j] * gr[j] * xr[j];
        const double coef = r * r * r * dot / static_cast<double>(e);
        auto dr = t.grad(a).row(i);
        for (std::size_t j = 0; j < e; ++j) dr[j] += r * gv[j] * gr[j] - xr[j] * coef;
      }
      if (t.requires_grad(gain)) {
        auto dg = t.grad(gain).data();
        for (std::size_t j = 0; j < e; ++j) dg[j] += gr[j] * xr[j] * r;
      }
    }
  });
}

Var geglu(Var a, Var w_in, Var w_out) {
  require_same_tape(a, w_in);
  require_same_tape(a, w_out);
  const Tensor& av = a.value();
  const Tensor& wi = w_in.value();
  const Tensor& wo = w_out.value();
  require_matrix(av, "geglu");
  require_matrix(wi, "geglu");
  require_matrix(wo, "geglu");
  const std::size_t m = av.rows(), e = av.cols(), f = wo.rows();
  if (wi.rows() != e || wi.cols() != 2 * f || wo.cols() != e || f == 0) {
    throw DimensionError("geglu: incompatible shapes " + shape_string(av.shape()) + ", " + shape_string(wi.shape()) +
                         ", " + shape_string(wo.shape()));
  }
  // z = a w_in holds [gate | value]; h = gelu(gate) * value.
  Tensor z = Tensor::matrix(m, 2 * f);
  matmul_acc(av, wi, z);
  Tensor h = Tensor::matrix(m, f);
  for (std::size_t i = 0; i < m; ++i) {
    auto zr = z.row(i);
    auto hr = h.row(i);
    for (std::size_t j = 0; j < f; ++j) hr[j] = gelu(zr[j]) * zr[f + j];
  }
  Tensor out = Tensor::matrix(m, e);
  matmul_acc(h, wo, out);
  const bool rg = a.requires_grad() || w_in.requires_grad() || w_out.requires_grad();
  if (!rg) return a.tape().push(std::move(out), false, "geglu", nullptr);
  return a.tape().push(
      std::move(out), true, "geglu", [a, w_in, w_out, z = std::move(z), h = std::move(h)](Tape& t, const Tensor& g) {
        const std::size_t m = z.rows(), f = h.cols();
        if (t.requires_grad(w_out)) matmul_tn_acc(h, g, t.grad(w_out));
        if (!t.requires_grad(a) && !t.requires_grad(w_in)) return;
        Tensor dh = Tensor::matrix(m, f);
        matmul_nt_acc(g, t.value(w_out), dh);
        Tensor dz = Tensor::matrix(m, 2 * f);
        for (std::size_t i = 0; i < m; ++i) {
          auto zr = z.row(i);
          auto dhr = dh.row(i);
          auto dzr = dz.row(i);
          for (std::size_t j = 0; j < f; ++j) {
            dzr[j] = dhr[j] * zr[f + j] * gelu_derivative(zr[j]);
            dzr[f + j] = dhr[j] * gelu(zr[j]);
          }
        }
        if (t.requires_grad(a)) matmul_nt_acc(dz, t.value(w_in), t.grad(a));
        if (t.requires_grad(w_in)) matmul_tn_acc(t.value(a), dz, t.grad(w_in));
      });
}

Var cross_entropy(Var logits, std::span<const TokenId> targets) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  const std::size_t t = lv.rows(), vocab = lv.cols();
  if (t == 0) throw DimensionError("cross_entropy: no positions");
  if (targets.size() != t) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         shape_string(lv.shape()) + " logits");
  }
  Tensor probs = Tensor::matrix(t, vocab);
  double total = 0.0;
  for (std::size_t i = 0; i < t; ++i) {
    if (targets[i] >= vocab) {
      throw VocabularyError("target id " + std::to_string(targets[i]) + " outside vocabulary of " +
                            std::to_string(vocab));
    }
    auto x = lv.row(i);
    auto p = probs.row(i);
    double mx = x[0];
    for (double v : x) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t j = 0; j < vocab; ++j) {
      p[j] = std::exp(x[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < vocab; ++j) p[j] /= z;
    total += (mx + std::log(z)) - x[targets[i]];
  }
  const double loss = total / static_cast<double>(t);
  std::vector<TokenId> tg(targets.begin(), targets.end());
  return logits.tape().push(Tensor::scalar(loss), logits.requires_grad(), "cross_entropy",
                            [logits, probs = std::move(probs), tg = std::move(tg)](Tape& tp, const Tensor& g) {
                              Tensor& gl = tp.grad(logits);
                              const double w = g[0] / static_cast<double>(tg.size());
                              for (std::size_t i = 0; i < tg.size(); ++i) {
                                auto p = probs.row(i);
                                auto d = gl.row(i);
                                for (std::size_t j = 0; j < p.size(); ++j) d[j] += w * p[j];
                                d[tg[i]] -= w;
                              }
                            });
}

std::size_t relative_position_bucket(std::ptrdiff_t relative_position, bool bidirectional, std::size_t num_buckets,
                                     std::size_t max_distance) {
  std::size_t ret = 0;
  std::ptrdiff_t n = -relative_position;
  if (bidirectional) {
    num_buckets /= 2;
    if (n < 0) ret += num_buckets;
    n = n < 0 ? -n : n;
  } else {
    n = std::max<std::ptrdiff_t>(n, 0);
  }
  const std::size_t max_exact = num_buckets / 2;
  const auto un = static_cast<std::size_t>(n);
  if (un < max_exact) return ret + un;
  const double ratio = std::log(static_cast<double>(un) / static_cast<double>(max_exact)) /
                       std::log(static_cast<double>(max_distance) / static_cast<double>(max_exact));
  std::size_t large = max_exact + static_cast<std::size_t>(ratio * static_cast<double>(num_buckets - max_exact));
  large = std::min(large, num_buckets - 1);
  return ret + large;
}

namespace {

struct AttentionCache {
  // probs[segment][head] is an n x m row-major block.
  std::vector<std::vector<std::vector<double>>> probs;
  std::vector<std::vector<std::size_t>> buckets;
};

}  // namespace

Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments, std::size_t heads,
              const RelativeBias* bias, bool causal) {
  require_same_tape(q, k);
  require_same_tape(q, v);
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  require_matrix(qv, "attention");
  require_matrix(kv, "attention");
  require_matrix(vv, "attention");
  const std::size_t width = qv.cols();
  if (heads == 0 || width % heads != 0 || kv.cols() != width || vv.cols() != width || kv.rows() != vv.rows()) {
    throw DimensionError("attention: incompatible shapes " + shape_string(qv.shape()) + ", " +
                         shape_string(kv.shape()) + ", " + shape_string(vv.shape()) + " for " +
                         std::to_string(heads) + " heads");
  }
  const std::size_t dh = width / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const Tensor* table = bias != nullptr ? &bias->table.value() : nullptr;
  if (table != nullptr && (table->rank() != 2 || table->cols() != heads)) {
    throw DimensionError("attention: bias table " + shape_string(table->shape()) + " needs " +
                         std::to_string(heads) + " columns");
  }
  const bool rg = q.requires_grad() || k.requires_grad() || v.requires_grad() ||
                  (bias != nullptr && bias->table.requires_grad());

  auto cache = std::make_shared<AttentionCache>();
  cache->probs.resize(segments.size());
  cache->buckets.resize(segments.size());
  Tensor out = Tensor::matrix(qv.rows(), width);
  std::vector<double> row;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const AttentionSegment& seg = segments[s];
    if (seg.q_end < seg.q_begin || seg.k_end < seg.k_begin || seg.q_end > qv.rows() || seg.k_end > kv.rows()) {
      throw DimensionError("attention: segment outside the stacked inputs");
    }
    const std::size_t n = seg.q_end - seg.q_begin, m = seg.k_end - seg.k_begin;
    if (n == 0) continue;
    if (m == 0) throw DimensionError("attention: query rows with no keys");
    if (table != nullptr) {
      auto& b = cache->buckets[s];
      b.resize(n * m);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < m; ++j) {
          const auto rel = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(i);
          b[i * m + j] = relative_position_bucket(rel, bias->bidirectional, table->rows(), bias->max_distance);
        }
      }
    }
    if (rg) cache->probs[s].assign(heads, std::vector<double>(n * m, 0.0));
    row.resize(m);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * dh;
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t limit = causal ? std::min(m, i + 1) : m;
        const double* qi = &qv(seg.q_begin + i, c0);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < limit; ++j) {
          const double* kj = &kv(seg.k_begin + j, c0);
          double s_ij = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s_ij += qi[c] * kj[c];
          s_ij *= scale;
          if (table != nullptr) s_ij += (*table)(cache->buckets[s][i * m + j], h);
          row[j] = s_ij;
          mx = std::max(mx, s_ij);
        }
        double total = 0.0;
        for (std::size_t j = 0; j < limit; ++j) {
          row[j] = std::exp(row[j] - mx);
          total += row[j];
        }
        double* oi = &out(seg.q_begin + i, c0);
        for (std::size_t j = 0; j < limit; ++j) {
          const double p = row[j] / total;
          if (rg) cache->probs[s][h][i * m + j] = p;
          const double* vj = &vv(seg.k_begin + j, c0);
          for (std::size_t c = 0; c < dh; ++c) oi[c] += p * vj[c];
        }
      }
    }
  }
  if (!rg) return q.tape().push(std::move(out), false, "attention", nullptr);

  std::vector<AttentionSegment> segs(segments.begin(), segments.end());
  const Var table_var = bias != nullptr ? bias->table : Var();
  return q.tape().push(
      std::move(out), true, "attention",
      [q, k, v, table_var, segs = std::move(segs), heads, dh, scale, causal, cache](Tape& t, const Tensor& g) {
        const Tensor& qv = t.value(q);
        const Tensor& kv = t.value(k);
        const Tensor& vv = t.value(v);
        Tensor* gq = t.requires_grad(q) ? &t.grad(q) : nullptr;
        Tensor* gk = t.requires_grad(k) ? &t.grad(k) : nullptr;
        Tensor* gv = t.requires_grad(v) ? &t.grad(v) : nullptr;
        Tensor* gb = table_var.valid() && t.requires_grad(table_var) ? &t.grad(table_var) : nullptr;
        std::vector<double> dp;
        for (std::size_t s = 0; s < segs.size(); ++s) {
          const AttentionSegment& seg = segs[s];
          const std::size_t n = seg.q_end - seg.q_begin, m = seg.k_end - seg.k_begin;
          if (n == 0) continue;
          dp.resize(m);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t c0 = h * dh;
            const std::vector<double>& probs = cache->probs[s][h];
            for (std::size_t i = 0; i < n; ++i) {
              const std::size_t limit = causal ? std::min(m, i + 1) : m;
              const double* go = &g(seg.q_begin + i, c0);
              double rowdot = 0.0;
              for (std::size_t j = 0; j < limit; ++j) {
                const double p = probs[i * m + j];
                const double* vj = &vv(seg.k_begin + j, c0);
                double d = 0.0;
                for (std::size_t c = 0; c < dh; ++c) d += go[c] * vj[c];
                dp[j] = d;
                rowdot += p * d;
                if (gv != nullptr) {
                  double* dvj = &(*gv)(seg.k_begin + j, c0);
                  for (std::size_t c = 0; c < dh; ++c) dvj[c] += p * go[c];
                }
              }
              const double* qi = &qv(seg.q_begin + i, c0);
              for (std::size_t j = 0; j < limit; ++j) {
                const double ds = probs[i * m + j] * (dp[j] - rowdot);
                if (gb != nullptr) (*gb)(cache->buckets[s][i * m + j], h) += ds;
                const double* kj = &kv(seg.k_begin + j, c0);
                if (gq != nullptr) {
                  double* dqi = &(*gq)(seg.q_begin + i, c0);
                  for (std::size_t c = 0; c < dh; ++c) dqi[c] += scale * ds * kj[c];
                }
                if (gk != nullptr) {
                  double* dkj = &(*gk)(seg.k_begin + j, c0);
                  for (std::size_t c = 0; c < dh; ++c) dkj[c] += scale * ds * qi[c];
                }
              }
            }
          }
        }
      });
}

double finite_diff_check(const ScalarGraph& f, const Tensor& x, double step) {
  Tensor point = x;
  point.set_trainable(true);
  Tensor analytic(x.shape(), 0.0);
  {
    Tape tape;
    Var leaf = tape.param(point);
    Var y = f(tape, leaf);
    GradientRecord record = tape.backward(y);
    if (const Tensor* g = record.find(point)) analytic = *g;
  }
  auto evaluate = [&f](const Tensor& at) {
    Tape tape;
    Var leaf = tape.param(at);
    return f(tape, leaf).value()[0];
  };
  Tensor probe = x;
  probe.set_trainable(false);
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double fp = evaluate(probe);
    probe[i] = orig - step;
    const double fm = evaluate(probe);
    probe[i] = orig;
    const double numeric = (fp - fm) / (2.0 * step);
    const double err = std::abs(analytic[i] - numeric) / (std::abs(analytic[i]) + std::abs(numeric) + 1e-12);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace ptune
