#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ptune/autodiff.hpp"
#include "ptune/tensor.hpp"

namespace ptune {

using TokenId = std::uint32_t;

inline constexpr double kRmsNormEpsilon = 1e-6;
inline constexpr double kGeluTanhScale = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluCubic = 0.044715;

double gelu(double x);
double gelu_derivative(double x);

// Plain kernels. The `_acc` variants add into `out`. Every output row is
// computed from its own input row with a fixed summation order, so stacking
// more rows never changes the bits of an existing row.
void matmul_acc(const Tensor& a, const Tensor& b, Tensor& out);     // out += a b
void matmul_nt_acc(const Tensor& a, const Tensor& b, Tensor& out);  // out += a bT
void matmul_tn_acc(const Tensor& a, const Tensor& b, Tensor& out);  // out += aT b

// Differentiable operations recorded on the tape of their first argument.
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);
Var add(Var a, Var b);
Var scale(Var a, double factor);
Var sum(Var a);
// Sum of a with constant weights: sum_ij a_ij w_ij.
Var weighted_sum(Var a, const Tensor& weights);
Var concat_rows(std::span<const Var> parts);
Var concat_rows(Var top, Var bottom);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
Var embed(Var table, std::span<const TokenId> ids);
Var softmax_rows(Var a, bool causal = false);
Var rmsnorm(Var a, Var gain);
Var geglu(Var a, Var w_in, Var w_out);
// Mean over rows of -log softmax(logits)[target]; returns a scalar node.
Var cross_entropy(Var logits, std::span<const TokenId> targets);

// One attention problem inside a stacked batch: query rows [q_begin, q_end)
// attend over key rows [k_begin, k_end). Key ranges of different segments
// may coincide (several decoder rows scoring against one encoder output).
struct AttentionSegment {
  std::size_t q_begin = 0;
  std::size_t q_end = 0;
  std::size_t k_begin = 0;
  std::size_t k_end = 0;
};

// T5 bucketing of memory_position - query_position.
std::size_t relative_position_bucket(std::ptrdiff_t relative_position, bool bidirectional, std::size_t num_buckets,
                                     std::size_t max_distance);

struct RelativeBias {
  Var table;  // [num_buckets x heads]
  bool bidirectional = true;
  std::size_t max_distance = 128;
};

// Multi-head scaled dot-product attention over projected q, k, v. Positions
// are local to each segment. Causal segments mask keys j > i.
Var attention(Var q, Var k, Var v, std::span<const AttentionSegment> segments, std::size_t heads,
              const RelativeBias* bias, bool causal);

// Builds a scalar-valued graph from a leaf standing in for `x`.
using ScalarGraph = std::function<Var(Tape&, Var x)>;

// Largest |analytic - central| / (|analytic| + |central| + 1e-12) over the
// coordinates of x. `x` is copied and flagged trainable internally.
double finite_diff_check(const ScalarGraph& f, const Tensor& x, double step = 1e-5);

}  // namespace ptune
