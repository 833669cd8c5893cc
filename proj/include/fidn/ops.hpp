#pragma once

// Differentiable operations recorded on a Tape. Each returns the Var of its
// output; the matching backward rule is registered with the node.

#include <cstddef>

#include "fidn/tape.hpp"

namespace fidn {

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEpsilon = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

namespace ops {

// 3x3 convolution, stride 1, zero padding 1.
// input [N,C,H,W], weight [L,C,3,3], bias [L] -> [N,L,H,W]
template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias);

// Disjoint 2x2 max windows. Gradient goes to the first maximum in row-major
// window order.
template <typename T>
Var maxpool2x2(Tape<T>& tape, Var input);

// [N,C,H,W] -> [N,C]
template <typename T>
Var global_avg_pool(Tape<T>& tape, Var input);

// max(0, x); subgradient 0 at x == 0.
template <typename T>
Var relu(Tape<T>& tape, Var input);

// input [N,D], weight [D,K], bias [K] -> [N,K]
template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weight, Var bias);

// Running statistics owned by the model; pointers may be null to skip the
// moving-average update (train) -- eval mode requires them.
template <typename T>
struct RunningStats {
  Tensor<T>* mean = nullptr;
  Tensor<T>* var = nullptr;
};

// Per-feature normalisation. Input [N,F] or [N,F,H,W]; statistics over every
// axis but the feature axis. Train mode needs N >= 2 and uses the biased
// batch variance; the running variance is updated with the unbiased one.
template <typename T>
Var batchnorm(Tape<T>& tape, Var input, Var gamma, Var beta, Mode mode, RunningStats<T> stats);

// Row-wise softmax over the last axis of an [N,K] tensor.
template <typename T>
Var softmax(Tape<T>& tape, Var input);

// Elementwise logistic function.
template <typename T>
Var sigmoid(Tape<T>& tape, Var input);

// u [n], v [m] -> [n*m] with out[i*m + j] = u[i]*v[j].
// Rank-2 operands [N,n], [N,m] are combined row by row into [N,n*m].
template <typename T>
Var kronecker(Tape<T>& tape, Var u, Var v);

// sum_i x_i -> [1]
template <typename T>
Var sum(Tape<T>& tape, Var input);

// sum_i w_i x_i -> [1] with w a constant of the same element count.
template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights);

// a + scale * b for equal shapes.
template <typename T>
Var add_scaled(Tape<T>& tape, Var a, Var b, T scale);

// x[flat_index] -> [1]
template <typename T>
Var element(Tape<T>& tape, Var input, std::size_t flat_index);

}  // namespace ops
}  // namespace fidn
