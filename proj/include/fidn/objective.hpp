#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fidn/model.hpp"

namespace fidn {

inline constexpr double kLogClamp = 1e-12;

// Attribute loss: -sum_{i,j} [y log p + (1-y) log(1-p)] with p = logistic(f),
// logs clamped below at log(1e-12). Batch sum, not mean. labels [N,T] in {0,1}.
template <typename T>
Var attribute_loss(Tape<T>& tape, Var attr_logits, const Tensor<T>& labels);

// Identification loss: -sum_i log softmax(g)_i[label_i], via log-sum-exp.
template <typename T>
Var identification_loss(Tape<T>& tape, Var id_logits, std::span<const std::size_t> labels);

// Value-only forms of the two losses.
template <typename T>
double attribute_loss(const Tensor<T>& attr_logits, const Tensor<T>& labels);
template <typename T>
double identification_loss(const Tensor<T>& id_logits, std::span<const std::size_t> labels);

enum class TrainMode { Joint, SeparateAttr, SeparateId };

std::string_view mode_name(TrainMode mode);
TrainMode parse_mode(std::string_view text);

struct LossValues {
  std::optional<double> l1;  // attribute
  std::optional<double> l2;  // identification
  double total = 0.0;
};

template <typename T>
struct Batch {
  Tensor<T> images;                     // [N,c,H,W]
  std::vector<std::size_t> identities;  // N
  Tensor<T> attributes;                 // [N,T] in {0,1}
  std::size_t size() const { return identities.size(); }
};

template <typename T>
struct JointLoss {
  LossValues values;
  Var total;
};

// Joint: L1 + lambda*L2. SeparateAttr: L1. SeparateId: L2. The graph must
// contain the branches the mode needs.
template <typename T>
JointLoss<T> joint_loss(ForwardGraph<T>& graph, const Batch<T>& batch, TrainMode mode, double lambda_id);

struct AdamHyper {
  double alpha = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  AdamHyper hyper;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
};

// Bias-corrected Adam applied in place to every trainable tensor. A missing
// gradient is an error: it means the tape did not cover the parameter.
template <typename T>
void adam_step(ModelParams<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state);

}  // namespace fidn
