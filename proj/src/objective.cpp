#include "fidn/objective.hpp"

#include <algorithm>
#include <cmath>

namespace fidn {

namespace {

double log_sigmoid(double z) {
  // log(1/(1+e^-z)) = -softplus(-z)
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

const double kLogFloor = std::log(kLogClamp);

template <typename T>
void check_attr_labels(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 2 || labels.shape() != logits.shape()) {
    throw ShapeError("attribute_loss: logits " + shape_string(logits.shape()) + " and labels " +
                     shape_string(labels.shape()) + " must both be [N,T]");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != T{0} && labels[i] != T{1}) {
      throw ValidationError("attribute_loss: label at flat index " + std::to_string(i) + " is not binary");
    }
  }
}

template <typename T>
void check_id_labels(const Tensor<T>& logits, std::span<const std::size_t> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("identification_loss: logits " + shape_string(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= logits.dim(1)) {
      throw ValidationError("identification_loss: label " + std::to_string(labels[i]) + " of sample " +
                            std::to_string(i) + " is outside [0," + std::to_string(logits.dim(1)) + ")");
    }
  }
}

// Per-element loss term and its derivative w.r.t. the logit.
struct AttrTerm {
  double loss;
  double dlogit;
};

AttrTerm attr_term(double z, bool positive) {
  // log p = log_sigmoid(z), log(1-p) = log_sigmoid(-z)
  const double lp = positive ? log_sigmoid(z) : log_sigmoid(-z);
  if (lp < kLogFloor) return {-kLogFloor, 0.0};
  const double p = sigmoid(z);
  return {-lp, p - (positive ? 1.0 : 0.0)};
}

}  // namespace

std::string_view mode_name(TrainMode mode) {
  switch (mode) {
    case TrainMode::Joint: return "joint";
    case TrainMode::SeparateAttr: return "separate-attr";
    case TrainMode::SeparateId: return "separate-id";
  }
  return "?";
}

TrainMode parse_mode(std::string_view text) {
  if (text == "joint") return TrainMode::Joint;
  if (text == "separate-attr") return TrainMode::SeparateAttr;
  if (text == "separate-id") return TrainMode::SeparateId;
  throw ValidationError("unknown mode '" + std::string(text) + "' (joint, separate-attr, separate-id)");
}

template <typename T>
double attribute_loss(const Tensor<T>& attr_logits, const Tensor<T>& labels) {
  check_attr_labels(attr_logits, labels);
  double total = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) total += attr_term(attr_logits[i], labels[i] == T{1}).loss;
  return total;
}

template <typename T>
Var attribute_loss(Tape<T>& tape, Var attr_logits, const Tensor<T>& labels) {
  const Tensor<T>& z = tape.value(attr_logits);
  check_attr_labels(z, labels);
  double total = 0.0;
  Tensor<T> dz(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) {
    const AttrTerm term = attr_term(z[i], labels[i] == T{1});
    total += term.loss;
    dz[i] = static_cast<T>(term.dlogit);
  }
  return tape.record(Tensor<T>({1}, static_cast<T>(total)), {attr_logits},
                     [attr_logits, dz = std::move(dz)](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_slot(self)[0];
                       Tensor<T>& gz = t.grad_slot(attr_logits);
                       for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += g * dz[i];
                     });
}

template <typename T>
double identification_loss(const Tensor<T>& id_logits, std::span<const std::size_t> labels) {
  check_id_labels(id_logits, labels);
  const std::size_t k = id_logits.dim(1);
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const T* row = id_logits.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    total += mx + std::log(s) - static_cast<double>(row[labels[r]]);
  }
  return total;
}

template <typename T>
Var identification_loss(Tape<T>& tape, Var id_logits, std::span<const std::size_t> labels) {
  const Tensor<T>& g = tape.value(id_logits);
  const double total = identification_loss(g, labels);
  const std::size_t n = g.dim(0), k = g.dim(1);
  Tensor<T> dg(g.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = g.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
    for (std::size_t j = 0; j < k; ++j) {
      dg[r * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / s - (j == labels[r] ? 1.0 : 0.0));
    }
  }
  return tape.record(Tensor<T>({1}, static_cast<T>(total)), {id_logits},
                     [id_logits, dg = std::move(dg)](Tape<T>& t, std::size_t self) {
                       const T scale = t.grad_slot(self)[0];
                       Tensor<T>& gz = t.grad_slot(id_logits);
                       for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += scale * dg[i];
                     });
}

template <typename T>
JointLoss<T> joint_loss(ForwardGraph<T>& graph, const Batch<T>& batch, TrainMode mode, double lambda_id) {
  Tape<T>& tape = graph.tape;
  JointLoss<T> out;
  Var l1, l2;
  if (mode != TrainMode::SeparateId) {
    if (!graph.attr_logits.valid()) throw ValidationError("joint_loss: graph has no attribute branch");
    l1 = attribute_loss(tape, graph.attr_logits, batch.attributes);
    out.values.l1 = static_cast<double>(tape.value(l1)[0]);
  }
  if (mode != TrainMode::SeparateAttr) {
    if (!graph.id_logits.valid()) throw ValidationError("joint_loss: graph has no identification branch");
    l2 = identification_loss(tape, graph.id_logits, std::span<const std::size_t>(batch.identities));
    out.values.l2 = static_cast<double>(tape.value(l2)[0]);
  }
  switch (mode) {
    case TrainMode::Joint:
      out.total = ops::add_scaled(tape, l1, l2, static_cast<T>(lambda_id));
      break;
    case TrainMode::SeparateAttr: out.total = l1; break;
    case TrainMode::SeparateId: out.total = l2; break;
  }
  out.values.total = static_cast<double>(tape.value(out.total)[0]);
  return out;
}

template <typename T>
void adam_step(ModelParams<T>& params, const std::map<std::string, Tensor<T>>& grads, AdamState<T>& state) {
  const std::vector<std::string> names = params.trainable_names();
  for (const std::string& name : names) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ValidationError("adam_step: no gradient for trainable parameter '" + name + "'");
    if (it->second.shape() != params.at(name).shape()) {
      throw ShapeError("adam_step: gradient for '" + name + "' has shape " + shape_string(it->second.shape()));
    }
  }
  const AdamHyper& h = state.hyper;
  const std::uint64_t t = state.step + 1;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  for (const std::string& name : names) {
    Tensor<T>& theta = params.at(name);
    const Tensor<T>& g = grads.at(name);
    auto [mit, m_new] = state.m.try_emplace(name, theta.shape());
    auto [vit, v_new] = state.v.try_emplace(name, theta.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double gi = g[i];
      const double mi = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / c1;
      const double v_hat = vi / c2;
      theta[i] = static_cast<T>(theta[i] - h.alpha * m_hat / (std::sqrt(v_hat) + h.epsilon));
    }
  }
  state.step = t;
}

#define FIDN_INSTANTIATE_OBJECTIVE(T)                                                                  \
  template Var attribute_loss<T>(Tape<T>&, Var, const Tensor<T>&);                                     \
  template Var identification_loss<T>(Tape<T>&, Var, std::span<const std::size_t>);                    \
  template double attribute_loss<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template double identification_loss<T>(const Tensor<T>&, std::span<const std::size_t>);              \
  template JointLoss<T> joint_loss<T>(ForwardGraph<T>&, const Batch<T>&, TrainMode, double);           \
  template void adam_step<T>(ModelParams<T>&, const std::map<std::string, Tensor<T>>&, AdamState<T>&);

FIDN_INSTANTIATE_OBJECTIVE(float)
FIDN_INSTANTIATE_OBJECTIVE(double)

}  // namespace fidn
