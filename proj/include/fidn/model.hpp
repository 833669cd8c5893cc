#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "fidn/ops.hpp"
#include "fidn/tape.hpp"
#include "fidn/tensor.hpp"

namespace fidn {

struct ConvLayerSpec {
  std::size_t channels = 0;
  bool pool_after = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

// "16,16p,32,32p,64,64": one entry per 3x3 conv, 'p' marks a 2x2 max-pool
// after that layer. Global average pooling always follows the last layer.
std::vector<ConvLayerSpec> parse_trunk(std::string_view text);
std::string format_trunk(const std::vector<ConvLayerSpec>& trunk);

struct NetConfig {
  std::size_t input_channels = 1;
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::vector<ConvLayerSpec> trunk = parse_trunk("16,16p,32,32p,64,64");
  std::size_t fc_width = 128;
  std::size_t num_attributes = 8;   // T
  std::size_t num_classes = 32;     // C
  bool fusion_enabled = true;
  double lambda_id = 1.0;
  std::uint64_t seed = 0;

  // Throws ValidationError naming the violated constraint.
  void validate() const;

  std::size_t pool_count() const;
  std::size_t feature_channels() const;  // Cf
  std::size_t feature_height() const;
  std::size_t feature_width() const;
  // Input width of the identification branch's first FC layer.
  std::size_t identity_input_width() const;

  bool operator==(const NetConfig&) const = default;
};

// Parameter groups: trunk (W1), attribute branch (W2,1), identification
// branch (W2,2). The group is encoded by the name prefix.
enum class Group { Trunk, AttributeBranch, IdentityBranch };

std::string_view group_prefix(Group g);
Group group_of(std::string_view name);
// Batchnorm running statistics are stored with the parameters but never
// receive gradients.
bool is_trainable(std::string_view name);

template <typename T>
struct ModelParams {
  NetConfig config;
  std::map<std::string, Tensor<T>> tensors;

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  std::vector<std::string> names(Group g) const;
  std::vector<std::string> trainable_names() const;

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
    return out;
  }
};

// Names and shapes of every tensor the config requires.
std::map<std::string, Shape> expected_tensors(const NetConfig& config);

// Throws unless the tensor set matches the config exactly (names, groups,
// shapes).
template <typename T>
void check_params(const ModelParams<T>& params);

// Fan-in uniform initialisation: weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
// biases 0, gamma 1, beta 0, running mean 0, running var 1. Each tensor draws
// from its own stream keyed by (seed, name), so tensors shared between
// configs get identical values.
ModelParams<float> build_model(const NetConfig& config);

// The +/- bound used for a weight of the given fan-in.
double init_bound(std::size_t fan_in);

struct ForwardOptions {
  Mode mode = Mode::Eval;
  bool attribute_branch = true;
  bool identity_branch = true;
};

template <typename T>
struct ForwardOutputs {
  Tensor<T> attr_logits;     // f  [N,T]
  Tensor<T> attr_probs;      // f' [N,T]
  Tensor<T> gap_features;    // [N,Cf]
  Tensor<T> last_conv_maps;  // [N,Cf,Hf,Wf]
  Tensor<T> fused;           // [N,T*Cf] (empty when fusion is off)
  Tensor<T> id_logits;       // g  [N,C]
  Tensor<T> id_probs;        // g' [N,C]
  Tensor<T> id_embedding;    // [N,fc_width]
};

// A recorded forward pass. Vars of branches that were not computed are
// invalid.
template <typename T>
struct ForwardGraph {
  Tape<T> tape;
  std::map<std::string, Var> params;
  Var images;
  Var last_conv_maps;
  Var gap_features;
  Var attr_logits;
  Var attr_probs;
  Var fused;
  Var id_logits;
  Var id_probs;
  Var id_embedding;

  ForwardOutputs<T> outputs() const;
  // dLoss/dParam for every trainable parameter; exact zeros for parameters
  // the recorded graph never touched. Call after tape.backward().
  std::map<std::string, Tensor<T>> gradients(const ModelParams<T>& model) const;
};

// Train mode updates the batchnorm running statistics held in `params`.
template <typename T>
ForwardGraph<T> forward_graph(ModelParams<T>& params, const Tensor<T>& images, ForwardOptions options);

template <typename T>
ForwardOutputs<T> forward(ModelParams<T>& params, const Tensor<T>& images, Mode mode);

// Eval-mode pass; leaves the parameters untouched.
template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& params, const Tensor<T>& images);

// Row-wise Kronecker product of attribute logits [N,T] and GAP features
// [N,Cf]; attribute index selects the block.
template <typename T>
Var fuse(Tape<T>& tape, Var attr_logits, Var gap_features);

// Class activation map for one attribute on a single image [1,c,H,W]:
// sum_c w_c * maps[c] with w_c = d f[attr] / d gap[c] at this input, then
// min-max normalised to [0,1] (all zeros when constant). Returns [Hf,Wf].
template <typename T>
Tensor<T> cam(const ModelParams<T>& params, const Tensor<T>& image, std::size_t attr_index);

// Raw (unnormalised) map, exposed for inspection and tests.
template <typename T>
Tensor<T> cam_raw(const ModelParams<T>& params, const Tensor<T>& image, std::size_t attr_index);

template <typename T>
Tensor<T> normalize_unit_range(const Tensor<T>& map);

}  // namespace fidn
