#include "fidn/model.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "fidn/rng.hpp"

namespace fidn {

std::vector<ConvLayerSpec> parse_trunk(std::string_view text) {
  std::vector<ConvLayerSpec> trunk;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t comma = text.find(',', pos);
    std::string_view item = text.substr(pos, comma == std::string_view::npos ? text.size() - pos : comma - pos);
    while (!item.empty() && item.front() == ' ') item.remove_prefix(1);
    while (!item.empty() && item.back() == ' ') item.remove_suffix(1);
    ConvLayerSpec layer;
    if (!item.empty() && item.back() == 'p') {
      layer.pool_after = true;
      item.remove_suffix(1);
    }
    if (item.empty() || item.find_first_not_of("0123456789") != std::string_view::npos) {
      throw ValidationError("trunk: bad layer descriptor '" + std::string(item) + "' in '" + std::string(text) + "'");
    }
    layer.channels = std::stoul(std::string(item));
    if (layer.channels == 0) throw ValidationError("trunk: zero-channel layer in '" + std::string(text) + "'");
    trunk.push_back(layer);
    if (comma == std::string_view::npos) break;
    pos = comma + 1;
  }
  return trunk;
}

std::string format_trunk(const std::vector<ConvLayerSpec>& trunk) {
  std::ostringstream os;
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    if (i) os << ',';
    os << trunk[i].channels << (trunk[i].pool_after ? "p" : "");
  }
  return os.str();
}

std::size_t NetConfig::pool_count() const {
  std::size_t n = 0;
  for (const auto& l : trunk) n += l.pool_after ? 1 : 0;
  return n;
}

std::size_t NetConfig::feature_channels() const { return trunk.empty() ? 0 : trunk.back().channels; }
std::size_t NetConfig::feature_height() const { return input_height >> pool_count(); }
std::size_t NetConfig::feature_width() const { return input_width >> pool_count(); }
std::size_t NetConfig::identity_input_width() const {
  return fusion_enabled ? num_attributes * feature_channels() : feature_channels();
}

void NetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ValidationError("invalid network config: " + msg); };
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (input_height < 1 || input_width < 1) fail("input height and width must be >= 1");
  if (trunk.empty()) fail("trunk must have at least one conv layer");
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    if (trunk[i].channels < 1) fail("trunk layer " + std::to_string(i) + " has zero channels");
  }
  const std::size_t pools = pool_count();
  if (pools >= 31) fail("too many pooling stages");
  const std::size_t div = std::size_t{1} << pools;
  if (input_height % div != 0 || input_width % div != 0) {
    fail("input " + std::to_string(input_height) + "x" + std::to_string(input_width) +
         " is not divisible by 2^" + std::to_string(pools) + " (one factor per max-pool)");
  }
  if (num_attributes < 1) fail("attributes (T) must be >= 1");
  if (num_classes < 2) fail("classes (C) must be >= 2");
  if (fc_width < 1) fail("fc_width must be >= 1");
  if (!(lambda_id >= 0.0) || !std::isfinite(lambda_id)) fail("lambda_id must be a finite value >= 0");
}

std::string_view group_prefix(Group g) {
  switch (g) {
    case Group::Trunk: return "w1/";
    case Group::AttributeBranch: return "w21/";
    case Group::IdentityBranch: return "w22/";
  }
  return "";
}

Group group_of(std::string_view name) {
  for (Group g : {Group::Trunk, Group::AttributeBranch, Group::IdentityBranch}) {
    if (name.starts_with(group_prefix(g))) return g;
  }
  throw ValidationError("parameter '" + std::string(name) + "' has no group prefix (w1/, w21/, w22/)");
}

bool is_trainable(std::string_view name) { return name.find("bn_running_") == std::string_view::npos; }

template <typename T>
Tensor<T>& ModelParams<T>::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("missing parameter tensor '" + name + "'");
  return it->second;
}

template <typename T>
const Tensor<T>& ModelParams<T>::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw ValidationError("missing parameter tensor '" + name + "'");
  return it->second;
}

template <typename T>
std::vector<std::string> ModelParams<T>::names(Group g) const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors)
    if (group_of(name) == g) out.push_back(name);
  return out;
}

template <typename T>
std::vector<std::string> ModelParams<T>::trainable_names() const {
  std::vector<std::string> out;
  for (const auto& [name, t] : tensors)
    if (is_trainable(name)) out.push_back(name);
  return out;
}

namespace {

std::string conv_name(std::size_t i) { return "w1/conv" + std::to_string(i); }

void add_bn(std::map<std::string, Shape>& out, const std::string& prefix, std::size_t f) {
  for (const char* s : {"/bn_gamma", "/bn_beta", "/bn_running_mean", "/bn_running_var"}) out[prefix + s] = {f};
}

}  // namespace

std::map<std::string, Shape> expected_tensors(const NetConfig& config) {
  config.validate();
  std::map<std::string, Shape> out;
  std::size_t in_ch = config.input_channels;
  for (std::size_t i = 0; i < config.trunk.size(); ++i) {
    const std::size_t l = config.trunk[i].channels;
    out[conv_name(i) + "/weight"] = {l, in_ch, 3, 3};
    out[conv_name(i) + "/bias"] = {l};
    add_bn(out, conv_name(i), l);
    in_ch = l;
  }
  const std::size_t cf = config.feature_channels(), fc = config.fc_width;
  out["w21/fc1/weight"] = {cf, fc};
  out["w21/fc1/bias"] = {fc};
  add_bn(out, "w21/fc1", fc);
  out["w21/out/weight"] = {fc, config.num_attributes};
  out["w21/out/bias"] = {config.num_attributes};
  out["w22/fc1/weight"] = {config.identity_input_width(), fc};
  out["w22/fc1/bias"] = {fc};
  add_bn(out, "w22/fc1", fc);
  out["w22/out/weight"] = {fc, config.num_classes};
  out["w22/out/bias"] = {config.num_classes};
  return out;
}

template <typename T>
void check_params(const ModelParams<T>& params) {
  const auto expected = expected_tensors(params.config);
  for (const auto& [name, shape] : expected) {
    auto it = params.tensors.find(name);
    if (it == params.tensors.end()) throw ValidationError("missing parameter tensor '" + name + "'");
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' has shape " + shape_string(it->second.shape()) +
                       ", expected " + shape_string(shape));
    }
  }
  for (const auto& [name, t] : params.tensors) {
    group_of(name);
    if (!expected.contains(name)) throw ValidationError("unexpected parameter tensor '" + name + "'");
  }
}

double init_bound(std::size_t fan_in) { return 1.0 / std::sqrt(static_cast<double>(fan_in)); }

ModelParams<float> build_model(const NetConfig& config) {
  ModelParams<float> params;
  params.config = config;
  for (const auto& [name, shape] : expected_tensors(config)) {
    Tensor<float> t(shape);
    if (name.ends_with("/weight")) {
      const std::size_t fan_in = shape.size() == 4 ? shape[1] * shape[2] * shape[3] : shape[0];
      const double bound = init_bound(fan_in);
      Rng rng(mix_seed(config.seed, fnv1a(name)));
      for (float& v : t.data()) v = static_cast<float>(rng.uniform(-bound, bound));
    } else if (name.ends_with("/bn_gamma") || name.ends_with("/bn_running_var")) {
      t.fill(1.0f);
    }
    params.tensors.emplace(name, std::move(t));
  }
  return params;
}

template <typename T>
Var fuse(Tape<T>& tape, Var attr_logits, Var gap_features) {
  const Tensor<T>& f = tape.value(attr_logits);
  const Tensor<T>& g = tape.value(gap_features);
  if (f.rank() != 2 || g.rank() != 2) {
    throw ShapeError("fuse: expected [N,T] and [N,Cf], got " + shape_string(f.shape()) + " and " +
                     shape_string(g.shape()));
  }
  if (f.dim(0) != g.dim(0)) {
    throw ShapeError("fuse: row counts differ (" + std::to_string(f.dim(0)) + " attribute rows vs " +
                     std::to_string(g.dim(0)) + " feature rows)");
  }
  return ops::kronecker(tape, attr_logits, gap_features);
}

template <typename T>
ForwardOutputs<T> ForwardGraph<T>::outputs() const {
  ForwardOutputs<T> out;
  auto take = [&](Var v, Tensor<T>& dst) {
    if (v.valid()) dst = tape.value(v);
  };
  take(attr_logits, out.attr_logits);
  take(attr_probs, out.attr_probs);
  take(gap_features, out.gap_features);
  take(last_conv_maps, out.last_conv_maps);
  take(fused, out.fused);
  take(id_logits, out.id_logits);
  take(id_probs, out.id_probs);
  take(id_embedding, out.id_embedding);
  return out;
}

template <typename T>
std::map<std::string, Tensor<T>> ForwardGraph<T>::gradients(const ModelParams<T>& model) const {
  std::map<std::string, Tensor<T>> grads;
  for (const auto& [name, t] : model.tensors) {
    if (!is_trainable(name)) continue;
    auto it = params.find(name);
    grads.emplace(name, it == params.end() ? Tensor<T>(t.shape()) : tape.grad(it->second));
  }
  return grads;
}

template <typename T>
ForwardGraph<T> forward_graph(ModelParams<T>& params, const Tensor<T>& images, ForwardOptions options) {
  const NetConfig& cfg = params.config;
  if (images.rank() != 4 || images.dim(1) != cfg.input_channels || images.dim(2) != cfg.input_height ||
      images.dim(3) != cfg.input_width) {
    throw ShapeError("forward: images have shape " + shape_string(images.shape()) + ", expected [N," +
                     std::to_string(cfg.input_channels) + "," + std::to_string(cfg.input_height) + "," +
                     std::to_string(cfg.input_width) + "]");
  }

  ForwardGraph<T> g;
  Tape<T>& tape = g.tape;
  auto param = [&](const std::string& name) {
    Var v = tape.leaf(params.at(name), true);
    g.params[name] = v;
    return v;
  };
  auto norm = [&](Var x, const std::string& prefix) {
    ops::RunningStats<T> stats{&params.at(prefix + "/bn_running_mean"), &params.at(prefix + "/bn_running_var")};
    return ops::batchnorm(tape, x, param(prefix + "/bn_gamma"), param(prefix + "/bn_beta"), options.mode, stats);
  };
  auto dense_block = [&](Var x, const std::string& prefix) {
    Var h = ops::fully_connected(tape, x, param(prefix + "/weight"), param(prefix + "/bias"));
    return ops::relu(tape, norm(h, prefix));
  };

  g.images = tape.constant(images);
  Var h = g.images;
  for (std::size_t i = 0; i < cfg.trunk.size(); ++i) {
    const std::string prefix = "w1/conv" + std::to_string(i);
    h = ops::conv2d(tape, h, param(prefix + "/weight"), param(prefix + "/bias"));
    h = ops::relu(tape, norm(h, prefix));
    if (cfg.trunk[i].pool_after) h = ops::maxpool2x2(tape, h);
  }
  g.last_conv_maps = h;
  g.gap_features = ops::global_avg_pool(tape, h);

  const bool need_attr = options.attribute_branch || (options.identity_branch && cfg.fusion_enabled);
  if (need_attr) {
    Var a = dense_block(g.gap_features, "w21/fc1");
    g.attr_logits = ops::fully_connected(tape, a, param("w21/out/weight"), param("w21/out/bias"));
    g.attr_probs = ops::sigmoid(tape, g.attr_logits);
  }
  if (options.identity_branch) {
    Var in = g.gap_features;
    if (cfg.fusion_enabled) {
      g.fused = fuse(tape, g.attr_logits, g.gap_features);
      in = g.fused;
    }
    g.id_embedding = dense_block(in, "w22/fc1");
    g.id_logits = ops::fully_connected(tape, g.id_embedding, param("w22/out/weight"), param("w22/out/bias"));
    g.id_probs = ops::softmax(tape, g.id_logits);
  }
  return g;
}

template <typename T>
ForwardOutputs<T> forward(ModelParams<T>& params, const Tensor<T>& images, Mode mode) {
  return forward_graph(params, images, ForwardOptions{mode, true, true}).outputs();
}

template <typename T>
ForwardOutputs<T> forward(const ModelParams<T>& params, const Tensor<T>& images) {
  // Eval mode only reads the running statistics.
  auto& mutable_params = const_cast<ModelParams<T>&>(params);
  return forward(mutable_params, images, Mode::Eval);
}

template <typename T>
Tensor<T> cam_raw(const ModelParams<T>& params, const Tensor<T>& image, std::size_t attr_index) {
  if (attr_index >= params.config.num_attributes) {
    throw ValidationError("attribute index " + std::to_string(attr_index) + " out of range [0," +
                          std::to_string(params.config.num_attributes) + ")");
  }
  if (image.rank() != 4 || image.dim(0) != 1) {
    throw ShapeError("cam: expected a single image [1,c,H,W], got " + shape_string(image.shape()));
  }
  auto& mutable_params = const_cast<ModelParams<T>&>(params);
  ForwardGraph<T> g = forward_graph(mutable_params, image, ForwardOptions{Mode::Eval, true, false});
  Var target = ops::element(g.tape, g.attr_logits, attr_index);
  g.tape.backward(target);
  const Tensor<T> weights = g.tape.grad(g.gap_features);
  const Tensor<T>& maps = g.tape.value(g.last_conv_maps);
  const std::size_t cf = maps.dim(1), hf = maps.dim(2), wf = maps.dim(3);
  Tensor<T> out({hf, wf});
  for (std::size_t c = 0; c < cf; ++c) {
    const T w = weights[c];
    for (std::size_t i = 0; i < hf * wf; ++i) out[i] += w * maps[c * hf * wf + i];
  }
  return out;
}

template <typename T>
Tensor<T> normalize_unit_range(const Tensor<T>& map) {
  const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
  const T lo = *lo_it, hi = *hi_it;
  Tensor<T> out(map.shape());
  const T scale = std::max(std::abs(lo), std::abs(hi));
  if (!(hi - lo > T{8} * std::numeric_limits<T>::epsilon() * scale)) return out;
  for (std::size_t i = 0; i < map.size(); ++i) out[i] = (map[i] - lo) / (hi - lo);
  return out;
}

template <typename T>
Tensor<T> cam(const ModelParams<T>& params, const Tensor<T>& image, std::size_t attr_index) {
  return normalize_unit_range(cam_raw(params, image, attr_index));
}

#define FIDN_INSTANTIATE_MODEL(T)                                                                   \
  template struct ModelParams<T>;                                                                   \
  template struct ForwardGraph<T>;                                                                  \
  template void check_params<T>(const ModelParams<T>&);                                            \
  template Var fuse<T>(Tape<T>&, Var, Var);                                                         \
  template ForwardGraph<T> forward_graph<T>(ModelParams<T>&, const Tensor<T>&, ForwardOptions);     \
  template ForwardOutputs<T> forward<T>(ModelParams<T>&, const Tensor<T>&, Mode);                   \
  template ForwardOutputs<T> forward<T>(const ModelParams<T>&, const Tensor<T>&);                   \
  template Tensor<T> cam_raw<T>(const ModelParams<T>&, const Tensor<T>&, std::size_t);              \
  template Tensor<T> normalize_unit_range<T>(const Tensor<T>&);                                     \
  template Tensor<T> cam<T>(const ModelParams<T>&, const Tensor<T>&, std::size_t);

FIDN_INSTANTIATE_MODEL(float)
FIDN_INSTANTIATE_MODEL(double)

}  // namespace fidn
