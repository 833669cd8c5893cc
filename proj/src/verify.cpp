#include "fidn/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <numeric>
#include <set>

#include "fidn/evaluate.hpp"
#include "fidn/model.hpp"
#include "fidn/objective.hpp"
#include "fidn/ops.hpp"
#include "fidn/rng.hpp"

namespace fidn::verify {

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), kRelativeFloor});
  return std::abs(analytic - numeric) / scale;
}

double fd_step(double x) { return 1e-4 * std::max(1.0, std::abs(x)); }

const std::vector<std::string>& op_names() {
  static const std::vector<std::string> names = {
      "conv2d", "maxpool2x2", "global_avg_pool", "relu",  "fully_connected", "batchnorm", "softmax",
      "sigmoid", "kronecker", "sum",             "weighted_sum", "add_scaled", "element"};
  return names;
}

namespace {

using Td = Tensor<double>;

Td random_tensor(Rng& rng, Shape shape, double scale = 1.0) {
  Td t(std::move(shape));
  for (double& x : t.data()) x = scale * rng.normal();
  return t;
}

// Values bounded away from zero, random sign.
Td away_from_zero(Rng& rng, Shape shape) {
  Td t(std::move(shape));
  for (double& x : t.data()) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.1);
  return t;
}

// Distinct values at spacing 0.05, shuffled.
Td distinct_values(Rng& rng, Shape shape) {
  Td t(std::move(shape));
  std::vector<std::size_t> perm(t.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.05 * static_cast<double>(perm[i]) - 1.0;
  return t;
}

// Central difference of f along one coordinate, plus a half-step estimate
// used to detect kinks between the two probe points.
struct Difference {
  double value = 0.0;
  bool smooth = true;
};

Difference central_difference(double& coord, const std::function<double()>& f) {
  const double x = coord;
  auto at = [&](double step) {
    coord = x + step;
    const double hi = coord;
    const double fp = f();
    coord = x - step;
    const double lo = coord;
    const double fm = f();
    coord = x;
    return (fp - fm) / (hi - lo);
  };
  const double h = fd_step(x);
  Difference d;
  d.value = at(h);
  const double half = at(0.5 * h);
  d.smooth = std::abs(d.value - half) <= 1e-4 * std::max(1.0, std::abs(d.value));
  return d;
}

// A coordinate is (tensor, flat index); `pick` draws one uniformly over the
// pooled elements, without repeats.
struct Sampler {
  std::vector<std::size_t> sizes;
  std::set<std::pair<std::size_t, std::size_t>> used;

  std::size_t total() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }

  bool pick(Rng& rng, std::pair<std::size_t, std::size_t>& out) {
    if (used.size() >= total()) return false;
    while (true) {
      std::size_t flat = rng.below(total());
      std::size_t k = 0;
      while (flat >= sizes[k]) flat -= sizes[k++];
      if (used.insert({k, flat}).second) {
        out = {k, flat};
        return true;
      }
    }
  }
};

// Scores `samples` coordinates; non-smooth coordinates are redrawn (at most
// as many times as there are samples) and counted in the detail.
template <typename Analytic, typename Coord, typename Eval>
void score(CheckResult& r, Rng& rng, Sampler& sampler, std::size_t samples, Analytic analytic, Coord coord,
           Eval eval) {
  std::size_t redrawn = 0;
  std::pair<std::size_t, std::size_t> c;
  while (r.samples < samples && sampler.pick(rng, c)) {
    const Difference d = central_difference(coord(c), eval);
    if (!d.smooth && redrawn < samples) {
      ++redrawn;
      continue;
    }
    r.max_rel_error = std::max(r.max_rel_error, relative_error(analytic(c), d.value));
    ++r.samples;
  }
  if (redrawn > 0) r.detail += "redrawn " + std::to_string(redrawn) + " non-smooth coordinates; ";
}

struct OpCase {
  std::vector<Td> inputs;
  std::vector<bool> differentiable;
  std::function<Var(Tape<double>&, const std::vector<Var>&)> build;
};

void run_op_case(CheckResult& r, OpCase oc, Rng& rng, const Options& options, bool faulty) {
  // Probe weights give the scalar objective a generic upstream gradient.
  Td probe;
  auto objective = [&](bool record_grads, std::vector<Td>* grads) {
    Tape<double> tape;
    std::vector<Var> vars;
    for (std::size_t i = 0; i < oc.inputs.size(); ++i) vars.push_back(tape.leaf(oc.inputs[i], oc.differentiable[i]));
    const Var out = oc.build(tape, vars);
    if (probe.empty()) probe = random_tensor(rng, tape.value(out).shape());
    const Var loss = ops::weighted_sum(tape, out, probe);
    if (record_grads) {
      tape.backward(loss);
      for (Var v : vars) grads->push_back(tape.grad(v));
    }
    return tape.value(loss)[0];
  };
  std::vector<Td> grads;
  objective(true, &grads);
  if (faulty)
    for (Td& g : grads)
      for (double& x : g.data()) x += options.fault;

  Sampler sampler;
  for (std::size_t i = 0; i < oc.inputs.size(); ++i) sampler.sizes.push_back(oc.differentiable[i] ? oc.inputs[i].size() : 0);
  const std::size_t before = r.samples;
  CheckResult part;
  score(
      part, rng, sampler, options.samples, [&](auto c) { return grads[c.first][c.second]; },
      [&](auto c) -> double& { return oc.inputs[c.first][c.second]; }, [&] { return objective(false, nullptr); });
  r.samples = before + part.samples;
  r.max_rel_error = std::max(r.max_rel_error, part.max_rel_error);
  r.detail += part.detail;
}

std::vector<OpCase> op_cases(const std::string& name, Rng& rng) {
  using V = const std::vector<Var>&;
  using Tp = Tape<double>&;
  std::vector<OpCase> cases;
  if (name == "conv2d") {
    cases.push_back({{random_tensor(rng, {2, 2, 5, 5}), random_tensor(rng, {3, 2, 3, 3}, 0.5), random_tensor(rng, {3})},
                     {true, true, true},
                     [](Tp t, V v) { return ops::conv2d(t, v[0], v[1], v[2]); }});
  } else if (name == "maxpool2x2") {
    cases.push_back({{distinct_values(rng, {2, 2, 4, 6})}, {true}, [](Tp t, V v) { return ops::maxpool2x2(t, v[0]); }});
  } else if (name == "global_avg_pool") {
    cases.push_back(
        {{random_tensor(rng, {2, 3, 3, 4})}, {true}, [](Tp t, V v) { return ops::global_avg_pool(t, v[0]); }});
  } else if (name == "relu") {
    cases.push_back({{away_from_zero(rng, {3, 10})}, {true}, [](Tp t, V v) { return ops::relu(t, v[0]); }});
  } else if (name == "fully_connected") {
    cases.push_back({{random_tensor(rng, {3, 5}), random_tensor(rng, {5, 4}), random_tensor(rng, {4})},
                     {true, true, true},
                     [](Tp t, V v) { return ops::fully_connected(t, v[0], v[1], v[2]); }});
  } else if (name == "batchnorm") {
    auto gamma = [&](std::size_t f) {
      Td g = random_tensor(rng, {f}, 0.3);
      for (double& x : g.data()) x += 1.0;
      return g;
    };
    cases.push_back({{random_tensor(rng, {4, 5}), gamma(5), random_tensor(rng, {5})},
                     {true, true, true},
                     [](Tp t, V v) { return ops::batchnorm(t, v[0], v[1], v[2], Mode::Train, ops::RunningStats<double>{}); }});
    cases.push_back({{random_tensor(rng, {3, 2, 3, 3}), gamma(2), random_tensor(rng, {2})},
                     {true, true, true},
                     [](Tp t, V v) { return ops::batchnorm(t, v[0], v[1], v[2], Mode::Train, ops::RunningStats<double>{}); }});
    auto mean = std::make_shared<Td>(random_tensor(rng, {5}));
    auto var = std::make_shared<Td>(Td({5}));
    for (double& x : var->data()) x = rng.uniform(0.5, 2.0);
    cases.push_back({{random_tensor(rng, {4, 5}), gamma(5), random_tensor(rng, {5})},
                     {true, true, true},
                     [mean, var](Tp t, V v) {
                       return ops::batchnorm(t, v[0], v[1], v[2], Mode::Eval, ops::RunningStats<double>{mean.get(), var.get()});
                     }});
  } else if (name == "softmax") {
    cases.push_back({{random_tensor(rng, {4, 6}, 2.0)}, {true}, [](Tp t, V v) { return ops::softmax(t, v[0]); }});
  } else if (name == "sigmoid") {
    cases.push_back({{random_tensor(rng, {3, 8}, 2.0)}, {true}, [](Tp t, V v) { return ops::sigmoid(t, v[0]); }});
  } else if (name == "kronecker") {
    cases.push_back({{random_tensor(rng, {4}), random_tensor(rng, {5})},
                     {true, true},
                     [](Tp t, V v) { return ops::kronecker(t, v[0], v[1]); }});
    cases.push_back({{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 5})},
                     {true, true},
                     [](Tp t, V v) { return ops::kronecker(t, v[0], v[1]); }});
  } else if (name == "sum") {
    // Squared first so the upstream gradient is not constant.
    cases.push_back({{random_tensor(rng, {4, 6})}, {true}, [](Tp t, V v) { return ops::sum(t, ops::kronecker(t, v[0], v[0])); }});
  } else if (name == "weighted_sum") {
    auto w = std::make_shared<Td>(random_tensor(rng, {4, 6}));
    cases.push_back({{random_tensor(rng, {4, 6})}, {true}, [w](Tp t, V v) { return ops::weighted_sum(t, v[0], *w); }});
  } else if (name == "add_scaled") {
    cases.push_back({{random_tensor(rng, {3, 8}), random_tensor(rng, {3, 8})},
                     {true, true},
                     [](Tp t, V v) { return ops::add_scaled(t, v[0], v[1], 0.7); }});
  } else if (name == "element") {
    cases.push_back({{random_tensor(rng, {5, 6})}, {true}, [](Tp t, V v) { return ops::element(t, v[0], 13); }});
  } else {
    throw ValidationError("unknown op '" + name + "'");
  }
  return cases;
}

NetConfig check_config(bool fusion) {
  NetConfig c;
  c.input_channels = 1;
  c.input_height = 8;
  c.input_width = 8;
  c.trunk = parse_trunk("4,4p,6");
  c.fc_width = 6;
  c.num_attributes = 3;
  c.num_classes = 4;
  c.fusion_enabled = fusion;
  c.lambda_id = 0.7;
  c.seed = 11;
  return c;
}

// Fresh init has zero biases and unit gammas; nudge them so no coordinate
// sits at a special value.
ModelParams<double> generic_params(const NetConfig& config, Rng& rng) {
  ModelParams<double> p = build_model(config).cast<double>();
  for (auto& [name, t] : p.tensors) {
    if (!is_trainable(name)) continue;
    if (name.ends_with("bias") || name.ends_with("bn_beta") || name.ends_with("bn_gamma"))
      for (double& x : t.data()) x += 0.1 * rng.normal();
  }
  return p;
}

Batch<double> generic_batch(const NetConfig& config, Rng& rng) {
  Batch<double> b;
  const std::size_t n = 16;
  b.images = random_tensor(rng, {n, config.input_channels, config.input_height, config.input_width});
  b.attributes = Td({n, config.num_attributes});
  for (std::size_t i = 0; i < n; ++i) b.identities.push_back(i % config.num_classes);
  for (double& a : b.attributes.data()) a = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return b;
}

double loss_value(ModelParams<double> params, const Batch<double>& batch, TrainMode mode) {
  ForwardGraph<double> g = forward_graph(params, batch.images, ForwardOptions{Mode::Train, true, true});
  return joint_loss(g, batch, mode, params.config.lambda_id).values.total;
}

std::map<std::string, Td> loss_gradients(ModelParams<double> params, const Batch<double>& batch, TrainMode mode) {
  ForwardGraph<double> g = forward_graph(params, batch.images, ForwardOptions{Mode::Train, true, true});
  const JointLoss<double> loss = joint_loss(g, batch, mode, params.config.lambda_id);
  g.tape.backward(loss.total);
  return g.gradients(params);
}

// Scores coordinates drawn from the named parameters.
void score_params(CheckResult& r, Rng& rng, ModelParams<double>& params, const std::vector<std::string>& names,
                  const std::map<std::string, Td>& grads, const Batch<double>& batch, TrainMode mode,
                  std::size_t samples) {
  Sampler sampler;
  for (const auto& n : names) sampler.sizes.push_back(params.at(n).size());
  score(
      r, rng, sampler, samples, [&](auto c) { return grads.at(names[c.first])[c.second]; },
      [&](auto c) -> double& { return params.at(names[c.first])[c.second]; },
      [&] { return loss_value(params, batch, mode); });
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

}  // namespace

CheckResult check_op(const std::string& name, const Options& options) {
  Rng rng(mix_seed(options.seed, fnv1a(name)));
  CheckResult r{name, "op", 0, 0.0, kOpTolerance, false, ""};
  for (OpCase& oc : op_cases(name, rng)) run_op_case(r, std::move(oc), rng, options, name == options.faulty_op);
  r.passed = r.samples >= 20 && r.max_rel_error < r.tolerance;
  return r;
}

std::vector<CheckResult> check_all_ops(const Options& options) {
  std::vector<CheckResult> out;
  for (const auto& name : op_names()) out.push_back(check_op(name, options));
  return out;
}

CheckResult check_joint_loss(const Options& options) {
  Rng rng(mix_seed(options.seed, fnv1a("joint_loss")));
  const NetConfig config = check_config(true);
  ModelParams<double> params = generic_params(config, rng);
  const Batch<double> batch = generic_batch(config, rng);
  const auto grads = loss_gradients(params, batch, TrainMode::Joint);
  CheckResult r{"joint_loss", "loss", 0, 0.0, kEndToEndTolerance, false, ""};
  // An equal share of coordinates from each parameter group.
  const std::size_t per_group = (std::max<std::size_t>(options.samples, 20) + 2) / 3;
  for (Group g : {Group::Trunk, Group::AttributeBranch, Group::IdentityBranch}) {
    std::vector<std::string> names;
    for (const auto& n : params.names(g))
      if (is_trainable(n)) names.push_back(n);
    CheckResult part;
    score_params(part, rng, params, names, grads, batch, TrainMode::Joint, per_group);
    r.samples += part.samples;
    r.max_rel_error = std::max(r.max_rel_error, part.max_rel_error);
    r.detail += part.detail;
  }
  r.passed = r.samples >= 20 && r.max_rel_error < r.tolerance;
  return r;
}

CheckResult check_fusion_coupling(bool fusion_enabled, const Options& options) {
  Rng rng(mix_seed(options.seed, fnv1a(fusion_enabled ? "coupling_on" : "coupling_off")));
  const NetConfig config = check_config(fusion_enabled);
  ModelParams<double> params = generic_params(config, rng);
  const Batch<double> batch = generic_batch(config, rng);
  const auto grads = loss_gradients(params, batch, TrainMode::SeparateId);
  std::vector<std::string> names;
  for (const auto& n : params.names(Group::AttributeBranch))
    if (is_trainable(n)) names.push_back(n);
  double max_abs = 0.0;
  for (const auto& n : names)
    for (double x : grads.at(n).data()) max_abs = std::max(max_abs, std::abs(x));

  CheckResult r{fusion_enabled ? "fusion_coupling_on" : "fusion_coupling_off", "loss", 0, 0.0,
                kEndToEndTolerance, false, ""};
  if (fusion_enabled) {
    score_params(r, rng, params, names, grads, batch, TrainMode::SeparateId, std::max<std::size_t>(options.samples, 20));
    r.detail += "max |dL2/dW21| = " + fmt(max_abs);
    r.passed = max_abs > 0.0 && r.samples >= 20 && r.max_rel_error < r.tolerance;
  } else {
    // Exactly zero, analytically and numerically.
    Sampler sampler;
    for (const auto& n : names) sampler.sizes.push_back(params.at(n).size());
    std::pair<std::size_t, std::size_t> c;
    double max_fd = 0.0;
    while (r.samples < std::max<std::size_t>(options.samples, 20) && sampler.pick(rng, c)) {
      const Difference d = central_difference(params.at(names[c.first])[c.second],
                                              [&] { return loss_value(params, batch, TrainMode::SeparateId); });
      max_fd = std::max(max_fd, std::abs(d.value));
      ++r.samples;
    }
    r.max_rel_error = std::max(max_abs, max_fd);
    r.tolerance = 0.0;
    r.detail = "max |dL2/dW21| = " + fmt(max_abs) + ", max |fd| = " + fmt(max_fd);
    r.passed = max_abs == 0.0 && max_fd == 0.0;
  }
  return r;
}

CheckResult check_adam_trace() {
  ModelParams<double> p;
  p.tensors.emplace("w21/out/bias", Td({1}, 0.5));
  AdamState<double> state;
  std::map<std::string, Td> g{{"w21/out/bias", Td({1}, 1.0)}};
  adam_step(p, g, state);
  const double after_one = p.at("w21/out/bias")[0];
  g.at("w21/out/bias")[0] = -1.0;
  adam_step(p, g, state);
  const double after_two = p.at("w21/out/bias")[0];

  // Step 1: m = 0.1, v = 0.001, m_hat = v_hat = 1.
  const double e1 = 0.5 - 0.001 * 1.0 / (1.0 + 1e-8);
  // Step 2: m = -0.01, v = 0.001999, m_hat = -0.01/0.19, v_hat = 1.
  const double e2 = e1 + 0.001 * (0.01 / 0.19) / (1.0 + 1e-8);
  CheckResult r{"adam_trace", "property", 2, 0.0, 1e-10, false, ""};
  r.max_rel_error = std::max(std::abs(after_one - e1), std::abs(after_two - e2));
  r.detail = "abs error";
  r.passed = r.max_rel_error < r.tolerance;
  return r;
}

std::vector<CheckResult> check_properties(const Options& options) {
  Rng rng(mix_seed(options.seed, fnv1a("properties")));
  std::vector<CheckResult> out;
  auto add = [&](std::string name, double err, double tol, std::size_t n) {
    out.push_back(CheckResult{std::move(name), "property", n, err, tol, err <= tol, ""});
  };

  {  // softmax rows sum to one and ignore a per-row shift
    Tape<double> t;
    Td x = random_tensor(rng, {6, 9}, 3.0);
    Td shifted = x;
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 9; ++j) shifted[i * 9 + j] += 10.0 * static_cast<double>(i);
    const Td a = t.value(ops::softmax(t, t.constant(x)));
    const Td b = t.value(ops::softmax(t, t.constant(shifted)));
    double row_err = 0.0, shift_err = 0.0;
    for (std::size_t i = 0; i < 6; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 9; ++j) {
        s += a[i * 9 + j];
        shift_err = std::max(shift_err, std::abs(a[i * 9 + j] - b[i * 9 + j]));
      }
      row_err = std::max(row_err, std::abs(s - 1.0));
    }
    add("softmax_row_sum", row_err, 1e-6, 6);
    add("softmax_shift_invariance", shift_err, 1e-6, 6);
  }
  {  // kronecker norm is multiplicative
    Tape<double> t;
    const Td u = random_tensor(rng, {7}), v = random_tensor(rng, {5});
    const Td k = t.value(ops::kronecker(t, t.constant(u), t.constant(v)));
    auto norm = [](const Td& x) {
      double s = 0.0;
      for (double e : x.data()) s += e * e;
      return std::sqrt(s);
    };
    add("kronecker_norm", std::abs(norm(k) - norm(u) * norm(v)) / (norm(u) * norm(v)), 1e-5, 1);
  }
  {  // conv2d and fully_connected are linear in the input when bias is zero
    Tape<double> t;
    const Td x = random_tensor(rng, {2, 2, 5, 5}), w = random_tensor(rng, {3, 2, 3, 3});
    Td x3 = x;
    for (double& e : x3.data()) e *= 3.0;
    const Td y = t.value(ops::conv2d(t, t.constant(x), t.constant(w), t.constant(Td({3}))));
    const Td y3 = t.value(ops::conv2d(t, t.constant(x3), t.constant(w), t.constant(Td({3}))));
    double err = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) err = std::max(err, std::abs(y3[i] - 3.0 * y[i]) / std::max(1.0, std::abs(y3[i])));
    add("conv2d_linearity", err, 1e-5, y.size());
  }
  {  // CMC: monotone, rank-1 == CMC(1), closed set reaches 1, distractors never help
    std::size_t cases = 0;
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const std::size_t ids = 5, d = 4;
      EmbeddingSet gallery, probe, extra;
      auto fill = [&](EmbeddingSet& s, std::vector<std::size_t> labels) {
        s.ids = std::move(labels);
        s.vectors = random_tensor(rng, {s.ids.size(), d}).cast<float>();
      };
      std::vector<std::size_t> gl, pl, xl;
      for (std::size_t i = 0; i < ids; ++i) gl.push_back(i);
      for (std::size_t i = 0; i < 8; ++i) pl.push_back(rng.below(ids));
      for (std::size_t i = 0; i < 6; ++i) xl.push_back(ids + i);
      fill(gallery, gl);
      fill(probe, pl);
      fill(extra, xl);
      const CmcCurve base = rank_k_hits(gallery, probe, ids);
      const EmbeddingSet bigger = concat(gallery, extra);
      const CmcCurve polluted = rank_k_hits(bigger, probe, bigger.size());
      for (std::size_t k = 1; k < base.max_rank(); ++k) worst = std::max(worst, base.at(k) - base.at(k + 1));
      for (std::size_t k = 1; k <= base.max_rank(); ++k) worst = std::max(worst, polluted.at(k) - base.at(k));
      worst = std::max(worst, std::abs(base.at(ids) - 1.0));
      worst = std::max(worst, std::abs(polluted.at(bigger.size()) - 1.0));
      ++cases;
    }
    add("cmc_properties", worst, 0.0, cases);
  }
  out.push_back(check_adam_trace());
  return out;
}

bool Summary::passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const CheckResult& c) { return c.passed; });
}

Summary run_all(const Options& options) {
  Summary s;
  s.checks = check_all_ops(options);
  s.checks.push_back(check_joint_loss(options));
  s.checks.push_back(check_fusion_coupling(true, options));
  s.checks.push_back(check_fusion_coupling(false, options));
  for (auto& c : check_properties(options)) s.checks.push_back(std::move(c));
  return s;
}

std::string format_summary(const Summary& summary) {
  std::string out;
  char line[256];
  for (const auto& c : summary.checks) {
    std::snprintf(line, sizeof line, "%-9s %-26s samples=%-4zu max_rel_err=%.3e tol=%.0e %s", c.kind.c_str(),
                  c.name.c_str(), c.samples, c.max_rel_error, c.tolerance, c.passed ? "PASS" : "FAIL");
    out += line;
    if (!c.detail.empty()) out += "  (" + c.detail + ")";
    out += '\n';
  }
  return out;
}

}  // namespace fidn::verify
