#pragma once

// Finite-difference gradient checks (64-bit) and invariant properties.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace fidn::verify {

inline constexpr double kOpTolerance = 1e-6;
inline constexpr double kEndToEndTolerance = 1e-5;
// Denominator floor of the relative error. Coordinates whose true gradient
// is zero (a conv bias ahead of batchnorm, say) are otherwise scored by
// finite-difference round-off alone.
inline constexpr double kRelativeFloor = 1e-4;

double relative_error(double analytic, double numeric);
// Central-difference step for a coordinate of value x.
double fd_step(double x);

struct CheckResult {
  std::string name;
  std::string kind;  // "op", "loss", "property"
  std::size_t samples = 0;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct Options {
  std::uint64_t seed = 0;
  std::size_t samples = 24;  // coordinates per check
  // Test fixture: add `fault` to every analytic gradient of this op before
  // comparison.
  std::string faulty_op;
  double fault = 1e-2;
};

// The differentiable ops, in the order the suite reports them.
const std::vector<std::string>& op_names();

CheckResult check_op(const std::string& name, const Options& options);
std::vector<CheckResult> check_all_ops(const Options& options);

// Joint loss through the fused model, over every parameter group.
CheckResult check_joint_loss(const Options& options);

// dL2/dW21: nonzero and matching finite differences with fusion, exactly
// zero without.
CheckResult check_fusion_coupling(bool fusion_enabled, const Options& options);

// Two-step Adam trace with g = +1 then -1 against the closed form.
CheckResult check_adam_trace();

std::vector<CheckResult> check_properties(const Options& options);

struct Summary {
  std::vector<CheckResult> checks;
  bool passed() const;
};

Summary run_all(const Options& options);
std::string format_summary(const Summary& summary);

}  // namespace fidn::verify
