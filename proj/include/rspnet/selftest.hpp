#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "rspnet/grad_check.hpp"

namespace rspnet {

/// Components covered by the gradient suite: primitive:<kind> for each of the
/// five kinds, mixed_op, cell, pam:literal, pam:pathnorm, supernet.
std::vector<std::string> grad_components();

/// Loss problem for one component and seed, in either precision. Inputs are at
/// most 2x8x16x16.
template <typename T>
LossProblem<T> grad_problem(const std::string& component, std::uint64_t seed);

struct GradCase {
  std::string component;
  std::uint64_t seed = 0;
  GradCheckResult f64;  // 64-bit autodiff against extended-precision differences
  GradCheckResult f32;  // 32-bit autodiff against extended-precision differences
};

/// Both oracles with step 1e-6; `max_entries` samples entries per tensor.
GradCase run_grad_case(const std::string& component, std::uint64_t seed, std::optional<std::int64_t> max_entries);

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick gradient and invariant checks (a few seeds each).
std::vector<CheckResult> run_selftest(std::uint64_t seed);

}  // namespace rspnet
