#pragma once

// Central finite-difference verification of every hand-written gradient.
// The error of one tensor is max|analytic - numeric| / max(|analytic|_inf,
// |numeric|_inf); a check reports the worst tensor over all instances.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "iocc/matrix.hpp"

namespace iocc::gradcheck {

struct Options {
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  int instances = 50;
  double step = 1e-5;
};

struct Row {
  std::string name;
  double max_rel_error = 0.0;
  int instances = 0;
  std::size_t skipped = 0; // coordinates skipped because a ReLU switched inside the stencil
  bool pass = false;
};

/// Relative error of `analytic` against central differences of `f` in `x`.
/// `valid` (optional) may veto individual coordinates; vetoed ones are
/// counted in `skipped`.
double tensor_rel_error(const std::function<double()> &f, Matrix &x, const Matrix &analytic, double step,
                        const std::function<bool()> &valid = {}, std::size_t *skipped = nullptr);

/// The four losses (instance loss in both denominator modes), the model
/// backward pass, and the full staged objective through both heads.
std::vector<Row> run_all(const Options &opts);

} // namespace iocc::gradcheck
