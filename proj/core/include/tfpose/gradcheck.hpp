#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tfpose/tensor.hpp"

namespace tfpose {

struct GradCheckReport {
  std::string op;
  double max_rel_err = 0.0;
  int params_checked = 0;
  /// Probes whose [x-h, x+h] segment crossed a relu/abs kink; central
  /// differences are invalid there, so the probe is skipped and replaced.
  int kink_skips = 0;
};

struct GradCheckOptions {
  double h = 1e-4;
  /// Cap on probed entries per input tensor; 0 checks every entry.
  int max_entries_per_input = 0;
  std::uint64_t seed = 0x5eed;
};

/// Compares reverse-mode gradients of a scalar-valued function against
/// central differences. `forward` must rebuild its graph from the current
/// values of `inputs` on every call (the harness perturbs them in place).
/// Runs in 64-bit only; finite-difference tolerances are meaningless in f32.
///
/// Relative error per entry: |ga - gn| / max(|ga|, |gn|, 1e-8).
/// Throws if any analytic or numeric gradient is non-finite.
GradCheckReport finite_diff_check(const std::string& op,
                                  const std::function<TensorPtr<double>()>& forward,
                                  const std::vector<TensorPtr<double>>& inputs,
                                  const GradCheckOptions& opt = {});

}  // namespace tfpose
