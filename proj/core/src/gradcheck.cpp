#include "tfpose/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <random>
#include <stdexcept>
#include <unordered_set>

namespace tfpose {

namespace {

/// Sign pattern of every kinked-op input (relu, absolute) in deterministic
/// structural order. Two evaluations of the same graph-building code yield
/// comparable signatures; a mismatch means the finite-difference segment
/// straddles a point of non-differentiability.
void kink_signature(const TensorNode<double>* root, std::vector<signed char>& out) {
  out.clear();
  std::unordered_set<const TensorNode<double>*> visited;
  std::vector<const TensorNode<double>*> stack{root};
  visited.insert(root);
  while (!stack.empty()) {
    const TensorNode<double>* node = stack.back();
    stack.pop_back();
    if ((std::strcmp(node->op, "relu") == 0 || std::strcmp(node->op, "absolute") == 0) &&
        !node->parents.empty()) {
      for (double v : node->parents[0]->value) {
        out.push_back(v > 0 ? 1 : (v < 0 ? -1 : 0));
      }
    }
    for (const auto& p : node->parents) {
      if (visited.insert(p.get()).second) stack.push_back(p.get());
    }
  }
}

}  // namespace

GradCheckReport finite_diff_check(const std::string& op,
                                  const std::function<TensorPtr<double>()>& forward,
                                  const std::vector<TensorPtr<double>>& inputs,
                                  const GradCheckOptions& opt) {
  GradCheckReport report;
  report.op = op;

  auto out = forward();
  if (out->size() != 1) {
    throw std::invalid_argument("finite_diff_check(" + op + "): forward must return a scalar");
  }
  if (!std::isfinite(out->scalar())) {
    throw std::runtime_error("finite_diff_check(" + op + "): non-finite forward value");
  }

  Gradients<double> grads;
  backward(out, grads);

  std::mt19937_64 rng(opt.seed);
  std::vector<signed char> sig_plus, sig_minus;
  for (const auto& input : inputs) {
    const std::vector<double>* ga = grads.find(input.get());
    const std::int64_t n = input->size();

    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    std::int64_t target = n;
    if (opt.max_entries_per_input > 0 && n > opt.max_entries_per_input) {
      std::shuffle(idx.begin(), idx.end(), rng);
      target = opt.max_entries_per_input;
    }

    std::int64_t checked = 0;
    for (std::size_t pos = 0; pos < idx.size() && checked < target; ++pos) {
      const std::int64_t i = idx[pos];
      const double analytic = ga ? (*ga)[static_cast<std::size_t>(i)] : 0.0;
      const double saved = input->value[static_cast<std::size_t>(i)];
      input->value[static_cast<std::size_t>(i)] = saved + opt.h;
      auto out_plus = forward();
      const double fp = out_plus->scalar();
      kink_signature(out_plus.get(), sig_plus);
      input->value[static_cast<std::size_t>(i)] = saved - opt.h;
      auto out_minus = forward();
      const double fm = out_minus->scalar();
      kink_signature(out_minus.get(), sig_minus);
      input->value[static_cast<std::size_t>(i)] = saved;
      if (sig_plus != sig_minus) {
        ++report.kink_skips;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * opt.h);
      if (!std::isfinite(analytic) || !std::isfinite(numeric)) {
        throw std::runtime_error("finite_diff_check(" + op + "): non-finite gradient");
      }
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      report.max_rel_err = std::max(report.max_rel_err, rel);
      ++report.params_checked;
      ++checked;
    }
  }
  return report;
}

}  // namespace tfpose
