#pragma once

// Central finite-difference check of tape gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "vmunet/tensor.hpp"

namespace vmunet {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<name>[<index>]"
  std::size_t checked = 0;

  bool passed(double tol) const { return max_rel_error <= tol; }
};

struct GradCheckOptions {
  double step = 1e-5;
  std::size_t max_entries = 0;  // per tensor; 0 checks every entry, otherwise an evenly spaced subset
  double floor = 1e-4;          // gradients smaller than this are compared absolutely (error <= tol * floor)
};

/// `loss` must build a scalar from the listed inputs (which must require grad) under the active tape.
inline GradCheckResult grad_check(const std::function<Tensor()>& loss, std::vector<std::pair<std::string, Tensor>> inputs,
                                  GradCheckOptions opt = {}) {
  for (auto& [name, t] : inputs) t.zero_grad();
  {
    Tape tape;
    Tensor value;
    {
      TapeScope scope(tape);
      value = loss();
    }
    backward(value, tape);
  }
  auto eval = [&loss] {
    Tensor v = loss();  // no active tape: plain evaluation
    return v.item();
  };
  GradCheckResult result;
  for (auto& [name, t] : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    const std::size_t n = t.numel();
    const std::size_t count = opt.max_entries == 0 ? n : std::min(n, opt.max_entries);
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t i = count == n ? j : (j * n) / count + (n / count) / 2;
      auto data = t.mutable_data();
      const double saved = data[i];
      data[i] = saved + opt.step;
      const double up = eval();
      data[i] = saved - opt.step;
      const double down = eval();
      data[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double err = std::abs(numeric - analytic[i]) / std::max({std::abs(numeric), std::abs(analytic[i]), opt.floor});
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return result;
}

}  // namespace vmunet
