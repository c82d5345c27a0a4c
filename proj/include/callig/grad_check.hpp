#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "callig/tensor.hpp"

namespace callig {

// Max relative error between the reverse-mode gradient of a scalar function
// and central finite differences, over every element of `x`:
//   max_i |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
// `x` must be a leaf; its values are perturbed in place and restored.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double step = 1e-6) {
  x.set_requires_grad(true);
  x.zero_grad();
  backward(f(x));
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());

  double worst = 0.0;
  auto values = x.mutable_values();
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double saved = values[i];
    values[i] = saved + step;
    const double plus = f(x).item();
    values[i] = saved - step;
    const double minus = f(x).item();
    values[i] = saved;
    const double numeric = (plus - minus) / (2.0 * step);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-12});
    worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
  }
  return worst;
}

struct ParameterGradCheck {
  double max_relative_error = 0.0;
  std::string worst;  // name of the parameter holding the worst element
  std::size_t checked = 0;
};

// grad_check over every tensor of a named parameter list. `f` closes over the
// parameters (tensor handles share storage) and ignores its argument.
inline ParameterGradCheck grad_check_parameters(const std::function<Tensor()>& f,
                                                std::vector<std::pair<std::string, Tensor>>& params,
                                                double step = 1e-6) {
  ParameterGradCheck out;
  for (auto& [name, t] : params) {
    const double err = grad_check([&](const Tensor&) { return f(); }, t, step);
    out.checked += t.numel();
    if (out.worst.empty() || err > out.max_relative_error) {
      out.max_relative_error = err;
      out.worst = name;
    }
  }
  return out;
}

}  // namespace callig
