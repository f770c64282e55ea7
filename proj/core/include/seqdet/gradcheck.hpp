#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "seqdet/tensor.hpp"

namespace seqdet {

// Central finite-difference audit of reverse-mode gradients.
//
// `f` must map the given inputs to a scalar tensor and be deterministic.
// Every element of every input is perturbed (above `max_elems` a seeded
// random subsample is used) and the worst relative error is returned, where
// rel = |analytic - numeric| / max(|analytic| + |numeric|, 1).
template <typename T>
double grad_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                  std::vector<Tensor<T>> inputs, T eps = T(1e-5),
                  std::int64_t max_elems = 10000, std::uint64_t subsample_seed = 0) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  Tensor<T> out = f(inputs);
  require(out.numel() == 1, "grad_check: function must return a scalar");
  out.backward();

  std::int64_t total = 0;
  for (auto& in : inputs) total += in.numel();

  std::vector<std::pair<size_t, std::int64_t>> picks;
  if (total <= max_elems) {
    for (size_t ii = 0; ii < inputs.size(); ++ii)
      for (std::int64_t j = 0; j < inputs[ii].numel(); ++j) picks.emplace_back(ii, j);
  } else {
    Rng rng(subsample_seed);
    for (std::int64_t k = 0; k < max_elems; ++k) {
      std::int64_t flat = rng.randint(total);
      for (size_t ii = 0; ii < inputs.size(); ++ii) {
        if (flat < inputs[ii].numel()) {
          picks.emplace_back(ii, flat);
          break;
        }
        flat -= inputs[ii].numel();
      }
    }
  }

  double worst = 0.0;
  for (auto [ii, j] : picks) {
    Tensor<T>& in = inputs[ii];
    const T saved = in.at(j);
    const double analytic =
        in.has_grad() ? static_cast<double>(in.grad()[static_cast<size_t>(j)]) : 0.0;

    in.at(j) = saved + eps;
    const double fp = static_cast<double>(f(inputs).item());
    in.at(j) = saved - eps;
    const double fm = static_cast<double>(f(inputs).item());
    in.at(j) = saved;

    const double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), 1.0);
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace seqdet
