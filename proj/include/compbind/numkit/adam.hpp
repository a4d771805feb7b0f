#pragma once

#include <cstdint>
#include <vector>

#include "compbind/numkit/tensor.hpp"

namespace compbind {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Moments are kept per parameter matrix, in the order the parameters were
// registered on the first step.
template <typename S>
struct AdamState {
  AdamConfig config;
  std::int64_t step = 0;
  std::vector<Mat<S>> m;
  std::vector<Mat<S>> v;
};

// One bias-corrected Adam update. `lr` overrides config.lr (for schedules).
// Throws ValidationError when params/grads/moments disagree in count or shape.
template <typename S>
void adam_step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads,
               AdamState<S>& state, double lr);

template <typename S>
void adam_step(const std::vector<Mat<S>*>& params, const std::vector<const Mat<S>*>& grads,
               AdamState<S>& state) {
  adam_step(params, grads, state, state.config.lr);
}

// Piecewise-constant learning rate: multiplied by `factor` at every milestone
// step already reached.
double multistep_lr(double base, std::int64_t step, const std::vector<std::int64_t>& milestones,
                    double factor);

}  // namespace compbind
