#pragma once

#include <cstdint>
#include <vector>

namespace compbind {

// Adam with a multi-step learning-rate decay. Milestones are fractions of
// `steps`; the full-scale reference is 25000 steps with decays at 10000 and
// 16000, i.e. 0.4 and 0.64.
struct TrainConfig {
  std::int64_t steps = 3000;
  int batch = 4;
  double lr = 1e-3;
  std::vector<double> decay_fractions = {0.4, 0.64};
  double decay_factor = 0.1;
  double grad_clip = 0.0;  // global-norm clip; 0 disables
  std::uint64_t seed = 11;

  static TrainConfig full_scale_reference() {
    TrainConfig c;
    c.steps = 25000;
    c.batch = 4;
    c.lr = 1e-5;
    return c;
  }

  std::vector<std::int64_t> milestones() const;
  double lr_at(std::int64_t step) const;
  void validate() const;
};

struct LossRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
};

}  // namespace compbind
