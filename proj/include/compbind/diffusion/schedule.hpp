#pragma once

#include <vector>

#include "compbind/io/checkpoint.hpp"
#include "compbind/numkit/tensor.hpp"

namespace compbind::diffusion {

// Linear beta schedule; alpha_bar(t) = prod_{u <= t} (1 - beta_u), t in [1, T].
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int steps = 200, double beta_start = 1e-4, double beta_end = 0.02);

  int steps() const { return steps_; }
  double beta(int t) const;
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const;
  // Posterior variance of q(x_{t-1} | x_t, x_0); zero at t = 1.
  double posterior_variance(int t) const;
  double beta_start() const { return beta_start_; }
  double beta_end() const { return beta_end_; }

 private:
  void check(int t) const;
  int steps_;
  double beta_start_;
  double beta_end_;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. Throws for t outside [1, T].
MatF add_noise(const MatF& x0, int t, const MatF& eps, const NoiseSchedule& schedule);

// Same formula with an explicit alpha_bar (used for limit checks).
MatF add_noise_with_alpha_bar(const MatF& x0, double alpha_bar, const MatF& eps);

// Stored as f32 scalars, so betas round-trip at single precision.
void save_schedule(io::Checkpoint& ck, const NoiseSchedule& schedule);
NoiseSchedule load_schedule(const io::Checkpoint& ck);

}  // namespace compbind::diffusion
