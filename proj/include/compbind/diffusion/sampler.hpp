#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "compbind/diffusion/denoiser.hpp"
#include "compbind/diffusion/schedule.hpp"

namespace compbind::diffusion {

// Timestep -> conditioning embedding. The returned reference must stay valid
// for the whole sampling run; identical addresses are treated as identical
// embeddings (cross-attention keys/values are reused).
using EmbeddingSchedule = std::function<const MatF&(int t)>;

EmbeddingSchedule constant_embedding(const MatF& embedding);

// Projection is used for t >= tau, the original embedding for t < tau.
// tau = 0 always projects; tau = T + 1 never does.
struct SwitchOffPolicy {
  int tau = 0;

  bool projects_at(int t) const { return t >= tau; }
  void validate(int steps) const;
  // Maps a fraction of the trajectory to a threshold: round(f * (T + 1)).
  // f = 1 gives T + 1 (never), f = 0 gives 0 (always), f = 0.8 projects
  // during the first 20% of the reverse steps.
  static SwitchOffPolicy from_fraction(double fraction, int steps);
};

EmbeddingSchedule switch_off_schedule(const MatF& original, const MatF& projected, SwitchOffPolicy policy);

struct SampleOptions {
  std::vector<int> map_timesteps;  // record head-averaged cross-attention at these t
};

struct SampleResult {
  MatF image;  // 1 x 768, clamped to [0, 1]
  std::vector<std::pair<int, CrossAttnMaps<float>>> maps;
};

// DDPM ancestral sampling from x_T ~ N(0, I):
//   x_{t-1} = (x_t - beta_t / sqrt(1 - alpha_bar_t) eps_hat) / sqrt(alpha_t) + sigma_t z,
// sigma_t^2 the posterior variance, no noise at t = 1. Clamps only the final
// image. All randomness comes from Rng(seed).
SampleResult sample(const DenoiserConfig& config, const DenoiserParams<float>& params,
                    const NoiseSchedule& schedule, const EmbeddingSchedule& embedding,
                    std::uint64_t seed, const SampleOptions& options = {});

}  // namespace compbind::diffusion
