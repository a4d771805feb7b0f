#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "compbind/diffusion/denoiser.hpp"
#include "compbind/diffusion/schedule.hpp"
#include "compbind/encoder/encoder.hpp"
#include "compbind/synthworld/corpus.hpp"
#include "compbind/train_config.hpp"

namespace compbind::diffusion {

// One fixed denoising example: image, caption tokens, timestep and noise.
struct DenoisingExample {
  std::vector<synth::TokenId> tokens;
  MatF x0;   // 1 x 768
  MatF eps;  // 1 x 768
  int t = 1;
};

// Draws `count` examples from `corpus` with fully determined (index, t, eps).
std::vector<DenoisingExample> draw_examples(const synth::Corpus& corpus, const NoiseSchedule& schedule,
                                            int count, std::uint64_t seed);

// Mean squared error between eps and eps_hat for one example, through the
// encoder and the denoiser. When the gradient pointers are non-null the
// corresponding gradients are accumulated with weight `scale`.
template <typename S>
double joint_example_loss(const encoder::EncoderConfig& ecfg, const encoder::EncoderParams<S>& enc,
                          const DenoiserConfig& dcfg, const DenoiserParams<S>& den,
                          const NoiseSchedule& schedule, const DenoisingExample& ex, double scale,
                          encoder::EncoderParams<S>* enc_grad, DenoiserParams<S>* den_grad);

// Loss for a fixed text embedding (encoder bypassed). Returns the loss and,
// when `d_text` is non-null, stores scale * dL/d(text) there.
template <typename S>
double embedding_example_loss(const DenoiserConfig& dcfg, const DenoiserParams<S>& den,
                              const NoiseSchedule& schedule, const Mat<S>& text, const Mat<S>& x0,
                              const Mat<S>& eps, int t, double scale, Mat<S>* d_text,
                              DenoiserParams<S>* den_grad = nullptr);

enum class EncoderMode { Frozen, Joint };

struct DenoiserTrainResult {
  encoder::EncoderParams<float> encoder;
  DenoiserParams<float> denoiser;
  std::vector<LossRecord> losses;
};

// Minibatch Adam on E||eps - eps_theta(x_t, v(c), t)||^2 with t uniform in
// [1, T]. In Joint mode the encoder is updated too. Throws RuntimeFailure on a
// non-finite loss.
DenoiserTrainResult train_denoiser(const synth::Corpus& corpus, const encoder::EncoderConfig& ecfg,
                                   encoder::EncoderParams<float> enc, const DenoiserConfig& dcfg,
                                   DenoiserParams<float> den, const NoiseSchedule& schedule,
                                   const TrainConfig& config, EncoderMode mode,
                                   const std::function<void(const LossRecord&)>& on_step = {});

// Average loss over fixed examples (no gradients).
double mean_joint_loss(const encoder::EncoderConfig& ecfg, const encoder::EncoderParams<float>& enc,
                       const DenoiserConfig& dcfg, const DenoiserParams<float>& den,
                       const NoiseSchedule& schedule, const std::vector<DenoisingExample>& examples);

}  // namespace compbind::diffusion
