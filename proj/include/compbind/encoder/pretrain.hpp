#pragma once

#include "compbind/diffusion/train.hpp"

namespace compbind::encoder {

// Joint pretraining of encoder and denoiser on the denoising objective.
// Same as diffusion::train_denoiser in Joint mode.
diffusion::DenoiserTrainResult train_encoder_jointly(const synth::Corpus& corpus, const EncoderConfig& ecfg,
                                                     EncoderParams<float> enc, const diffusion::DenoiserConfig& dcfg,
                                                     diffusion::DenoiserParams<float> den,
                                                     const diffusion::NoiseSchedule& schedule, const TrainConfig& config,
                                                     const std::function<void(const LossRecord&)>& on_step = {});

}  // namespace compbind::encoder
