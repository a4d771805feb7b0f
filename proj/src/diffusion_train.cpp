#include <algorithm>
#include <cmath>
#include <sstream>

#include "compbind/diffusion/sampler.hpp"
#include "compbind/diffusion/train.hpp"
#include "compbind/encoder/pretrain.hpp"
#include "compbind/errors.hpp"
#include "compbind/numkit/adam.hpp"
#include "compbind/numkit/rng.hpp"

namespace compbind {

// ---------------------------------------------------------------- TrainConfig

std::vector<std::int64_t> TrainConfig::milestones() const {
  std::vector<std::int64_t> out;
  for (double f : decay_fractions) out.push_back(static_cast<std::int64_t>(std::llround(f * static_cast<double>(steps))));
  return out;
}

double TrainConfig::lr_at(std::int64_t step) const { return multistep_lr(lr, step, milestones(), decay_factor); }

void TrainConfig::validate() const {
  if (steps < 0) throw ValidationError("train steps must be non-negative");
  if (batch <= 0) throw ValidationError("train batch must be positive");
  if (!(lr > 0.0)) throw ValidationError("learning rate must be positive");
  for (double f : decay_fractions) {
    if (!(f > 0.0 && f < 1.0)) throw ValidationError("decay points must lie strictly inside the run");
  }
  if (!(decay_factor > 0.0)) throw ValidationError("decay factor must be positive");
  if (grad_clip < 0.0) throw ValidationError("grad_clip must be non-negative");
}

}  // namespace compbind

namespace compbind::diffusion {

std::vector<DenoisingExample> draw_examples(const synth::Corpus& corpus, const NoiseSchedule& schedule,
                                            int count, std::uint64_t seed) {
  if (corpus.samples.empty()) throw ValidationError("cannot draw examples from an empty corpus");
  Rng rng(seed);
  std::vector<DenoisingExample> out;
  out.reserve(count);
  for (int i = 0; i < count; ++i) {
    const auto& s = corpus.samples[rng.below(corpus.samples.size())];
    DenoisingExample ex;
    ex.tokens = s.prompt.tokens;
    ex.x0 = synth::image_to_matrix(s.image);
    ex.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps())));
    ex.eps.resize(1, ex.x0.cols());
    for (Eigen::Index k = 0; k < ex.eps.size(); ++k) ex.eps.data()[k] = static_cast<float>(rng.normal());
    out.push_back(std::move(ex));
  }
  return out;
}

template <typename S>
double embedding_example_loss(const DenoiserConfig& dcfg, const DenoiserParams<S>& den,
                              const NoiseSchedule& schedule, const Mat<S>& text, const Mat<S>& x0,
                              const Mat<S>& eps, int t, double scale, Mat<S>* d_text,
                              DenoiserParams<S>* den_grad) {
  const S a = static_cast<S>(std::sqrt(schedule.alpha_bar(t)));
  const S b = static_cast<S>(std::sqrt(1.0 - schedule.alpha_bar(t)));
  const Mat<S> x_t = a * x0 + b * eps;
  const TextContext<S> ctx = prepare_text(dcfg, den, text);
  const bool need_grad = d_text || den_grad;
  DenoiserTape<S> tape;
  const Mat<S> eps_hat = denoiser_forward<S>(dcfg, den, x_t, ctx, t, nullptr, need_grad ? &tape : nullptr);
  const Mat<S> diff = eps_hat - eps;
  const double loss = static_cast<double>(diff.squaredNorm()) / static_cast<double>(diff.size());
  if (need_grad) {
    const Mat<S> d_eps = diff * static_cast<S>(2.0 * scale / static_cast<double>(diff.size()));
    Mat<S> dt = denoiser_backward(dcfg, den, ctx, tape, d_eps, den_grad);
    if (d_text) *d_text = std::move(dt);
  }
  return loss;
}

template <typename S>
double joint_example_loss(const encoder::EncoderConfig& ecfg, const encoder::EncoderParams<S>& enc,
                          const DenoiserConfig& dcfg, const DenoiserParams<S>& den,
                          const NoiseSchedule& schedule, const DenoisingExample& ex, double scale,
                          encoder::EncoderParams<S>* enc_grad, DenoiserParams<S>* den_grad) {
  const auto tape = encoder::encode_with_tape(ecfg, enc, ex.tokens);
  const Mat<S> x0 = ex.x0.template cast<S>();
  const Mat<S> eps = ex.eps.template cast<S>();
  Mat<S> d_text;
  const double loss = embedding_example_loss(dcfg, den, schedule, tape.embeddings, x0, eps, ex.t, scale,
                                             enc_grad ? &d_text : nullptr, den_grad);
  if (enc_grad) encoder::encoder_backward(ecfg, enc, tape, d_text, *enc_grad);
  return loss;
}

template double embedding_example_loss<float>(const DenoiserConfig&, const DenoiserParams<float>&,
                                              const NoiseSchedule&, const MatF&, const MatF&, const MatF&,
                                              int, double, MatF*, DenoiserParams<float>*);
template double embedding_example_loss<double>(const DenoiserConfig&, const DenoiserParams<double>&,
                                               const NoiseSchedule&, const MatD&, const MatD&, const MatD&,
                                               int, double, MatD*, DenoiserParams<double>*);
template double joint_example_loss<float>(const encoder::EncoderConfig&, const encoder::EncoderParams<float>&,
                                          const DenoiserConfig&, const DenoiserParams<float>&,
                                          const NoiseSchedule&, const DenoisingExample&, double,
                                          encoder::EncoderParams<float>*, DenoiserParams<float>*);
template double joint_example_loss<double>(const encoder::EncoderConfig&, const encoder::EncoderParams<double>&,
                                           const DenoiserConfig&, const DenoiserParams<double>&,
                                           const NoiseSchedule&, const DenoisingExample&, double,
                                           encoder::EncoderParams<double>*, DenoiserParams<double>*);

namespace {

template <typename P>
double squared_norm(P& grads) {
  double s = 0.0;
  grads.visit([&](const std::string&, MatF& m) { s += static_cast<double>(m.squaredNorm()); }, "");
  return s;
}

}  // namespace

DenoiserTrainResult train_denoiser(const synth::Corpus& corpus, const encoder::EncoderConfig& ecfg,
                                   encoder::EncoderParams<float> enc, const DenoiserConfig& dcfg,
                                   DenoiserParams<float> den, const NoiseSchedule& schedule,
                                   const TrainConfig& config, EncoderMode mode,
                                   const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (corpus.samples.empty()) throw ValidationError("training corpus is empty");
  const bool joint = mode == EncoderMode::Joint;
  AdamState<float> enc_state;
  AdamState<float> den_state;
  auto enc_ptrs = nn::param_ptrs(enc);
  auto den_ptrs = nn::param_ptrs(den);
  DenoiserTrainResult result;
  Rng rng(config.seed);
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const auto batch = draw_examples(corpus, schedule, config.batch, rng.next_u64());
    auto enc_grad = nn::zeros_like(enc);
    auto den_grad = nn::zeros_like(den);
    double loss = 0.0;
    const double scale = 1.0 / config.batch;
    for (const auto& ex : batch) {
      loss += joint_example_loss<float>(ecfg, enc, dcfg, den, schedule, ex, scale, joint ? &enc_grad : nullptr,
                                        &den_grad);
    }
    loss /= config.batch;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "denoiser training diverged at step " << step << " (loss " << loss << ")";
      throw RuntimeFailure(msg.str());
    }
    if (config.grad_clip > 0.0) {
      const double norm = std::sqrt(squared_norm(den_grad) + (joint ? squared_norm(enc_grad) : 0.0));
      if (norm > config.grad_clip) {
        const float f = static_cast<float>(config.grad_clip / norm);
        nn::scale_all(den_grad, f);
        nn::scale_all(enc_grad, f);
      }
    }
    const double lr = config.lr_at(step);
    adam_step(den_ptrs, nn::const_param_ptrs(den_grad), den_state, lr);
    if (joint) adam_step(enc_ptrs, nn::const_param_ptrs(enc_grad), enc_state, lr);
    LossRecord rec{step, loss, lr};
    result.losses.push_back(rec);
    if (on_step) on_step(rec);
  }
  result.encoder = std::move(enc);
  result.denoiser = std::move(den);
  return result;
}

double mean_joint_loss(const encoder::EncoderConfig& ecfg, const encoder::EncoderParams<float>& enc,
                       const DenoiserConfig& dcfg, const DenoiserParams<float>& den,
                       const NoiseSchedule& schedule, const std::vector<DenoisingExample>& examples) {
  double total = 0.0;
  for (const auto& ex : examples) {
    total += joint_example_loss<float>(ecfg, enc, dcfg, den, schedule, ex, 1.0, nullptr, nullptr);
  }
  return examples.empty() ? 0.0 : total / static_cast<double>(examples.size());
}

// ---------------------------------------------------------------- sampler

EmbeddingSchedule constant_embedding(const MatF& embedding) {
  return [&embedding](int) -> const MatF& { return embedding; };
}

void SwitchOffPolicy::validate(int steps) const {
  if (tau < 0 || tau > steps + 1) throw ValidationError("switch-off threshold outside [0, T + 1]");
}

SwitchOffPolicy SwitchOffPolicy::from_fraction(double fraction, int steps) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw ValidationError("switch-off fraction must lie in [0, 1]");
  return {static_cast<int>(std::lround(fraction * (steps + 1)))};
}

EmbeddingSchedule switch_off_schedule(const MatF& original, const MatF& projected, SwitchOffPolicy policy) {
  return [&original, &projected, policy](int t) -> const MatF& {
    return policy.projects_at(t) ? projected : original;
  };
}

SampleResult sample(const DenoiserConfig& config, const DenoiserParams<float>& params,
                    const NoiseSchedule& schedule, const EmbeddingSchedule& embedding, std::uint64_t seed,
                    const SampleOptions& options) {
  Rng rng(seed);
  const int pixels = config.image * config.image * config.channels;
  MatF x(1, pixels);
  for (int k = 0; k < pixels; ++k) x.data()[k] = static_cast<float>(rng.normal());

  SampleResult result;
  const MatF* cached_for = nullptr;
  TextContext<float> ctx;
  MatF z(1, pixels);
  for (int t = schedule.steps(); t >= 1; --t) {
    const MatF& emb = embedding(t);
    if (&emb != cached_for) {
      ctx = prepare_text(config, params, emb);
      cached_for = &emb;
    }
    const bool record =
        std::find(options.map_timesteps.begin(), options.map_timesteps.end(), t) != options.map_timesteps.end();
    CrossAttnMaps<float> maps;
    const MatF eps_hat = denoiser_forward<float>(config, params, x, ctx, t, record ? &maps : nullptr, nullptr);
    if (record) result.maps.emplace_back(t, std::move(maps));

    const double beta = schedule.beta(t);
    const float coef = static_cast<float>(beta / std::sqrt(1.0 - schedule.alpha_bar(t)));
    const float inv_sqrt_alpha = static_cast<float>(1.0 / std::sqrt(1.0 - beta));
    x = inv_sqrt_alpha * (x - coef * eps_hat);
    if (t > 1) {
      const float sigma = static_cast<float>(std::sqrt(schedule.posterior_variance(t)));
      for (int k = 0; k < pixels; ++k) z.data()[k] = static_cast<float>(rng.normal());
      x += sigma * z;
    }
  }
  result.image = x.cwiseMax(0.0f).cwiseMin(1.0f);
  return result;
}

}  // namespace compbind::diffusion

namespace compbind::encoder {

diffusion::DenoiserTrainResult train_encoder_jointly(const synth::Corpus& corpus, const EncoderConfig& ecfg,
                                                     EncoderParams<float> enc, const diffusion::DenoiserConfig& dcfg,
                                                     diffusion::DenoiserParams<float> den,
                                                     const diffusion::NoiseSchedule& schedule, const TrainConfig& config,
                                                     const std::function<void(const LossRecord&)>& on_step) {
  return diffusion::train_denoiser(corpus, ecfg, std::move(enc), dcfg, std::move(den), schedule, config,
                                   diffusion::EncoderMode::Joint, on_step);
}

}  // namespace compbind::encoder
