#include <cmath>

#include "compbind/diffusion/denoiser.hpp"
#include "compbind/diffusion/schedule.hpp"
#include "compbind/errors.hpp"

namespace compbind::diffusion {

// ---------------------------------------------------------------- schedule

NoiseSchedule::NoiseSchedule(int steps, double beta_start, double beta_end)
    : steps_(steps), beta_start_(beta_start), beta_end_(beta_end) {
  if (steps < 1) throw ValidationError("noise schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_end >= beta_start && beta_end < 1.0)) {
    throw ValidationError("noise schedule needs 0 < beta_start <= beta_end < 1");
  }
  betas_.resize(steps);
  alpha_bars_.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    betas_[i] = beta_start + frac * (beta_end - beta_start);
    prod *= 1.0 - betas_[i];
    alpha_bars_[i] = prod;
  }
}

void NoiseSchedule::check(int t) const {
  if (t < 1 || t > steps_) {
    throw ValidationError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps_) + "]");
  }
}

double NoiseSchedule::beta(int t) const {
  check(t);
  return betas_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
  check(t);
  return alpha_bars_[t - 1];
}

double NoiseSchedule::posterior_variance(int t) const {
  check(t);
  if (t == 1) return 0.0;
  return beta(t) * (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t));
}

MatF add_noise_with_alpha_bar(const MatF& x0, double alpha_bar, const MatF& eps) {
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) {
    throw ValidationError("add_noise: image and noise shapes differ");
  }
  const float a = static_cast<float>(std::sqrt(alpha_bar));
  const float b = static_cast<float>(std::sqrt(1.0 - alpha_bar));
  return a * x0 + b * eps;
}

MatF add_noise(const MatF& x0, int t, const MatF& eps, const NoiseSchedule& schedule) {
  return add_noise_with_alpha_bar(x0, schedule.alpha_bar(t), eps);
}

void save_schedule(io::Checkpoint& ck, const NoiseSchedule& schedule) {
  ck.put_scalar("schedule.steps", schedule.steps());
  ck.put_scalar("schedule.beta_start", schedule.beta_start());
  ck.put_scalar("schedule.beta_end", schedule.beta_end());
}

NoiseSchedule load_schedule(const io::Checkpoint& ck) {
  return NoiseSchedule(static_cast<int>(ck.get_scalar("schedule.steps")), ck.get_scalar("schedule.beta_start"),
                       ck.get_scalar("schedule.beta_end"));
}

// ---------------------------------------------------------------- denoiser

void DenoiserConfig::validate() const {
  if (image <= 0 || patch <= 0 || image % patch != 0) throw ValidationError("image must tile into patches");
  if (width <= 0 || heads <= 0 || width % heads != 0) throw ValidationError("denoiser width must divide into heads");
  if (blocks < 1 || mlp_mult < 1 || text_width < 1 || channels < 1) {
    throw ValidationError("denoiser config values must be positive");
  }
  if (width % 2 != 0) throw ValidationError("denoiser width must be even for time features");
}

DenoiserParams<float> init_denoiser(const DenoiserConfig& c, std::uint64_t seed) {
  c.validate();
  Rng rng(seed);
  const int w = c.width;
  DenoiserParams<float> p;
  p.patch_embed = nn::Linear<float>::init(c.patch_dim(), w, rng, 1.0 / std::sqrt(static_cast<double>(c.patch_dim())));
  p.pos.resize(c.patches(), w);
  nn::fill_normal(p.pos, rng, 0.1);
  p.time_proj = nn::Linear<float>::init(w, w, rng, 1.0 / std::sqrt(static_cast<double>(w)));
  const double out_std = 0.5 / std::sqrt(2.0 * c.blocks);
  for (int b = 0; b < c.blocks; ++b) {
    DenoiserBlock<float> blk;
    blk.ln_self = nn::LayerNorm<float>::init(w);
    blk.self_attn = nn::AttentionParams<float>::init(w, w, w, w, rng);
    blk.ln_cross = nn::LayerNorm<float>::init(w);
    blk.cross_attn = nn::AttentionParams<float>::init(w, c.text_width, w, w, rng);
    blk.ln_mlp = nn::LayerNorm<float>::init(w);
    blk.fc1 = nn::Linear<float>::init(w, c.mlp_mult * w, rng, 1.0 / std::sqrt(static_cast<double>(w)));
    blk.fc2 = nn::Linear<float>::init(c.mlp_mult * w, w, rng,
                                      out_std / std::sqrt(static_cast<double>(c.mlp_mult * w)));
    p.blocks.push_back(std::move(blk));
  }
  p.ln_out = nn::LayerNorm<float>::init(w);
  p.head = nn::Linear<float>::init(w, c.patch_dim(), rng, 0.02);
  return p;
}

template <typename S>
Mat<S> timestep_features(int t, int width) {
  const int half = width / 2;
  Mat<S> f(1, width);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
    f(0, i) = static_cast<S>(std::sin(t * freq));
    f(0, half + i) = static_cast<S>(std::cos(t * freq));
  }
  return f;
}

template <typename S>
Mat<S> patchify(const DenoiserConfig& c, const Mat<S>& image) {
  const int per_side = c.image / c.patch;
  if (image.size() != static_cast<Eigen::Index>(c.image) * c.image * c.channels) {
    throw ValidationError("denoiser input image has the wrong size");
  }
  Mat<S> out(c.patches(), c.patch_dim());
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      const int row = pr * per_side + pc;
      for (int dr = 0; dr < c.patch; ++dr) {
        for (int dc = 0; dc < c.patch; ++dc) {
          const int y = pr * c.patch + dr;
          const int x = pc * c.patch + dc;
          for (int ch = 0; ch < c.channels; ++ch) {
            out(row, (dr * c.patch + dc) * c.channels + ch) = image.data()[(y * c.image + x) * c.channels + ch];
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
Mat<S> unpatchify(const DenoiserConfig& c, const Mat<S>& patches) {
  const int per_side = c.image / c.patch;
  Mat<S> out(1, c.image * c.image * c.channels);
  for (int pr = 0; pr < per_side; ++pr) {
    for (int pc = 0; pc < per_side; ++pc) {
      const int row = pr * per_side + pc;
      for (int dr = 0; dr < c.patch; ++dr) {
        for (int dc = 0; dc < c.patch; ++dc) {
          const int y = pr * c.patch + dr;
          const int x = pc * c.patch + dc;
          for (int ch = 0; ch < c.channels; ++ch) {
            out.data()[(y * c.image + x) * c.channels + ch] = patches(row, (dr * c.patch + dc) * c.channels + ch);
          }
        }
      }
    }
  }
  return out;
}

template <typename S>
TextContext<S> prepare_text(const DenoiserConfig& c, const DenoiserParams<S>& params, const Mat<S>& text) {
  if (text.cols() != c.text_width) {
    throw ValidationError("text embedding width " + std::to_string(text.cols()) +
                          " does not match the denoiser's " + std::to_string(c.text_width));
  }
  if (text.rows() < 1) throw ValidationError("text embedding has no tokens");
  TextContext<S> ctx;
  ctx.text = text;
  for (const auto& blk : params.blocks) {
    ctx.keys.push_back(text * blk.cross_attn.wk);
    ctx.values.push_back(text * blk.cross_attn.wv);
  }
  return ctx;
}

template <typename S>
Mat<S> denoiser_forward(const DenoiserConfig& c, const DenoiserParams<S>& params, const Mat<S>& x_t,
                        const TextContext<S>& text, int t, CrossAttnMaps<S>* maps,
                        DenoiserTape<S>* tape) {
  c.validate();
  if (text.keys.size() != params.blocks.size()) throw ValidationError("text context was prepared for another model");
  Mat<S> patches = patchify(c, x_t);
  Mat<S> tfeat = timestep_features<S>(t, c.width);
  Mat<S> x = params.patch_embed.forward(patches) + params.pos;
  x.rowwise() += params.time_proj.forward(tfeat).row(0);
  if (maps) maps->per_block.clear();
  if (tape) {
    tape->patches = patches;
    tape->tfeat = tfeat;
    tape->blocks.clear();
    tape->blocks.resize(params.blocks.size());
  }
  for (std::size_t bi = 0; bi < params.blocks.size(); ++bi) {
    const auto& blk = params.blocks[bi];
    typename DenoiserTape<S>::Block local;
    auto& b = tape ? tape->blocks[bi] : local;
    b.x_in = x;
    b.hs = blk.ln_self.forward(x, &b.ln_self);
    b.qs = b.hs * blk.self_attn.wq;
    b.ks = b.hs * blk.self_attn.wk;
    b.vs = b.hs * blk.self_attn.wv;
    b.self_core = nn::attention_core_forward<S>(b.qs, b.ks, b.vs, c.heads, false, nullptr);
    b.x1 = x + b.self_core.mixed * blk.self_attn.wo;
    b.hc = blk.ln_cross.forward(b.x1, &b.ln_cross);
    b.qc = b.hc * blk.cross_attn.wq;
    b.cross_core = nn::attention_core_forward<S>(b.qc, text.keys[bi], text.values[bi], c.heads, false, nullptr);
    if (maps) {
      Mat<S> avg = Mat<S>::Zero(b.qc.rows(), text.keys[bi].rows());
      for (const auto& p : b.cross_core.probs) avg += p;
      avg /= static_cast<S>(c.heads);
      maps->per_block.push_back(std::move(avg));
    }
    b.x2 = b.x1 + b.cross_core.mixed * blk.cross_attn.wo;
    b.hm = blk.ln_mlp.forward(b.x2, &b.ln_mlp);
    b.pre_gelu = blk.fc1.forward(b.hm);
    b.act = nn::gelu(b.pre_gelu);
    x = b.x2 + blk.fc2.forward(b.act);
  }
  typename nn::LayerNorm<S>::Cache ln_local;
  Mat<S> h_out = params.ln_out.forward(x, tape ? &tape->ln_out : &ln_local);
  Mat<S> eps_patches = params.head.forward(h_out);
  if (tape) {
    tape->x_final = x;
    tape->h_out = h_out;
    tape->eps_patches = eps_patches;
  }
  return unpatchify(c, eps_patches);
}

template <typename S>
Mat<S> denoiser_forward(const DenoiserConfig& c, const DenoiserParams<S>& params, const Mat<S>& x_t,
                        const Mat<S>& text, int t, CrossAttnMaps<S>* maps) {
  return denoiser_forward<S>(c, params, x_t, prepare_text(c, params, text), t, maps, nullptr);
}

template <typename S>
Mat<S> denoiser_backward(const DenoiserConfig& c, const DenoiserParams<S>& params,
                         const TextContext<S>& text, const DenoiserTape<S>& tape, const Mat<S>& d_eps,
                         DenoiserParams<S>* grad) {
  // Gradients are always accumulated somewhere; a scratch copy keeps the
  // arithmetic identical when the caller only wants d(text).
  DenoiserParams<S> scratch;
  DenoiserParams<S>& g = grad ? *grad : (scratch = nn::zeros_like(params));

  Mat<S> d_eps_patches = patchify(c, d_eps);
  Mat<S> d_h_out = params.head.backward(tape.h_out, d_eps_patches, g.head);
  Mat<S> dx = params.ln_out.backward(tape.ln_out, d_h_out, g.ln_out);
  Mat<S> d_text = Mat<S>::Zero(text.text.rows(), text.text.cols());

  for (std::size_t bi = params.blocks.size(); bi-- > 0;) {
    const auto& blk = params.blocks[bi];
    auto& gb = g.blocks[bi];
    const auto& b = tape.blocks[bi];
    // MLP
    Mat<S> d_act = blk.fc2.backward(b.act, dx, gb.fc2);
    Mat<S> d_pre = nn::gelu_backward(b.pre_gelu, d_act);
    Mat<S> d_hm = blk.fc1.backward(b.hm, d_pre, gb.fc1);
    Mat<S> d_x2 = dx + blk.ln_mlp.backward(b.ln_mlp, d_hm, gb.ln_mlp);
    // cross-attention
    gb.cross_attn.wo.noalias() += b.cross_core.mixed.transpose() * d_x2;
    Mat<S> d_mixed_c = d_x2 * blk.cross_attn.wo.transpose();
    Mat<S> dqc, dkc, dvc;
    nn::attention_core_backward(b.qc, text.keys[bi], text.values[bi], b.cross_core, c.heads, d_mixed_c, dqc,
                                dkc, dvc);
    gb.cross_attn.wq.noalias() += b.hc.transpose() * dqc;
    gb.cross_attn.wk.noalias() += text.text.transpose() * dkc;
    gb.cross_attn.wv.noalias() += text.text.transpose() * dvc;
    d_text.noalias() += dkc * blk.cross_attn.wk.transpose() + dvc * blk.cross_attn.wv.transpose();
    Mat<S> d_hc = dqc * blk.cross_attn.wq.transpose();
    Mat<S> d_x1 = d_x2 + blk.ln_cross.backward(b.ln_cross, d_hc, gb.ln_cross);
    // self-attention
    gb.self_attn.wo.noalias() += b.self_core.mixed.transpose() * d_x1;
    Mat<S> d_mixed_s = d_x1 * blk.self_attn.wo.transpose();
    Mat<S> dqs, dks, dvs;
    nn::attention_core_backward(b.qs, b.ks, b.vs, b.self_core, c.heads, d_mixed_s, dqs, dks, dvs);
    gb.self_attn.wq.noalias() += b.hs.transpose() * dqs;
    gb.self_attn.wk.noalias() += b.hs.transpose() * dks;
    gb.self_attn.wv.noalias() += b.hs.transpose() * dvs;
    Mat<S> d_hs = dqs * blk.self_attn.wq.transpose() + dks * blk.self_attn.wk.transpose() +
                  dvs * blk.self_attn.wv.transpose();
    dx = d_x1 + blk.ln_self.backward(b.ln_self, d_hs, gb.ln_self);
  }
  // x0 = patch_embed(patches) + pos + time_proj(tfeat)
  g.pos += dx;
  Mat<S> d_t = dx.colwise().sum();
  params.time_proj.backward(tape.tfeat, d_t, g.time_proj);
  params.patch_embed.backward(tape.patches, dx, g.patch_embed);
  return d_text;
}

#define COMPBIND_INSTANTIATE(S)                                                                         \
  template Mat<S> timestep_features<S>(int, int);                                                       \
  template Mat<S> patchify<S>(const DenoiserConfig&, const Mat<S>&);                                    \
  template Mat<S> unpatchify<S>(const DenoiserConfig&, const Mat<S>&);                                  \
  template TextContext<S> prepare_text<S>(const DenoiserConfig&, const DenoiserParams<S>&, const Mat<S>&); \
  template Mat<S> denoiser_forward<S>(const DenoiserConfig&, const DenoiserParams<S>&, const Mat<S>&,    \
                                      const TextContext<S>&, int, CrossAttnMaps<S>*, DenoiserTape<S>*); \
  template Mat<S> denoiser_forward<S>(const DenoiserConfig&, const DenoiserParams<S>&, const Mat<S>&,    \
                                      const Mat<S>&, int, CrossAttnMaps<S>*);                           \
  template Mat<S> denoiser_backward<S>(const DenoiserConfig&, const DenoiserParams<S>&,                  \
                                       const TextContext<S>&, const DenoiserTape<S>&, const Mat<S>&,    \
                                       DenoiserParams<S>*);

COMPBIND_INSTANTIATE(float)
COMPBIND_INSTANTIATE(double)
#undef COMPBIND_INSTANTIATE

void save_denoiser(io::Checkpoint& ck, const DenoiserConfig& c, const DenoiserParams<float>& params) {
  ck.put_scalar("denoiser.config.image", c.image);
  ck.put_scalar("denoiser.config.patch", c.patch);
  ck.put_scalar("denoiser.config.channels", c.channels);
  ck.put_scalar("denoiser.config.width", c.width);
  ck.put_scalar("denoiser.config.heads", c.heads);
  ck.put_scalar("denoiser.config.blocks", c.blocks);
  ck.put_scalar("denoiser.config.mlp_mult", c.mlp_mult);
  ck.put_scalar("denoiser.config.text_width", c.text_width);
  io::put_params(ck, "denoiser.", params);
}

DenoiserParams<float> load_denoiser(const io::Checkpoint& ck, DenoiserConfig& c) {
  c.image = static_cast<int>(ck.get_scalar("denoiser.config.image"));
  c.patch = static_cast<int>(ck.get_scalar("denoiser.config.patch"));
  c.channels = static_cast<int>(ck.get_scalar("denoiser.config.channels"));
  c.width = static_cast<int>(ck.get_scalar("denoiser.config.width"));
  c.heads = static_cast<int>(ck.get_scalar("denoiser.config.heads"));
  c.blocks = static_cast<int>(ck.get_scalar("denoiser.config.blocks"));
  c.mlp_mult = static_cast<int>(ck.get_scalar("denoiser.config.mlp_mult"));
  c.text_width = static_cast<int>(ck.get_scalar("denoiser.config.text_width"));
  c.validate();
  DenoiserParams<float> p = init_denoiser(c, 0);
  io::get_params(ck, "denoiser.", p);
  return p;
}

}  // namespace compbind::diffusion
