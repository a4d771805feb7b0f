#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "compbind/io/checkpoint.hpp"
#include "compbind/numkit/layers.hpp"

namespace compbind::diffusion {

struct DenoiserConfig {
  int image = 16;
  int patch = 4;
  int channels = 3;
  int width = 64;
  int heads = 4;
  int blocks = 2;
  int mlp_mult = 4;
  int text_width = 32;

  int patches() const { return (image / patch) * (image / patch); }
  int patch_dim() const { return patch * patch * channels; }
  void validate() const;
  bool operator==(const DenoiserConfig&) const = default;
};

template <typename S>
struct DenoiserBlock {
  using Scalar = S;
  nn::LayerNorm<S> ln_self;
  nn::AttentionParams<S> self_attn;
  nn::LayerNorm<S> ln_cross;
  nn::AttentionParams<S> cross_attn;  // wk, wv read text_width inputs
  nn::LayerNorm<S> ln_mlp;
  nn::Linear<S> fc1;
  nn::Linear<S> fc2;

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    ln_self.visit(f, prefix + "ln_self.");
    self_attn.visit(f, prefix + "self_attn.");
    ln_cross.visit(f, prefix + "ln_cross.");
    cross_attn.visit(f, prefix + "cross_attn.");
    ln_mlp.visit(f, prefix + "ln_mlp.");
    fc1.visit(f, prefix + "fc1.");
    fc2.visit(f, prefix + "fc2.");
  }

  template <typename To>
  DenoiserBlock<To> cast() const {
    return {ln_self.template cast<To>(),  self_attn.template cast<To>(),
            ln_cross.template cast<To>(), cross_attn.template cast<To>(),
            ln_mlp.template cast<To>(),   fc1.template cast<To>(),
            fc2.template cast<To>()};
  }
};

// Patch transformer predicting per-patch noise. Tokens: linear patch embedding
// + learned patch position + projected sinusoidal time embedding; each block
// runs self-attention, cross-attention to the text embeddings, then an MLP.
template <typename S>
struct DenoiserParams {
  using Scalar = S;
  nn::Linear<S> patch_embed;  // patch_dim -> width
  Mat<S> pos;                 // patches x width
  nn::Linear<S> time_proj;    // width (sinusoid) -> width
  std::vector<DenoiserBlock<S>> blocks;
  nn::LayerNorm<S> ln_out;
  nn::Linear<S> head;  // width -> patch_dim

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    patch_embed.visit(f, prefix + "patch_embed.");
    f(prefix + "pos", pos);
    time_proj.visit(f, prefix + "time_proj.");
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      blocks[b].visit(f, prefix + "block" + std::to_string(b) + ".");
    }
    ln_out.visit(f, prefix + "ln_out.");
    head.visit(f, prefix + "head.");
  }

  template <typename To>
  DenoiserParams<To> cast() const {
    DenoiserParams<To> out;
    out.patch_embed = patch_embed.template cast<To>();
    out.pos = pos.template cast<To>();
    out.time_proj = time_proj.template cast<To>();
    for (const auto& b : blocks) out.blocks.push_back(b.template cast<To>());
    out.ln_out = ln_out.template cast<To>();
    out.head = head.template cast<To>();
    return out;
  }
};

DenoiserParams<float> init_denoiser(const DenoiserConfig& config, std::uint64_t seed);

// Sinusoidal features of an integer timestep: sin(t w_i) for the first half,
// cos(t w_i) for the second, w_i = 10000^(-i / half).
template <typename S>
Mat<S> timestep_features(int t, int width);

// 16x16x3 HWC image (1 x 768) <-> patch rows (16 x 48).
template <typename S>
Mat<S> patchify(const DenoiserConfig& config, const Mat<S>& image);
template <typename S>
Mat<S> unpatchify(const DenoiserConfig& config, const Mat<S>& patches);

// Cross-attention keys and values for one text embedding, reusable across
// timesteps while the embedding is unchanged.
template <typename S>
struct TextContext {
  Mat<S> text;                // n x text_width
  std::vector<Mat<S>> keys;   // per block, n x width
  std::vector<Mat<S>> values; // per block, n x width
};

template <typename S>
TextContext<S> prepare_text(const DenoiserConfig& config, const DenoiserParams<S>& params,
                            const Mat<S>& text);

// Head-averaged cross-attention weights per block (patches x tokens).
template <typename S>
struct CrossAttnMaps {
  std::vector<Mat<S>> per_block;
};

template <typename S>
struct DenoiserTape {
  Mat<S> patches;
  Mat<S> tfeat;
  struct Block {
    Mat<S> x_in;
    typename nn::LayerNorm<S>::Cache ln_self;
    Mat<S> hs, qs, ks, vs;
    nn::AttentionCore<S> self_core;
    Mat<S> x1;
    typename nn::LayerNorm<S>::Cache ln_cross;
    Mat<S> hc, qc;
    nn::AttentionCore<S> cross_core;
    Mat<S> x2;
    typename nn::LayerNorm<S>::Cache ln_mlp;
    Mat<S> hm, pre_gelu, act;
  };
  std::vector<Block> blocks;
  Mat<S> x_final;
  typename nn::LayerNorm<S>::Cache ln_out;
  Mat<S> h_out;
  Mat<S> eps_patches;
};

// Predicted noise as an image row (1 x 768). Throws ValidationError on an
// embedding width mismatch or a wrong image size.
template <typename S>
Mat<S> denoiser_forward(const DenoiserConfig& config, const DenoiserParams<S>& params,
                        const Mat<S>& x_t, const TextContext<S>& text, int t,
                        CrossAttnMaps<S>* maps = nullptr, DenoiserTape<S>* tape = nullptr);

// Convenience overload that prepares the text context itself.
template <typename S>
Mat<S> denoiser_forward(const DenoiserConfig& config, const DenoiserParams<S>& params,
                        const Mat<S>& x_t, const Mat<S>& text, int t,
                        CrossAttnMaps<S>* maps = nullptr);

// Accumulates parameter gradients into `grad` (when non-null) and returns
// dL/d(text) given dL/d(eps_hat) as an image row.
template <typename S>
Mat<S> denoiser_backward(const DenoiserConfig& config, const DenoiserParams<S>& params,
                         const TextContext<S>& text, const DenoiserTape<S>& tape,
                         const Mat<S>& d_eps, DenoiserParams<S>* grad);

void save_denoiser(io::Checkpoint& ck, const DenoiserConfig& config,
                   const DenoiserParams<float>& params);
DenoiserParams<float> load_denoiser(const io::Checkpoint& ck, DenoiserConfig& config_out);

}  // namespace compbind::diffusion
