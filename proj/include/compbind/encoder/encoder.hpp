#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "compbind/io/checkpoint.hpp"
#include "compbind/numkit/layers.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::encoder {

struct EncoderConfig {
  int vocab = synth::kVocabSize;
  int width = 32;
  int heads = 4;
  int layers = 4;
  int max_len = 12;
  bool causal = true;

  int head_dim() const { return width / heads; }
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

template <typename S>
struct EncoderLayer {
  using Scalar = S;
  nn::LayerNorm<S> ln_attn;
  nn::AttentionParams<S> attn;
  nn::LayerNorm<S> ln_mlp;
  nn::Linear<S> fc1;  // d -> 4d
  nn::Linear<S> fc2;  // 4d -> d

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    ln_attn.visit(f, prefix + "ln_attn.");
    attn.visit(f, prefix + "attn.");
    ln_mlp.visit(f, prefix + "ln_mlp.");
    fc1.visit(f, prefix + "fc1.");
    fc2.visit(f, prefix + "fc2.");
  }

  template <typename To>
  EncoderLayer<To> cast() const {
    return {ln_attn.template cast<To>(), attn.template cast<To>(), ln_mlp.template cast<To>(),
            fc1.template cast<To>(), fc2.template cast<To>()};
  }
};

// Pre-norm transformer: x = tok + pos; per layer x += Attn(LN(x)); x += MLP(LN(x));
// output c = LN_final(x).
template <typename S>
struct EncoderParams {
  using Scalar = S;
  Mat<S> tok_emb;  // vocab x d
  Mat<S> pos_emb;  // max_len x d
  std::vector<EncoderLayer<S>> layers;
  nn::LayerNorm<S> ln_final;

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "tok_emb", tok_emb);
    f(prefix + "pos_emb", pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].visit(f, prefix + "layer" + std::to_string(l) + ".");
    }
    ln_final.visit(f, prefix + "ln_final.");
  }

  template <typename To>
  EncoderParams<To> cast() const {
    EncoderParams<To> out;
    out.tok_emb = tok_emb.template cast<To>();
    out.pos_emb = pos_emb.template cast<To>();
    for (const auto& l : layers) out.layers.push_back(l.template cast<To>());
    out.ln_final = ln_final.template cast<To>();
    return out;
  }
};

EncoderParams<float> init_encoder(const EncoderConfig& config, std::uint64_t seed);

// Additive pre-softmax logit offsets, shared by every head of the target layers.
struct BiasMatrix {
  MatD values;              // n x n
  std::vector<int> layers;  // target layer indices

  // The last `count` layers of an encoder with `total` layers.
  static std::vector<int> last_layers(int total, int count);
};

// Per-layer capture of one attention block. `input` is the normalized layer
// input x̄ that feeds the q/k/v projections; head h owns columns
// [h*dh, (h+1)*dh) of q, k, v and rows [h*dh, (h+1)*dh) of wo.
template <typename S>
struct LayerTrace {
  Mat<S> input;
  Mat<S> q, k, v;
  std::vector<Mat<S>> attn;  // per head, n x n, rows sum to 1
  Mat<S> output;             // attention block output sum_h attn^h v^h W_o^h
  Mat<S> wq, wk, wv, wo;
};

template <typename S>
struct AttentionTrace {
  int heads = 0;
  int width = 0;
  bool causal = false;
  std::vector<LayerTrace<S>> layers;

  int head_dim() const { return width / heads; }
  int tokens() const { return layers.empty() ? 0 : static_cast<int>(layers.front().input.rows()); }
};

template <typename S>
struct Encoding {
  Mat<S> embeddings;  // n x d
  AttentionTrace<S> trace;
};

// Everything the backward pass needs.
template <typename S>
struct EncoderTape {
  std::vector<synth::TokenId> tokens;
  struct Layer {
    Mat<S> x_in;
    typename nn::LayerNorm<S>::Cache ln_attn;
    Mat<S> h;  // LN output feeding attention
    Mat<S> q, k, v;
    nn::AttentionCore<S> core;
    Mat<S> x_mid;
    typename nn::LayerNorm<S>::Cache ln_mlp;
    Mat<S> h2;
    Mat<S> pre_gelu;
    Mat<S> act;
  };
  std::vector<Layer> layers;
  Mat<S> x_final;
  typename nn::LayerNorm<S>::Cache ln_final;
  Mat<S> embeddings;
};

// Throws ValidationError when the sequence is empty or longer than max_len,
// holds an out-of-vocabulary id, or the bias side differs from the length.
template <typename S>
Encoding<S> encode(const EncoderConfig& config, const EncoderParams<S>& params,
                   const std::vector<synth::TokenId>& tokens, const BiasMatrix* bias = nullptr);

template <typename S>
EncoderTape<S> encode_with_tape(const EncoderConfig& config, const EncoderParams<S>& params,
                                const std::vector<synth::TokenId>& tokens,
                                const BiasMatrix* bias = nullptr);

// Accumulates dL/dparams into `grad` given dL/d(embeddings).
template <typename S>
void encoder_backward(const EncoderConfig& config, const EncoderParams<S>& params,
                      const EncoderTape<S>& tape, const Mat<S>& d_embeddings,
                      EncoderParams<S>& grad);

void save_encoder(io::Checkpoint& ck, const EncoderConfig& config, const EncoderParams<float>& params);
EncoderConfig load_encoder_config(const io::Checkpoint& ck);
EncoderParams<float> load_encoder(const io::Checkpoint& ck, EncoderConfig& config_out);

}  // namespace compbind::encoder
