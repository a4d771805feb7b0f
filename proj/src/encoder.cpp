#include <algorithm>
#include <cmath>

#include "compbind/encoder/encoder.hpp"
#include "compbind/errors.hpp"

namespace compbind::encoder {

void EncoderConfig::validate() const {
  if (vocab <= 0 || width <= 0 || heads <= 0 || layers < 1 || max_len <= 0) {
    throw ValidationError("encoder config values must be positive (layers >= 1)");
  }
  if (width % heads != 0) throw ValidationError("encoder width must be divisible by heads");
}

std::vector<int> BiasMatrix::last_layers(int total, int count) {
  std::vector<int> out;
  for (int l = std::max(0, total - count); l < total; ++l) out.push_back(l);
  return out;
}

EncoderParams<float> init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const int d = config.width;
  EncoderParams<float> p;
  p.tok_emb.resize(config.vocab, d);
  p.pos_emb.resize(config.max_len, d);
  nn::fill_normal(p.tok_emb, rng, 0.5);
  nn::fill_normal(p.pos_emb, rng, 0.5);
  const double proj_std = 0.5 / std::sqrt(2.0 * config.layers);
  for (int l = 0; l < config.layers; ++l) {
    EncoderLayer<float> layer;
    layer.ln_attn = nn::LayerNorm<float>::init(d);
    layer.attn = nn::AttentionParams<float>::init(d, d, d, d, rng);
    layer.ln_mlp = nn::LayerNorm<float>::init(d);
    layer.fc1 = nn::Linear<float>::init(d, 4 * d, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    layer.fc2 = nn::Linear<float>::init(4 * d, d, rng, proj_std / std::sqrt(static_cast<double>(d)));
    p.layers.push_back(std::move(layer));
  }
  p.ln_final = nn::LayerNorm<float>::init(d);
  return p;
}

namespace {

void check_inputs(const EncoderConfig& config, const std::vector<synth::TokenId>& tokens,
                  const BiasMatrix* bias) {
  config.validate();
  if (tokens.empty()) throw ValidationError("cannot encode an empty token sequence");
  if (static_cast<int>(tokens.size()) > config.max_len) {
    throw ValidationError("sequence of " + std::to_string(tokens.size()) +
                          " tokens exceeds the encoder maximum of " + std::to_string(config.max_len));
  }
  for (auto t : tokens) {
    if (t >= config.vocab) throw ValidationError("token id outside the encoder vocabulary");
  }
  if (bias) {
    const auto n = static_cast<Eigen::Index>(tokens.size());
    if (bias->values.rows() != n || bias->values.cols() != n) {
      throw ValidationError("bias matrix side does not match the sequence length");
    }
    for (int l : bias->layers) {
      if (l < 0 || l >= config.layers) throw ValidationError("bias target layer out of range");
    }
  }
}

bool targets_layer(const BiasMatrix* bias, int layer) {
  return bias && std::find(bias->layers.begin(), bias->layers.end(), layer) != bias->layers.end();
}

}  // namespace

template <typename S>
EncoderTape<S> encode_with_tape(const EncoderConfig& config, const EncoderParams<S>& params,
                                const std::vector<synth::TokenId>& tokens, const BiasMatrix* bias) {
  check_inputs(config, tokens, bias);
  const auto n = static_cast<Eigen::Index>(tokens.size());
  EncoderTape<S> tape;
  tape.tokens = tokens;
  Mat<S> x(n, config.width);
  for (Eigen::Index i = 0; i < n; ++i) x.row(i) = params.tok_emb.row(tokens[i]) + params.pos_emb.row(i);

  Mat<S> bias_s;
  if (bias) bias_s = bias->values.template cast<S>();

  tape.layers.resize(params.layers.size());
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& layer = params.layers[l];
    auto& t = tape.layers[l];
    t.x_in = x;
    t.h = layer.ln_attn.forward(x, &t.ln_attn);
    t.q = t.h * layer.attn.wq;
    t.k = t.h * layer.attn.wk;
    t.v = t.h * layer.attn.wv;
    const Mat<S>* b = targets_layer(bias, static_cast<int>(l)) ? &bias_s : nullptr;
    t.core = nn::attention_core_forward(t.q, t.k, t.v, config.heads, config.causal, b);
    t.x_mid = x + t.core.mixed * layer.attn.wo;
    t.h2 = layer.ln_mlp.forward(t.x_mid, &t.ln_mlp);
    t.pre_gelu = layer.fc1.forward(t.h2);
    t.act = nn::gelu(t.pre_gelu);
    x = t.x_mid + layer.fc2.forward(t.act);
  }
  tape.x_final = x;
  tape.embeddings = params.ln_final.forward(x, &tape.ln_final);
  return tape;
}

template <typename S>
Encoding<S> encode(const EncoderConfig& config, const EncoderParams<S>& params,
                   const std::vector<synth::TokenId>& tokens, const BiasMatrix* bias) {
  EncoderTape<S> tape = encode_with_tape(config, params, tokens, bias);
  Encoding<S> out;
  out.trace.heads = config.heads;
  out.trace.width = config.width;
  out.trace.causal = config.causal;
  for (std::size_t l = 0; l < tape.layers.size(); ++l) {
    auto& t = tape.layers[l];
    const auto& a = params.layers[l].attn;
    LayerTrace<S> lt;
    lt.output = t.core.mixed * a.wo;
    lt.input = std::move(t.h);
    lt.q = std::move(t.q);
    lt.k = std::move(t.k);
    lt.v = std::move(t.v);
    lt.attn = std::move(t.core.probs);
    lt.wq = a.wq;
    lt.wk = a.wk;
    lt.wv = a.wv;
    lt.wo = a.wo;
    out.trace.layers.push_back(std::move(lt));
  }
  out.embeddings = std::move(tape.embeddings);
  return out;
}

template <typename S>
void encoder_backward(const EncoderConfig& config, const EncoderParams<S>& params,
                      const EncoderTape<S>& tape, const Mat<S>& d_embeddings,
                      EncoderParams<S>& grad) {
  Mat<S> dx = params.ln_final.backward(tape.ln_final, d_embeddings, grad.ln_final);
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& layer = params.layers[li];
    auto& g = grad.layers[li];
    const auto& t = tape.layers[li];
    // x_out = x_mid + fc2(gelu(fc1(LN(x_mid))))
    Mat<S> d_act = layer.fc2.backward(t.act, dx, g.fc2);
    Mat<S> d_pre = nn::gelu_backward(t.pre_gelu, d_act);
    Mat<S> d_h2 = layer.fc1.backward(t.h2, d_pre, g.fc1);
    Mat<S> d_mid = dx + layer.ln_mlp.backward(t.ln_mlp, d_h2, g.ln_mlp);
    // x_mid = x_in + attn(LN(x_in)) W_o
    g.attn.wo.noalias() += t.core.mixed.transpose() * d_mid;
    Mat<S> d_mixed = d_mid * layer.attn.wo.transpose();
    Mat<S> dq, dk, dv;
    nn::attention_core_backward(t.q, t.k, t.v, t.core, config.heads, d_mixed, dq, dk, dv);
    g.attn.wq.noalias() += t.h.transpose() * dq;
    g.attn.wk.noalias() += t.h.transpose() * dk;
    g.attn.wv.noalias() += t.h.transpose() * dv;
    Mat<S> d_h = dq * layer.attn.wq.transpose() + dk * layer.attn.wk.transpose() +
                 dv * layer.attn.wv.transpose();
    dx = d_mid + layer.ln_attn.backward(t.ln_attn, d_h, g.ln_attn);
  }
  for (Eigen::Index i = 0; i < dx.rows(); ++i) {
    grad.tok_emb.row(tape.tokens[i]) += dx.row(i);
    grad.pos_emb.row(i) += dx.row(i);
  }
}

template EncoderTape<float> encode_with_tape(const EncoderConfig&, const EncoderParams<float>&,
                                             const std::vector<synth::TokenId>&, const BiasMatrix*);
template EncoderTape<double> encode_with_tape(const EncoderConfig&, const EncoderParams<double>&,
                                              const std::vector<synth::TokenId>&, const BiasMatrix*);
template Encoding<float> encode(const EncoderConfig&, const EncoderParams<float>&,
                                const std::vector<synth::TokenId>&, const BiasMatrix*);
template Encoding<double> encode(const EncoderConfig&, const EncoderParams<double>&,
                                 const std::vector<synth::TokenId>&, const BiasMatrix*);
template void encoder_backward(const EncoderConfig&, const EncoderParams<float>&,
                               const EncoderTape<float>&, const MatF&, EncoderParams<float>&);
template void encoder_backward(const EncoderConfig&, const EncoderParams<double>&,
                               const EncoderTape<double>&, const MatD&, EncoderParams<double>&);

void save_encoder(io::Checkpoint& ck, const EncoderConfig& c, const EncoderParams<float>& params) {
  ck.put_scalar("encoder.config.vocab", c.vocab);
  ck.put_scalar("encoder.config.width", c.width);
  ck.put_scalar("encoder.config.heads", c.heads);
  ck.put_scalar("encoder.config.layers", c.layers);
  ck.put_scalar("encoder.config.max_len", c.max_len);
  ck.put_scalar("encoder.config.causal", c.causal ? 1.0 : 0.0);
  io::put_params(ck, "encoder.", params);
}

EncoderConfig load_encoder_config(const io::Checkpoint& ck) {
  EncoderConfig c;
  c.vocab = static_cast<int>(ck.get_scalar("encoder.config.vocab"));
  c.width = static_cast<int>(ck.get_scalar("encoder.config.width"));
  c.heads = static_cast<int>(ck.get_scalar("encoder.config.heads"));
  c.layers = static_cast<int>(ck.get_scalar("encoder.config.layers"));
  c.max_len = static_cast<int>(ck.get_scalar("encoder.config.max_len"));
  c.causal = ck.get_scalar("encoder.config.causal") != 0.0;
  c.validate();
  return c;
}

EncoderParams<float> load_encoder(const io::Checkpoint& ck, EncoderConfig& config_out) {
  config_out = load_encoder_config(ck);
  EncoderParams<float> p = init_encoder(config_out, 0);
  io::get_params(ck, "encoder.", p);
  return p;
}

}  // namespace compbind::encoder
