#include <doctest.h>

#include "compbind/diffusion/train.hpp"
#include "compbind/encoder/encoder.hpp"
#include "compbind/errors.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/synthworld/scene.hpp"
#include "compbind/synthworld/vocab.hpp"

using namespace compbind;

namespace {

std::vector<synth::TokenId> red_square_blue_circle() {
  return synth::make_prompt({{synth::Shape::Square, 0}, synth::ObjectSpec{synth::Shape::Circle, 2}}).tokens;
}

std::vector<synth::TokenId> random_tokens(Rng& rng, int n) {
  std::vector<synth::TokenId> t(n);
  for (auto& x : t) x = static_cast<synth::TokenId>(rng.below(synth::kVocabSize));
  return t;
}

}  // namespace

TEST_SUITE("encoder") {

TEST_CASE("config validation") {
  encoder::EncoderConfig c;
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ValidationError);
  c.heads = 4;
  c.layers = 0;
  CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("zero bias is bit-identical to no bias") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 3);
  const auto tokens = red_square_blue_circle();
  encoder::BiasMatrix zero{MatD::Zero(9, 9), {2, 3}};
  const auto a = encoder::encode<float>(cfg, params, tokens);
  const auto b = encoder::encode<float>(cfg, params, tokens, &zero);
  CHECK(a.embeddings == b.embeddings);
}

TEST_CASE("large negative bias masks one entry in the targeted layer only") {
  encoder::EncoderConfig cfg;
  cfg.causal = false;
  const auto params = encoder::init_encoder(cfg, 3);
  const auto tokens = red_square_blue_circle();
  encoder::BiasMatrix m{MatD::Zero(9, 9), {3}};
  m.values(7, 2) = -1e9;
  const auto enc = encoder::encode<float>(cfg, params, tokens, &m);
  for (const auto& a : enc.trace.layers[3].attn) CHECK(a(7, 2) < 1e-6f);
  bool untouched = false;
  for (const auto& a : enc.trace.layers[2].attn) untouched |= a(7, 2) > 1e-6f;
  CHECK(untouched);
  encoder::BiasMatrix wrong{MatD::Zero(4, 4), {3}};
  CHECK_THROWS_AS(encoder::encode<float>(cfg, params, tokens, &wrong), ValidationError);
}

TEST_CASE("single token attends to itself with weight one") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 4);
  const auto enc = encoder::encode<float>(cfg, params, {synth::kBos});
  for (const auto& layer : enc.trace.layers) {
    for (const auto& a : layer.attn) CHECK(a(0, 0) == 1.0f);
  }
}

TEST_CASE("sequence limits and vocabulary are checked") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 4);
  CHECK_THROWS_AS(encoder::encode<float>(cfg, params, std::vector<synth::TokenId>(13, 3)), ValidationError);
  CHECK_THROWS_AS(encoder::encode<float>(cfg, params, {}), ValidationError);
  CHECK_THROWS_AS(encoder::encode<float>(cfg, params, {99}), ValidationError);
}

TEST_CASE("attention rows sum to one and causal rows stay causal") {
  Rng rng(10);
  for (bool causal : {true, false}) {
    encoder::EncoderConfig cfg;
    cfg.causal = causal;
    const auto params = encoder::init_encoder(cfg, 11);
    for (int trial = 0; trial < 10; ++trial) {
      const auto tokens = random_tokens(rng, 1 + static_cast<int>(rng.below(12)));
      const auto enc = encoder::encode<float>(cfg, params, tokens);
      for (const auto& layer : enc.trace.layers) {
        for (const auto& a : layer.attn) {
          for (Eigen::Index i = 0; i < a.rows(); ++i) {
            CHECK(a.row(i).sum() == doctest::Approx(1.0).epsilon(1e-5));
            if (causal) {
              for (Eigen::Index j = i + 1; j < a.cols(); ++j) CHECK(a(i, j) == 0.0f);
            }
          }
        }
      }
    }
  }
}

TEST_CASE("causal outputs ignore later tokens exactly") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 12);
  auto tokens = red_square_blue_circle();
  const auto a = encoder::encode<float>(cfg, params, tokens).embeddings;
  tokens[6] = synth::word_token("green");
  tokens[7] = synth::word_token("triangle");
  const auto b = encoder::encode<float>(cfg, params, tokens).embeddings;
  CHECK(a.topRows(6) == b.topRows(6));
  CHECK(a.row(6) != b.row(6));
}

TEST_CASE("trace output equals the per-head attention sum") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 13);
  const auto enc = encoder::encode<double>(cfg, params.cast<double>(), red_square_blue_circle());
  for (const auto& layer : enc.trace.layers) {
    MatD sum = MatD::Zero(layer.output.rows(), layer.output.cols());
    const int dh = cfg.head_dim();
    for (int h = 0; h < cfg.heads; ++h) {
      sum += layer.attn[h] * layer.v.middleCols(h * dh, dh) * layer.wo.middleRows(h * dh, dh);
    }
    CHECK((sum - layer.output).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("joint loss gradient wrt encoder weights matches finite differences") {
  encoder::EncoderConfig ecfg;
  diffusion::DenoiserConfig dcfg;
  auto enc = encoder::init_encoder(ecfg, 21).cast<double>();
  auto den = diffusion::init_denoiser(dcfg, 22).cast<double>();
  // A larger head makes the text path matter at initialization.
  den.head.w *= 20.0;
  diffusion::NoiseSchedule schedule;
  synth::CorpusConfig cc;
  cc.n_samples = 10;
  const auto examples = diffusion::draw_examples(synth::gen_corpus(cc), schedule, 1, 5);
  const auto& ex = examples.front();

  auto enc_grad = nn::zeros_like(enc);
  diffusion::joint_example_loss<double>(ecfg, enc, dcfg, den, schedule, ex, 1.0, &enc_grad, nullptr);
  auto values = nn::param_ptrs(enc);
  auto grads = nn::param_ptrs(enc_grad);
  Rng rng(99);
  int checked = 0;
  for (int k = 0; k < 12; ++k) {
    const std::size_t m = rng.below(values.size());
    const std::size_t idx = rng.below(static_cast<std::uint64_t>(values[m]->size()));
    double& w = values[m]->data()[idx];
    const double saved = w;
    const double h = 1e-5;
    w = saved + h;
    const double up = diffusion::joint_example_loss<double>(ecfg, enc, dcfg, den, schedule, ex, 1.0, nullptr, nullptr);
    w = saved - h;
    const double down = diffusion::joint_example_loss<double>(ecfg, enc, dcfg, den, schedule, ex, 1.0, nullptr, nullptr);
    w = saved;
    const double fd = (up - down) / (2 * h);
    const double an = grads[m]->data()[idx];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-9});
    CHECK(std::abs(fd - an) / denom <= 1e-3);
    ++checked;
  }
  CHECK(checked >= 10);
}

TEST_CASE("checkpoint round trip") {
  encoder::EncoderConfig cfg;
  cfg.causal = false;
  const auto params = encoder::init_encoder(cfg, 5);
  io::Checkpoint ck;
  encoder::save_encoder(ck, cfg, params);
  encoder::EncoderConfig back_cfg;
  const auto back = encoder::load_encoder(ck, back_cfg);
  CHECK(back_cfg == cfg);
  const auto tokens = red_square_blue_circle();
  CHECK(encoder::encode<float>(cfg, params, tokens).embeddings ==
        encoder::encode<float>(back_cfg, back, tokens).embeddings);
}

TEST_CASE("joint training: zero steps, determinism, and held-out loss drops") {
  encoder::EncoderConfig ecfg;
  diffusion::DenoiserConfig dcfg;
  diffusion::NoiseSchedule schedule;
  synth::CorpusConfig cc;
  cc.n_samples = 500;
  const auto corpus = synth::gen_corpus(cc);
  const auto enc0 = encoder::init_encoder(ecfg, 1);
  const auto den0 = diffusion::init_denoiser(dcfg, 2);
  TrainConfig tc;
  tc.steps = 0;
  auto r0 = diffusion::train_denoiser(corpus, ecfg, enc0, dcfg, den0, schedule, tc, diffusion::EncoderMode::Joint);
  io::Checkpoint a, b;
  encoder::save_encoder(a, ecfg, r0.encoder);
  encoder::save_encoder(b, ecfg, enc0);
  CHECK(a == b);

  tc.steps = 200;
  tc.batch = 4;
  auto r1 = diffusion::train_denoiser(corpus, ecfg, enc0, dcfg, den0, schedule, tc, diffusion::EncoderMode::Joint);
  auto r2 = diffusion::train_denoiser(corpus, ecfg, enc0, dcfg, den0, schedule, tc, diffusion::EncoderMode::Joint);
  io::Checkpoint c1, c2;
  encoder::save_encoder(c1, ecfg, r1.encoder);
  diffusion::save_denoiser(c1, dcfg, r1.denoiser);
  encoder::save_encoder(c2, ecfg, r2.encoder);
  diffusion::save_denoiser(c2, dcfg, r2.denoiser);
  CHECK(c1 == c2);
  CHECK(r1.losses.size() == 200);

  const auto probe = diffusion::draw_examples(corpus, schedule, 64, 777);
  const double before = diffusion::mean_joint_loss(ecfg, enc0, dcfg, den0, schedule, probe);
  const double after = diffusion::mean_joint_loss(ecfg, r1.encoder, dcfg, r1.denoiser, schedule, probe);
  CHECK(after < before);
}

}  // TEST_SUITE
