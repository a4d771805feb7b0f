#include <doctest.h>

#include "compbind/correct/projection.hpp"
#include "compbind/diffusion/train.hpp"
#include "compbind/errors.hpp"
#include "compbind/numkit/rng.hpp"

using namespace compbind;
using namespace compbind::correct;

namespace {

template <typename S>
Mat<S> random_mat(Rng& rng, int r, int c) {
  Mat<S> m(r, c);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.normal());
  return m;
}

// Independent per-token loop with explicit zero neighbors.
MatD oracle(const MatD& c, const ProjectionParams<double>& p) {
  const int n = static_cast<int>(c.rows()), d = static_cast<int>(c.cols());
  MatD out = c;
  for (int i = 0; i < n; ++i) {
    for (int o = 0; o < d; ++o) {
      double acc = p.b(0, o);
      for (int k = -p.radius; k <= p.radius; ++k) {
        const int j = i + k;
        for (int e = 0; e < d; ++e) {
          const double x = (j >= 0 && j < n) ? c(j, e) : 0.0;
          acc += x * p.w((k + p.radius) * d + e, o);
        }
      }
      out(i, o) += acc;
    }
  }
  return out;
}

}  // namespace

TEST_SUITE("correct") {

TEST_CASE("zero-initialized adapters are exact identities") {
  Rng rng(1);
  const MatF c = random_mat<float>(rng, 9, 32);
  CHECK(clp_apply(c, zero_projection(ProjectionKind::Clp, 0, 32)) == c);
  CHECK(wiclp_apply(c, zero_projection(ProjectionKind::Wiclp, 2, 32)) == c);
  MatF big = c * 1e6f;
  CHECK(wiclp_apply(big, zero_projection(ProjectionKind::Wiclp, 3, 32)) == big);
}

TEST_CASE("bias only shifts every token") {
  Rng rng(2);
  const MatF c = random_mat<float>(rng, 4, 8);
  auto p = zero_projection(ProjectionKind::Clp, 0, 8);
  p.b = random_mat<float>(rng, 1, 8);
  const MatF out = clp_apply(c, p);
  for (int i = 0; i < 4; ++i) CHECK((out.row(i) - c.row(i) - p.b).cwiseAbs().maxCoeff() < 1e-6f);
}

TEST_CASE("random CLP and WiCLP match the loop oracle") {
  Rng rng(3);
  ProjectionParams<double> clp{ProjectionKind::Clp, 0, random_mat<double>(rng, 4, 4), random_mat<double>(rng, 1, 4)};
  const MatD c = random_mat<double>(rng, 3, 4);
  CHECK((clp_apply(c, clp) - oracle(c, clp)).cwiseAbs().maxCoeff() < 1e-12);
  ProjectionParams<double> wi{ProjectionKind::Wiclp, 2, random_mat<double>(rng, 20, 4), random_mat<double>(rng, 1, 4)};
  const MatD c7 = random_mat<double>(rng, 7, 4);
  CHECK((wiclp_apply(c7, wi) - oracle(c7, wi)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("WiCLP with s = 0 equals CLP exactly") {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const MatF w = random_mat<float>(rng, 8, 8), b = random_mat<float>(rng, 1, 8);
    const MatF c = random_mat<float>(rng, 1 + static_cast<int>(rng.below(9)), 8);
    ProjectionParams<float> a{ProjectionKind::Clp, 0, w, b};
    ProjectionParams<float> z{ProjectionKind::Wiclp, 0, w, b};
    CHECK(clp_apply(c, a) == wiclp_apply(c, z));
  }
}

TEST_CASE("single token: only the center block acts") {
  Rng rng(5);
  ProjectionParams<double> wi{ProjectionKind::Wiclp, 2, random_mat<double>(rng, 20, 4), random_mat<double>(rng, 1, 4)};
  const MatD c = random_mat<double>(rng, 1, 4);
  const MatD expect = c + c * wi.w.middleRows(8, 4) + wi.b;
  CHECK((wiclp_apply(c, wi) - expect).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((wiclp_apply(c, wi) - oracle(c, wi)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("kind and width checks") {
  const MatF c = MatF::Zero(3, 8);
  CHECK_THROWS_AS(clp_apply(c, zero_projection(ProjectionKind::Wiclp, 2, 8)), ValidationError);
  CHECK_THROWS_AS(clp_apply(c, zero_projection(ProjectionKind::Clp, 0, 4)), ValidationError);
  CHECK_THROWS_AS(zero_projection(ProjectionKind::Clp, 1, 8), ValidationError);
}

TEST_CASE("projection backward matches finite differences") {
  Rng rng(6);
  ProjectionParams<double> p{ProjectionKind::Wiclp, 1, random_mat<double>(rng, 12, 4), random_mat<double>(rng, 1, 4)};
  const MatD c = random_mat<double>(rng, 5, 4);
  const MatD weight = random_mat<double>(rng, 5, 4);
  auto grad = nn::zeros_like(p);
  const MatD dc = projection_backward(c, p, weight, grad);
  auto loss = [&](const MatD& cc, const ProjectionParams<double>& pp) {
    return (apply_projection(cc, pp).array() * weight.array()).sum();
  };
  for (int idx = 0; idx < 20; ++idx) {
    MatD a = c, b = c;
    a.data()[idx] += 1e-6;
    b.data()[idx] -= 1e-6;
    CHECK(dc.data()[idx] == doctest::Approx((loss(a, p) - loss(b, p)) / 2e-6).epsilon(1e-7));
  }
  for (int idx = 0; idx < 48; idx += 5) {
    auto a = p, b = p;
    a.w.data()[idx] += 1e-6;
    b.w.data()[idx] -= 1e-6;
    CHECK(grad.w.data()[idx] == doctest::Approx((loss(c, a) - loss(c, b)) / 2e-6).epsilon(1e-7));
  }
}

TEST_CASE("checkpoint keys round trip") {
  Rng rng(7);
  auto p = zero_projection(ProjectionKind::Wiclp, 2, 32);
  p.w = random_mat<float>(rng, 160, 32);
  io::Checkpoint ck;
  save_projection(ck, p);
  CHECK(ck.contains("proj.kind"));
  CHECK(ck.contains("proj.s"));
  CHECK(ck.contains("proj.W"));
  CHECK(ck.contains("proj.b"));
  const auto back = load_projection(ck);
  CHECK(back.kind == p.kind);
  CHECK(back.radius == 2);
  CHECK(back.w == p.w);
}

TEST_CASE("token mask presets") {
  const auto prompt = synth::make_prompt({{synth::Shape::Square, 0}, synth::ObjectSpec{synth::Shape::Circle, 2}});
  const auto adj = make_mask(prompt, MaskPreset::Adjectives);
  CHECK(adj == TokenMask{false, false, true, false, false, false, true, false, false});
  const auto nouns = make_mask(prompt, MaskPreset::Nouns);
  CHECK(nouns == TokenMask{false, false, false, true, false, false, false, true, false});
  const auto both = make_mask(prompt, MaskPreset::AdjectivesAndNouns);
  CHECK(both == TokenMask{false, false, true, true, false, false, true, true, false});
  CHECK(make_mask(prompt, MaskPreset::All) == TokenMask(9, true));
  CHECK(parse_preset("adjectives+nouns") == MaskPreset::AdjectivesAndNouns);
  CHECK_THROWS_AS(parse_preset("verbs"), ValidationError);
}

struct SmallStack {
  encoder::EncoderConfig ecfg;
  diffusion::DenoiserConfig dcfg;
  diffusion::NoiseSchedule schedule;
  encoder::EncoderParams<float> enc = encoder::init_encoder(ecfg, 1);
  diffusion::DenoiserParams<float> den = diffusion::init_denoiser(dcfg, 2);
  SmallStack() { den.head.w *= 20.0f; }
};

TEST_CASE("projection gradient wrt W and b matches finite differences in double") {
  SmallStack s;
  const auto enc = s.enc.cast<double>();
  const auto den = s.den.cast<double>();
  Rng rng(8);
  const auto tokens = synth::make_prompt({{synth::Shape::Circle, 3}, synth::ObjectSpec{synth::Shape::Square, 5}}).tokens;
  const MatD c = encoder::encode<double>(s.ecfg, enc, tokens).embeddings;
  ProjectionParams<double> p{ProjectionKind::Wiclp, 2, random_mat<double>(rng, 160, 32) * 0.01,
                             random_mat<double>(rng, 1, 32) * 0.01};
  const MatD x0 = random_mat<double>(rng, 1, 768).cwiseAbs().cwiseMin(1.0);
  const MatD eps = random_mat<double>(rng, 1, 768);
  auto loss = [&](const ProjectionParams<double>& pp, MatD* d_text) {
    return diffusion::embedding_example_loss<double>(s.dcfg, den, s.schedule, apply_projection(c, pp), x0, eps, 60,
                                                     1.0, d_text);
  };
  MatD d_text;
  loss(p, &d_text);
  auto grad = nn::zeros_like(p);
  projection_backward(c, p, d_text, grad);
  for (int k = 0; k < 12; ++k) {
    const bool bias = k % 4 == 3;
    MatD& target = bias ? p.b : p.w;
    const std::size_t idx = rng.below(static_cast<std::uint64_t>(target.size()));
    const double saved = target.data()[idx];
    target.data()[idx] = saved + 1e-5;
    const double up = loss(p, nullptr);
    target.data()[idx] = saved - 1e-5;
    const double down = loss(p, nullptr);
    target.data()[idx] = saved;
    const double fd = (up - down) / 2e-5;
    const double an = (bias ? grad.b : grad.w).data()[idx];
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-9}) <= 1e-3);
  }
}

TEST_CASE("embedding gradient matches finite differences in double") {
  SmallStack s;
  const auto den = s.den.cast<double>();
  Rng rng(9);
  MatD c = random_mat<double>(rng, 9, 32);
  const MatD x0 = random_mat<double>(rng, 1, 768).cwiseAbs().cwiseMin(1.0);
  const MatD eps = random_mat<double>(rng, 1, 768);
  auto loss = [&](MatD* d) {
    return diffusion::embedding_example_loss<double>(s.dcfg, den, s.schedule, c, x0, eps, 120, 1.0, d);
  };
  MatD d_text;
  loss(&d_text);
  for (int k = 0; k < 12; ++k) {
    const std::size_t idx = rng.below(static_cast<std::uint64_t>(c.size()));
    const double saved = c.data()[idx];
    c.data()[idx] = saved + 1e-5;
    const double up = loss(nullptr);
    c.data()[idx] = saved - 1e-5;
    const double down = loss(nullptr);
    c.data()[idx] = saved;
    const double fd = (up - down) / 2e-5;
    const double an = d_text.data()[idx];
    CHECK(std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-9}) <= 1e-3);
  }
}

TEST_CASE("train_projection: zero steps, frozen inputs, loss decreases") {
  SmallStack s;
  synth::CorpusConfig cc;
  cc.n_samples = 200;
  cc.corruption_prob = 0.0;
  const auto corpus = synth::gen_corpus(cc);
  FrozenStack stack{s.ecfg, s.enc, s.dcfg, s.den, s.schedule};
  TrainConfig tc;
  tc.steps = 0;
  const auto r0 = train_projection(ProjectionKind::Wiclp, 2, corpus, stack, tc);
  CHECK(r0.params.w.cwiseAbs().maxCoeff() == 0.0f);
  CHECK(r0.params.b.cwiseAbs().maxCoeff() == 0.0f);

  io::Checkpoint before;
  encoder::save_encoder(before, s.ecfg, s.enc);
  diffusion::save_denoiser(before, s.dcfg, s.den);
  tc.steps = 150;
  tc.lr = 3e-3;
  const auto r = train_projection(ProjectionKind::Wiclp, 2, corpus, stack, tc);
  io::Checkpoint after;
  encoder::save_encoder(after, s.ecfg, s.enc);
  diffusion::save_denoiser(after, s.dcfg, s.den);
  CHECK(before == after);
  CHECK(r.losses.size() == 150);

  const auto probe = probe_batch(corpus, s.schedule, 64, 31);
  CHECK(projection_loss(r.params, stack, probe) < projection_loss(r0.params, stack, probe));
}

TEST_CASE("optimize_embedding boundaries") {
  SmallStack s;
  Rng rng(10);
  const MatF c0 = random_mat<float>(rng, 9, 32);
  const std::vector<MatF> images{random_mat<float>(rng, 1, 768).cwiseAbs().cwiseMin(1.0f)};
  EmbeddingOptConfig cfg;
  cfg.steps = 0;
  CHECK(optimize_embedding(c0, images, s.dcfg, s.den, s.schedule, TokenMask(9, true), cfg).embedding == c0);
  cfg.steps = 20;
  CHECK(optimize_embedding(c0, images, s.dcfg, s.den, s.schedule, TokenMask(9, false), cfg).embedding == c0);
  TokenMask adj(9, false);
  adj[2] = adj[6] = true;
  const MatF partial = optimize_embedding(c0, images, s.dcfg, s.den, s.schedule, adj, cfg).embedding;
  for (int i = 0; i < 9; ++i) {
    if (adj[i]) {
      CHECK(partial.row(i) != c0.row(i));
    } else {
      CHECK(partial.row(i) == c0.row(i));
    }
  }
  CHECK_THROWS_AS(optimize_embedding(c0, {}, s.dcfg, s.den, s.schedule, adj, cfg), ValidationError);
  CHECK_THROWS_AS(optimize_embedding(c0, images, s.dcfg, s.den, s.schedule, TokenMask(4, true), cfg),
                  ValidationError);
}

}  // TEST_SUITE
