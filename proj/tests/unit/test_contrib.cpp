#include <doctest.h>

#include <filesystem>

#include "compbind/contrib/contrib.hpp"
#include "compbind/errors.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/synthworld/scene.hpp"

using namespace compbind;
using namespace compbind::contrib;

namespace {

// Hand-built one-layer trace.
encoder::AttentionTrace<double> make_trace(int n, int heads, int d, Rng& rng) {
  encoder::AttentionTrace<double> tr;
  tr.heads = heads;
  tr.width = d;
  encoder::LayerTrace<double> l;
  l.input = MatD::Zero(n, d);
  l.q = MatD::Zero(n, d);
  l.k = MatD::Zero(n, d);
  l.v.resize(n, d);
  l.wo.resize(d, d);
  for (int i = 0; i < l.v.size(); ++i) l.v.data()[i] = rng.normal();
  for (int i = 0; i < l.wo.size(); ++i) l.wo.data()[i] = rng.normal();
  for (int h = 0; h < heads; ++h) {
    MatD a(n, n);
    for (int i = 0; i < n; ++i) {
      double s = 0;
      for (int j = 0; j < n; ++j) s += (a(i, j) = std::exp(rng.normal()));
      a.row(i) /= s;
    }
    l.attn.push_back(a);
  }
  const int dh = d / heads;
  l.output = MatD::Zero(n, d);
  for (int h = 0; h < heads; ++h) l.output += l.attn[h] * l.v.middleCols(h * dh, dh) * l.wo.middleRows(h * dh, dh);
  tr.layers.push_back(l);
  return tr;
}

synth::PromptTemplate two_object_prompt() {
  return synth::make_prompt({{synth::Shape::Square, 0}, synth::ObjectSpec{synth::Shape::Circle, 2}});
}

ContributionMatrix<double> filled(int n, double o2a1, double o2a2, double o1a1 = 1.0, double o1a2 = 0.0) {
  ContributionMatrix<double> cm;
  cm.cont = MatD::Zero(n, n);
  cm.cont(7, 2) = o2a1;
  cm.cont(7, 6) = o2a2;
  cm.cont(3, 2) = o1a1;
  cm.cont(3, 6) = o1a2;
  return cm;
}

}  // namespace

TEST_SUITE("contrib") {

TEST_CASE("identity attention with a single head") {
  Rng rng(1);
  auto tr = make_trace(4, 1, 4, rng);
  tr.layers[0].attn[0] = MatD::Identity(4, 4);
  const auto cm = attention_contribution(tr, 0);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      if (i == j) {
        CHECK(cm.cont(i, i) == doctest::Approx((tr.layers[0].v.row(i) * tr.layers[0].wo).norm()));
      } else {
        CHECK(cm.cont(i, j) == 0.0);
      }
    }
  }
}

TEST_CASE("zero values give zero contributions") {
  Rng rng(2);
  auto tr = make_trace(5, 2, 4, rng);
  tr.layers[0].v.setZero();
  CHECK(attention_contribution(tr, 0).cont.cwiseAbs().maxCoeff() == 0.0);
  const auto pair = attention_map_vs_contribution(tr, 0);
  CHECK(pair.attention.row(0).sum() == doctest::Approx(1.0));
}

TEST_CASE("matches a head-by-head naive oracle") {
  Rng rng(3);
  const auto tr = make_trace(4, 2, 6, rng);
  const auto cm = attention_contribution(tr, 0);
  const auto& l = tr.layers[0];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      MatD acc = MatD::Zero(1, 6);
      for (int h = 0; h < 2; ++h) {
        for (int c = 0; c < 3; ++c) {
          for (int o = 0; o < 6; ++o) acc(0, o) += l.attn[h](i, j) * l.v(j, h * 3 + c) * l.wo(h * 3 + c, o);
        }
      }
      CHECK(cm.cont(i, j) == doctest::Approx(acc.norm()).epsilon(1e-12));
    }
  }
}

TEST_CASE("reconstruction, triangle inequality and value scaling") {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(8));
    auto tr = make_trace(n, 4, 8, rng);
    const auto cm = attention_contribution(tr, 0);
    for (int i = 0; i < n; ++i) {
      MatD sum = MatD::Zero(1, 8);
      double total = 0;
      for (int j = 0; j < n; ++j) {
        sum += cm.vector(i, j);
        total += cm.cont(i, j);
        CHECK(cm.cont(i, j) >= 0.0);
      }
      CHECK((sum - tr.layers[0].output.row(i)).cwiseAbs().maxCoeff() < 1e-5);
      CHECK(tr.layers[0].output.row(i).norm() <= total + 1e-5);
    }
    const int j = static_cast<int>(rng.below(n));
    const MatD attn_before = attention_map_vs_contribution(tr, 0).attention;
    tr.layers[0].v.row(j) *= 10.0;
    const auto scaled = attention_contribution(tr, 0);
    for (int i = 0; i < n; ++i) CHECK(scaled.cont(i, j) == doctest::Approx(10.0 * cm.cont(i, j)).epsilon(1e-12));
    CHECK(attention_map_vs_contribution(tr, 0).attention == attn_before);
  }
}

TEST_CASE("equal value norms give the same row argmax as attention") {
  Rng rng(5);
  auto tr = make_trace(5, 1, 4, rng);
  auto& l = tr.layers[0];
  l.wo = MatD::Identity(4, 4);
  for (int j = 0; j < 5; ++j) l.v.row(j).normalize();
  const auto pair = attention_map_vs_contribution(tr, 0);
  for (int i = 0; i < 5; ++i) {
    Eigen::Index a, b;
    pair.attention.row(i).maxCoeff(&a);
    pair.contribution.row(i).maxCoeff(&b);
    CHECK(a == b);
  }
}

TEST_CASE("layer index is checked") {
  Rng rng(6);
  const auto tr = make_trace(3, 1, 4, rng);
  CHECK_THROWS_AS(attention_contribution(tr, 1), ValidationError);
  CHECK_THROWS_AS(attention_contribution(tr, -1), ValidationError);
}

TEST_CASE("unintended counting rules") {
  const auto p = two_object_prompt();
  std::vector<ContributionMatrix<double>> good(4, filled(9, 0.5, 0.9));
  CHECK(count_unintended(p, good, UnintendedRule::Causal) == 0);
  std::vector<ContributionMatrix<double>> bad(4, filled(9, 0.9, 0.5));
  CHECK(count_unintended(p, bad, UnintendedRule::Causal) == 4);
  std::vector<ContributionMatrix<double>> tie(4, filled(9, 0.7, 0.7, 0.7, 0.7));
  CHECK(count_unintended(p, tie, UnintendedRule::Causal) == 0);
  CHECK(count_unintended(p, tie, UnintendedRule::Bidirectional) == 0);
  // Only the bidirectional rule looks at o1.
  std::vector<ContributionMatrix<double>> o1(4, filled(9, 0.5, 0.9, 0.2, 0.8));
  CHECK(count_unintended(p, o1, UnintendedRule::Causal) == 0);
  CHECK(count_unintended(p, o1, UnintendedRule::Bidirectional) == 4);
  const auto single = synth::make_prompt({{synth::Shape::Square, 0}, std::nullopt});
  CHECK_THROWS_AS(count_unintended(single, good, UnintendedRule::Causal), ValidationError);
}

TEST_CASE("comparing an encoder with itself and the empty prompt list") {
  encoder::EncoderConfig cfg;
  const auto params = encoder::init_encoder(cfg, 7);
  EncoderUnderTest a{"a", cfg, params};
  EncoderUnderTest b{"b", cfg, params};
  std::vector<synth::PromptTemplate> prompts;
  for (int i = 0; i < 20; ++i) prompts.push_back(synth::make_prompt(synth::all_two_object_specs()[i * 7]));
  const auto out = compare_encoders(a, b, prompts);
  CHECK(out.a == out.b);
  CHECK(out.a.counts.size() == 20);
  int total = 0;
  for (int c : out.a.histogram) total += c;
  CHECK(total == 20);
  for (int c : out.a.counts) CHECK((c >= 0 && c <= 4));

  const auto dir = std::filesystem::temp_directory_path() / "compbind_unit" / "cmp_empty";
  std::filesystem::remove_all(dir);
  CompareOptions opt;
  opt.out_dir = dir;
  const auto empty = compare_encoders(a, b, {}, opt);
  CHECK(empty.a.counts.empty());
  CHECK_FALSE(std::filesystem::exists(dir));

  const auto full_dir = std::filesystem::temp_directory_path() / "compbind_unit" / "cmp_full";
  std::filesystem::remove_all(full_dir);
  opt.out_dir = full_dir;
  opt.heatmap_prompts = 2;
  compare_encoders(a, b, prompts, opt);
  CHECK(std::filesystem::exists(full_dir / "unintended.csv"));
  CHECK(std::filesystem::exists(full_dir / "histogram.png"));
  CHECK(std::filesystem::exists(full_dir / "heatmaps" / "a" / "1_3.png"));

  encoder::EncoderConfig other = cfg;
  other.vocab = 20;
  const auto other_params = encoder::init_encoder(other, 1);
  CHECK_THROWS_AS(compare_encoders(a, {"x", other, other_params}, prompts), ValidationError);
}

}  // TEST_SUITE
