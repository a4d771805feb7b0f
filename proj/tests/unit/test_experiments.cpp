#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "compbind/errors.hpp"
#include "compbind/evalkit/experiments.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/numkit/rng.hpp"

using namespace compbind;
using namespace compbind::evalkit;

namespace {

struct TinyStack {
  encoder::EncoderConfig ecfg;
  diffusion::DenoiserConfig dcfg;
  diffusion::NoiseSchedule schedule{10};
  encoder::EncoderParams<float> enc = encoder::init_encoder(ecfg, 1);
  diffusion::DenoiserParams<float> den = diffusion::init_denoiser(dcfg, 2);
  correct::ProjectionParams<float> proj = correct::zero_projection(correct::ProjectionKind::Wiclp, 1, 32);

  TinyStack() {
    den.head.w *= 20.0f;
    Rng rng(8);
    for (Eigen::Index i = 0; i < proj.w.size(); ++i) proj.w.data()[i] = static_cast<float>(0.3 * rng.normal());
  }

  Pipeline pipeline() const {
    Pipeline p;
    p.ecfg = &ecfg;
    p.enc = &enc;
    p.dcfg = &dcfg;
    p.den = &den;
    p.schedule = &schedule;
    return p;
  }
};

std::vector<synth::SceneSpec> first_specs(std::size_t n) {
  const auto all = synth::all_two_object_specs();
  return {all.begin(), all.begin() + static_cast<long>(n)};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_SUITE("experiments") {

TEST_CASE("tradeoff endpoints match the baseline and always-on runs") {
  TinyStack st;
  auto p = st.pipeline();
  p.projection = &st.proj;
  const auto prompts = first_specs(3);
  const auto clean = synth::all_single_object_specs();
  const auto reference = render_all(clean);
  EvalOptions opt;
  opt.seeds_per_prompt = 1;
  const auto r = tradeoff_curve(p, {0.0, 0.5, 1.0}, prompts, clean, reference, opt);
  REQUIRE(r.points.size() == 3);
  CHECK(r.points[2].mean_score == r.baseline_score);
  CHECK(r.points[2].fid_proxy == r.baseline_fid);

  Pipeline always = p;
  always.switch_off = {0};
  const auto a = evaluate(always, prompts, opt);
  CHECK(r.points[0].mean_score == a.mean);
  opt.keep_images = true;
  CHECK(r.points[0].fid_proxy == fid_proxy(evaluate(always, clean, opt).images, reference));
  CHECK(r.points[0].fid_proxy != r.baseline_fid);
  CHECK(r.points[1].n == 3);

  CHECK_THROWS_AS(tradeoff_curve(p, {}, prompts, clean, reference, opt), ValidationError);
  CHECK_THROWS_AS(tradeoff_curve(p, {1.2}, prompts, clean, reference, opt), ValidationError);
  CHECK_THROWS_AS(tradeoff_curve(st.pipeline(), {0.5}, prompts, clean, reference, opt), ValidationError);
}

TEST_CASE("tradeoff csv has one row per fraction") {
  TradeoffResult r;
  for (double f : {0.0, 0.2, 0.4, 0.6, 0.8, 1.0}) r.points.push_back({f, 0.5, 1.0, 8});
  const auto dir = std::filesystem::temp_directory_path() / "compbind_tradeoff_csv";
  std::filesystem::create_directories(dir);
  write_tradeoff_csv(dir / "t.csv", r);
  std::stringstream in(slurp(dir / "t.csv"));
  std::string line;
  std::getline(in, line);
  CHECK(line == "tau_fraction,mean_score,fid_proxy,n");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("zero reweighting gives an exactly zero paired delta") {
  TinyStack st;
  EvalOptions opt;
  opt.seeds_per_prompt = 2;
  const auto d = evaluate_reweighting(reweight::ReweightParams{0, 0, 0}, first_specs(4), st.pipeline(), opt);
  CHECK(d.delta == 0.0);
  CHECK(d.baseline == d.variant);
  CHECK(d.n == 8);
}

TEST_CASE("reweight search includes the baseline candidate") {
  TinyStack st;
  EvalOptions opt;
  opt.seeds_per_prompt = 1;
  const std::vector<reweight::ReweightParams> cands = {{0, 0, 0}, {-5, 1, -0.5}};
  const auto tuning = first_specs(2);
  const auto g = search_reweighting(st.pipeline(), cands, tuning, opt);
  REQUIRE(g.table.size() == 2);
  CHECK(g.best_score >= g.table[0].mean_score);
  CHECK(g.table[0].mean_score == evaluate(st.pipeline(), tuning, opt).mean);
  CHECK_THROWS_AS(search_reweighting(st.pipeline(), cands, {}, opt), ValidationError);
}

TEST_CASE("categories partition two-object specs") {
  const auto all = synth::all_two_object_specs();
  const auto cats = categorize(all);
  REQUIRE(cats.size() == 3);
  CHECK(cats[0].name == "color");
  std::size_t total = 0;
  for (const auto& c : cats) total += c.specs.size();
  CHECK(total == all.size());
  for (const auto& s : cats[0].specs) CHECK(s.left.shape == s.right->shape);
  for (const auto& s : cats[1].specs) CHECK(s.left.color == s.right->color);
  // 24 objects, 23 partners each: 7 share the shape, 2 share the color.
  CHECK(cats[0].specs.size() == 24 * 7);
  CHECK(cats[1].specs.size() == 24 * 2);
  CHECK_THROWS_AS(categorize(synth::all_single_object_specs()), ValidationError);
}

TEST_CASE("comparison table rows are model-major with fixed seeds") {
  TinyStack st;
  EvalOptions opt;
  opt.seeds_per_prompt = 1;
  std::vector<ModelVariant> models = {{"baseline", st.pipeline()}, {"+WiCLP", st.pipeline()}};
  models[1].pipeline.projection = &st.proj;
  const std::vector<PromptCategory> cats = {{"a", first_specs(2)}, {"empty", {}}, {"b", first_specs(1)}};
  const auto rows = comparison_table(models, cats, opt);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].model_tag == "baseline");
  CHECK(rows[1].category == "b");
  CHECK(rows[2].model_tag == "+WiCLP");
  CHECK(rows[0].n == 2);
  CHECK(rows == comparison_table(models, cats, opt));
}

}  // TEST_SUITE
