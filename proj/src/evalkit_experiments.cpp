#include <cmath>
#include <fstream>
#include <iomanip>

#include "compbind/errors.hpp"
#include "compbind/evalkit/experiments.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/io/png.hpp"

namespace compbind::evalkit {

reweight::GridResult search_reweighting(const Pipeline& pipeline, const std::vector<reweight::ReweightParams>& candidates,
                                        const std::vector<synth::SceneSpec>& tuning, const EvalOptions& options) {
  if (tuning.empty()) throw ValidationError("reweight search needs at least one tuning prompt");
  return reweight::grid_search_params(candidates, [&](const reweight::ReweightParams& params) {
    Pipeline p = pipeline;
    p.reweight = params;
    const auto r = evaluate(p, tuning, options);
    return reweight::GridRow{params, r.mean, r.n};
  });
}

PairedDelta paired_delta(const Pipeline& baseline, const Pipeline& variant, const std::vector<synth::SceneSpec>& specs,
                         const EvalOptions& options) {
  const auto a = evaluate(baseline, specs, options);
  const auto b = evaluate(variant, specs, options);
  return {a.mean, b.mean, b.mean - a.mean, a.n};
}

PairedDelta evaluate_reweighting(const reweight::ReweightParams& params, const std::vector<synth::SceneSpec>& heldout,
                                 const Pipeline& pipeline, const EvalOptions& options) {
  Pipeline base = pipeline;
  base.reweight.reset();
  Pipeline variant = pipeline;
  variant.reweight = params;
  return paired_delta(base, variant, heldout, options);
}

namespace {

double clean_fid(const Pipeline& pipeline, const std::vector<synth::SceneSpec>& clean,
                 const std::vector<MatF>& reference, EvalOptions options) {
  options.keep_images = true;
  return fid_proxy(evaluate(pipeline, clean, options).images, reference);
}

}  // namespace

TradeoffResult tradeoff_curve(const Pipeline& pipeline, const std::vector<double>& fractions,
                              const std::vector<synth::SceneSpec>& prompts, const std::vector<synth::SceneSpec>& clean,
                              const std::vector<MatF>& reference, const EvalOptions& options) {
  if (fractions.empty()) throw ValidationError("trade-off curve needs at least one tau fraction");
  if (!pipeline.projection) throw ValidationError("trade-off curve needs a projection");
  for (double f : fractions) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError("tau fractions must lie in [0, 1]");
  }
  const int steps = pipeline.schedule->steps();
  TradeoffResult out;
  Pipeline base = pipeline;
  base.projection = nullptr;
  base.switch_off = {0};
  out.baseline_score = evaluate(base, prompts, options).mean;
  out.baseline_fid = clean_fid(base, clean, reference, options);
  for (double f : fractions) {
    Pipeline p = pipeline;
    p.switch_off = diffusion::SwitchOffPolicy::from_fraction(f, steps);
    const auto r = evaluate(p, prompts, options);
    out.points.push_back({f, r.mean, clean_fid(p, clean, reference, options), r.n});
  }
  return out;
}

namespace {

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << std::setprecision(9);
  return out;
}

}  // namespace

void write_tradeoff_csv(const std::filesystem::path& path, const TradeoffResult& result) {
  auto out = open_csv(path);
  out << "tau_fraction,mean_score,fid_proxy,n\n";
  for (const auto& p : result.points) out << p.tau_fraction << ',' << p.mean_score << ',' << p.fid_proxy << ',' << p.n << '\n';
}

void write_tradeoff_png(const std::filesystem::path& path, const TradeoffResult& result) {
  std::vector<double> score, gap;
  for (const auto& p : result.points) {
    score.push_back(p.mean_score);
    gap.push_back(std::abs(p.fid_proxy - result.baseline_fid));
  }
  io::write_line_chart_png(path, {score, gap});
}

std::vector<TableRow> comparison_table(const std::vector<ModelVariant>& models,
                                       const std::vector<PromptCategory>& categories, const EvalOptions& options) {
  std::vector<TableRow> rows;
  for (const auto& m : models) {
    for (const auto& c : categories) {
      if (c.specs.empty()) continue;
      const auto r = evaluate(m.pipeline, c.specs, options);
      rows.push_back({m.tag, c.name, r.mean, r.n});
    }
  }
  return rows;
}

void write_table_csv(const std::filesystem::path& path, const std::vector<TableRow>& rows) {
  auto out = open_csv(path);
  out << "model_tag,category,mean_score,n\n";
  for (const auto& r : rows) out << r.model_tag << ',' << r.category << ',' << r.mean_score << ',' << r.n << '\n';
}

std::vector<PromptCategory> categorize(const std::vector<synth::SceneSpec>& specs) {
  std::vector<PromptCategory> out{{"color", {}}, {"shape", {}}, {"color+shape", {}}};
  for (const auto& s : specs) {
    if (!s.two_objects()) throw ValidationError("only two-object specs can be categorized");
    const bool same_shape = s.left.shape == s.right->shape;
    const bool same_color = s.left.color == s.right->color;
    out[same_shape ? 0 : same_color ? 1 : 2].specs.push_back(s);
  }
  return out;
}

std::vector<MatF> render_all(const std::vector<synth::SceneSpec>& specs) {
  std::vector<MatF> out;
  out.reserve(specs.size());
  for (const auto& s : specs) out.push_back(synth::image_to_matrix(synth::render_scene(s)));
  return out;
}

}  // namespace compbind::evalkit
