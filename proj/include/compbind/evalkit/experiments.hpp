#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "compbind/evalkit/pipeline.hpp"
#include "compbind/reweight/reweight.hpp"

namespace compbind::evalkit {

// Scores every candidate on the tuning specs with fixed seeds. The pipeline's
// own reweight setting is replaced per candidate.
reweight::GridResult search_reweighting(const Pipeline& pipeline, const std::vector<reweight::ReweightParams>& candidates,
                                        const std::vector<synth::SceneSpec>& tuning, const EvalOptions& options);

// Paired-seed comparison of two variants on the same specs.
struct PairedDelta {
  double baseline = 0.0;
  double variant = 0.0;
  double delta = 0.0;  // variant - baseline
  int n = 0;
};

PairedDelta paired_delta(const Pipeline& baseline, const Pipeline& variant, const std::vector<synth::SceneSpec>& specs,
                         const EvalOptions& options);

// Reweighted minus unweighted pipeline on held-out specs.
PairedDelta evaluate_reweighting(const reweight::ReweightParams& params, const std::vector<synth::SceneSpec>& heldout,
                                 const Pipeline& pipeline, const EvalOptions& options);

struct TradeoffPoint {
  double tau_fraction = 0.0;
  double mean_score = 0.0;
  double fid_proxy = 0.0;
  int n = 0;
};

struct TradeoffResult {
  std::vector<TradeoffPoint> points;  // in the order given
  double baseline_score = 0.0;        // without the projection
  double baseline_fid = 0.0;
};

// For each Switch-Off fraction: mean composition score on `prompts` and the
// FID-proxy of images generated for `clean` against `reference`. Seeds are
// shared across fractions. Throws ValidationError on an empty fraction list,
// a fraction outside [0, 1] or a pipeline without a projection.
TradeoffResult tradeoff_curve(const Pipeline& pipeline, const std::vector<double>& fractions,
                              const std::vector<synth::SceneSpec>& prompts, const std::vector<synth::SceneSpec>& clean,
                              const std::vector<MatF>& reference, const EvalOptions& options);

// tau_fraction,mean_score,fid_proxy,n
void write_tradeoff_csv(const std::filesystem::path& path, const TradeoffResult& result);
// Score and |FID-proxy gap| against the fraction.
void write_tradeoff_png(const std::filesystem::path& path, const TradeoffResult& result);

struct ModelVariant {
  std::string tag;
  Pipeline pipeline;
};

struct PromptCategory {
  std::string name;
  std::vector<synth::SceneSpec> specs;
};

struct TableRow {
  std::string model_tag;
  std::string category;
  double mean_score = 0.0;
  int n = 0;
  bool operator==(const TableRow&) const = default;
};

// Mean score per (model, category), model-major. Empty categories are skipped.
std::vector<TableRow> comparison_table(const std::vector<ModelVariant>& models,
                                       const std::vector<PromptCategory>& categories, const EvalOptions& options);

// model_tag,category,mean_score,n
void write_table_csv(const std::filesystem::path& path, const std::vector<TableRow>& rows);

// Two-object specs split by what distinguishes the objects: "color" (same
// shape), "shape" (same color) and "color+shape".
std::vector<PromptCategory> categorize(const std::vector<synth::SceneSpec>& specs);

// Renders of the given specs as 1 x 768 rows.
std::vector<MatF> render_all(const std::vector<synth::SceneSpec>& specs);

}  // namespace compbind::evalkit
