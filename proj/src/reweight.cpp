#include "compbind/reweight/reweight.hpp"

#include <cmath>
#include <tuple>

#include "compbind/errors.hpp"

namespace compbind::reweight {

void ReweightParams::validate() const {
  if (!(neg_big <= neg_small && neg_small <= 0.0 && 0.0 <= pos)) {
    throw ValidationError("reweighting needs neg_big <= neg_small <= 0 <= pos");
  }
  if (layers.empty()) throw ValidationError("reweighting needs at least one target layer");
}

encoder::BiasMatrix build_bias_matrix(const synth::PromptTemplate& prompt, const ReweightParams& params, int n) {
  params.validate();
  const auto& s = prompt.slots;
  if (!s.complete()) throw ValidationError("reweighting needs a two-object prompt with all four slots");
  for (auto slot : s.as_array()) {
    if (slot >= n) throw ValidationError("prompt slot lies outside the bias matrix");
  }
  encoder::BiasMatrix m;
  m.values = MatD::Zero(n, n);
  m.values(s.o2, s.a1) = params.neg_big;
  m.values(s.a2, s.a1) = params.neg_big;
  m.values(s.o2, s.a2) = params.pos;
  m.values(s.o1, s.a1) = params.pos;
  m.values(s.o2, s.o1) = params.neg_small;
  m.layers = params.layers;
  return m;
}

std::vector<ReweightParams> default_grid(const std::vector<int>& layers) {
  std::vector<ReweightParams> out;
  for (double nb : {-2.0, -5.0, -10.0}) {
    for (double p : {0.0, 1.0, 2.0}) {
      for (double ns : {0.0, -0.5, -1.0}) out.push_back({nb, p, ns, layers});
    }
  }
  return out;
}

GridResult grid_search_params(const std::vector<ReweightParams>& candidates, const CandidateScorer& scorer) {
  if (candidates.empty()) throw ValidationError("grid search needs at least one candidate");
  GridResult result;
  const GridRow* best = nullptr;
  auto key = [](const ReweightParams& p) {
    return std::make_tuple(std::abs(p.neg_big), std::abs(p.pos), std::abs(p.neg_small));
  };
  for (const auto& c : candidates) {
    c.validate();
    GridRow row = scorer(c);
    row.params = c;
    result.table.push_back(row);
  }
  for (const auto& row : result.table) {
    if (!best || row.mean_score > best->mean_score ||
        (row.mean_score == best->mean_score && key(row.params) < key(best->params))) {
      best = &row;
    }
  }
  result.best = best->params;
  result.best_score = best->mean_score;
  return result;
}

}  // namespace compbind::reweight
