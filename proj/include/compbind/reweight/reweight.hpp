#pragma once

#include <functional>
#include <vector>

#include "compbind/encoder/encoder.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::reweight {

struct ReweightParams {
  double neg_big = 0.0;
  double pos = 0.0;
  double neg_small = 0.0;
  std::vector<int> layers = encoder::BiasMatrix::last_layers(4, 2);

  // neg_big <= neg_small <= 0 <= pos
  void validate() const;
  bool is_zero() const { return neg_big == 0.0 && pos == 0.0 && neg_small == 0.0; }
  bool operator==(const ReweightParams&) const = default;
};

// M[o2,a1] = M[a2,a1] = neg_big, M[o2,a2] = M[o1,a1] = pos, M[o2,o1] = neg_small,
// zero elsewhere. Throws ValidationError for prompts without all four slots.
encoder::BiasMatrix build_bias_matrix(const synth::PromptTemplate& prompt, const ReweightParams& params, int n);

// The default 27-point grid over the target layer set.
std::vector<ReweightParams> default_grid(const std::vector<int>& layers);

struct GridRow {
  ReweightParams params;
  double mean_score = 0.0;
  int n_images = 0;
};

struct GridResult {
  ReweightParams best;
  double best_score = 0.0;
  std::vector<GridRow> table;  // candidate order
};

// Candidate -> (mean score, image count). Must be deterministic.
using CandidateScorer = std::function<GridRow(const ReweightParams&)>;

// Highest mean score wins; ties go to the smallest |neg_big|, then |pos|, then
// |neg_small|. Throws ValidationError on an empty candidate list.
GridResult grid_search_params(const std::vector<ReweightParams>& candidates, const CandidateScorer& scorer);

}  // namespace compbind::reweight
