#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "compbind/encoder/encoder.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::contrib {

// cont[i, j] = || sum_h attn^h[i, j] v^h_j W_o^h ||_2 for one layer, with the
// summand vectors kept (row i * n + j of `vectors`).
template <typename S>
struct ContributionMatrix {
  int layer = 0;
  Mat<S> cont;     // n x n
  Mat<S> vectors;  // n*n x d

  int tokens() const { return static_cast<int>(cont.rows()); }
  auto vector(int i, int j) const { return vectors.row(static_cast<Eigen::Index>(i) * cont.rows() + j); }
};

// Computed from the captured trace only; throws ValidationError on a bad layer.
template <typename S>
ContributionMatrix<S> attention_contribution(const encoder::AttentionTrace<S>& trace, int layer);

template <typename S>
std::vector<ContributionMatrix<S>> all_contributions(const encoder::AttentionTrace<S>& trace);

enum class UnintendedRule { Causal, Bidirectional };

UnintendedRule rule_for(const encoder::EncoderConfig& config);

// One layer counts when cont[o2, a1] > cont[o2, a2]; the bidirectional rule
// also counts cont[o1, a2] > cont[o1, a1]. Ties never count.
template <typename S>
bool layer_unintended(const synth::PromptTemplate& prompt, const ContributionMatrix<S>& cm, UnintendedRule rule);

template <typename S>
int count_unintended(const synth::PromptTemplate& prompt, const std::vector<ContributionMatrix<S>>& layers,
                     UnintendedRule rule);

// Head-averaged attention next to the contribution matrix of the same layer.
template <typename S>
struct MapPair {
  Mat<S> attention;
  Mat<S> contribution;
};

template <typename S>
MapPair<S> attention_map_vs_contribution(const encoder::AttentionTrace<S>& trace, int layer);

struct EncoderUnderTest {
  std::string tag;
  const encoder::EncoderConfig& config;
  const encoder::EncoderParams<float>& params;
};

struct PromptRow {
  int layer = 0;
  double cont_o2a1 = 0, cont_o2a2 = 0, cont_o1a1 = 0, cont_o1a2 = 0;
  bool unintended = false;
};

struct UnintendedReport {
  std::string encoder_tag;
  std::string dataset_tag;
  std::vector<int> counts;                   // per prompt, in [0, L]
  std::vector<std::vector<PromptRow>> rows;  // per prompt, per layer
  std::vector<int> histogram;                // L + 1 bins

  double mean() const;
  bool operator==(const UnintendedReport&) const;
};

UnintendedReport unintended_report(const EncoderUnderTest& enc, const std::string& dataset_tag,
                                   const std::vector<synth::PromptTemplate>& prompts);

struct ComparisonOutput {
  UnintendedReport a;
  UnintendedReport b;
};

struct CompareOptions {
  std::filesystem::path out_dir;  // empty: no files
  std::string dataset_tag = "two-object";
  int heatmap_prompts = 8;        // heatmaps for the first k prompts of each encoder
};

// Throws ValidationError when the encoders disagree on the vocabulary. Writes
// unintended.csv, histogram.png and heatmaps/<tag>/{prompt_id}_{layer}.png
// when out_dir is set and the prompt list is not empty.
ComparisonOutput compare_encoders(const EncoderUnderTest& a, const EncoderUnderTest& b,
                                  const std::vector<synth::PromptTemplate>& prompts,
                                  const CompareOptions& options = {});

}  // namespace compbind::contrib
