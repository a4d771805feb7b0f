#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "compbind/diffusion/denoiser.hpp"
#include "compbind/diffusion/schedule.hpp"
#include "compbind/encoder/encoder.hpp"
#include "compbind/io/checkpoint.hpp"
#include "compbind/synthworld/corpus.hpp"
#include "compbind/train_config.hpp"

namespace compbind::correct {

enum class ProjectionKind { Clp, Wiclp };

std::string_view kind_name(ProjectionKind kind);
ProjectionKind parse_kind(std::string_view name);

// c'_i = c_i + W^T concat(c_{i-s}, ..., c_{i+s}) + b, neighbors outside the
// sequence read as zero vectors. CLP is the s = 0 case.
template <typename S>
struct ProjectionParams {
  using Scalar = S;
  ProjectionKind kind = ProjectionKind::Clp;
  int radius = 0;
  Mat<S> w;  // (2s+1)d x d
  Mat<S> b;  // 1 x d

  int width() const { return static_cast<int>(w.cols()); }
  int window() const { return 2 * radius + 1; }
  void validate() const;

  template <class F>
  void visit(F&& f, const std::string& prefix) {
    f(prefix + "W", w);
    f(prefix + "b", b);
  }

  template <typename To>
  ProjectionParams<To> cast() const {
    return {kind, radius, w.template cast<To>(), b.template cast<To>()};
  }
};

// Zero W and b: the identity map.
ProjectionParams<float> zero_projection(ProjectionKind kind, int radius, int width);

// n x (2s+1)d matrix of zero-padded windows.
template <typename S>
Mat<S> window_stack(const Mat<S>& c, int radius);

template <typename S>
Mat<S> clp_apply(const Mat<S>& c, const ProjectionParams<S>& params);
template <typename S>
Mat<S> wiclp_apply(const Mat<S>& c, const ProjectionParams<S>& params);
// Dispatches on params.kind.
template <typename S>
Mat<S> apply_projection(const Mat<S>& c, const ProjectionParams<S>& params);

// Accumulates dW, db into `grad` and returns dL/dc.
template <typename S>
Mat<S> projection_backward(const Mat<S>& c, const ProjectionParams<S>& params, const Mat<S>& d_out,
                           ProjectionParams<S>& grad);

void save_projection(io::Checkpoint& ck, const ProjectionParams<float>& params);
ProjectionParams<float> load_projection(const io::Checkpoint& ck);

// Frozen text-to-image stack the adapters are trained against.
struct FrozenStack {
  const encoder::EncoderConfig& ecfg;
  const encoder::EncoderParams<float>& enc;
  const diffusion::DenoiserConfig& dcfg;
  const diffusion::DenoiserParams<float>& den;
  const diffusion::NoiseSchedule& schedule;
};

struct ProjectionTrainResult {
  ProjectionParams<float> params;
  std::vector<LossRecord> losses;
};

// Adam on W and b only; starts from zero. The encoder and denoiser are only
// read. Throws RuntimeFailure on a non-finite loss.
ProjectionTrainResult train_projection(ProjectionKind kind, int radius, const synth::Corpus& corpus,
                                       const FrozenStack& stack, const TrainConfig& config,
                                       const std::function<void(const LossRecord&)>& on_step = {});

// Fixed denoising examples for before/after comparisons.
struct ProbeExample {
  std::vector<synth::TokenId> tokens;
  MatF x0, eps;
  int t = 1;
};

std::vector<ProbeExample> probe_batch(const synth::Corpus& corpus, const diffusion::NoiseSchedule& schedule,
                                      int count, std::uint64_t seed);

// Mean loss of a projection on fixed denoising examples.
double projection_loss(const ProjectionParams<float>& params, const FrozenStack& stack,
                       const std::vector<ProbeExample>& probe);

// Which token positions embedding optimization may change.
using TokenMask = std::vector<bool>;

enum class MaskPreset { Adjectives, Nouns, AdjectivesAndNouns, All };

std::string_view preset_name(MaskPreset preset);
MaskPreset parse_preset(std::string_view name);
TokenMask make_mask(const synth::PromptTemplate& prompt, MaskPreset preset);

struct EmbeddingOptConfig {
  int steps = 300;
  int batch = 4;
  double lr = 1e-2;
  std::uint64_t seed = 5;
};

struct EmbeddingOptResult {
  MatF embedding;
  std::vector<LossRecord> losses;
};

// c* = argmin_c E||eps - eps_theta(x_t, c, t)||^2 over the given images,
// starting from `initial`. Positions outside `mask` never move.
EmbeddingOptResult optimize_embedding(const MatF& initial, const std::vector<MatF>& images,
                                      const diffusion::DenoiserConfig& dcfg,
                                      const diffusion::DenoiserParams<float>& den,
                                      const diffusion::NoiseSchedule& schedule, const TokenMask& mask,
                                      const EmbeddingOptConfig& config);

// Mean denoising loss of a fixed embedding on a fixed probe drawn from `images`.
double embedding_probe_loss(const MatF& embedding, const std::vector<MatF>& images,
                            const diffusion::DenoiserConfig& dcfg,
                            const diffusion::DenoiserParams<float>& den,
                            const diffusion::NoiseSchedule& schedule, int count, std::uint64_t seed);

}  // namespace compbind::correct
