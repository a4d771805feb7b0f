#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "compbind/correct/projection.hpp"
#include "compbind/diffusion/sampler.hpp"
#include "compbind/encoder/encoder.hpp"
#include "compbind/reweight/reweight.hpp"
#include "compbind/synthworld/scene.hpp"

namespace compbind::evalkit {

// One text-to-image variant. Reweighting biases the encoder on two-object
// prompts (single-object prompts pass through unbiased); a projection is used
// for t >= switch_off.tau.
struct Pipeline {
  const encoder::EncoderConfig* ecfg = nullptr;
  const encoder::EncoderParams<float>* enc = nullptr;
  const diffusion::DenoiserConfig* dcfg = nullptr;
  const diffusion::DenoiserParams<float>* den = nullptr;
  const diffusion::NoiseSchedule* schedule = nullptr;
  const correct::ProjectionParams<float>* projection = nullptr;
  std::optional<reweight::ReweightParams> reweight;
  diffusion::SwitchOffPolicy switch_off{0};

  void validate() const;
};

MatF text_embedding(const Pipeline& pipeline, const synth::PromptTemplate& prompt);

diffusion::SampleResult generate(const Pipeline& pipeline, const synth::PromptTemplate& prompt, std::uint64_t seed,
                                 const diffusion::SampleOptions& options = {});

// Seed of the k-th sample for the p-th prompt; shared by every variant so
// comparisons are paired.
std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t prompt_index, int k);

struct EvalOptions {
  int seeds_per_prompt = 8;
  std::uint64_t base_seed = 2024;
  int threads = 1;
  bool keep_images = false;
};

struct EvalResult {
  std::vector<double> scores;  // prompt-major, seed-minor
  std::vector<MatF> images;    // same order, when kept
  double mean = 0.0;
  int n = 0;
};

// Generates seeds_per_prompt images per spec and scores each against its spec.
// Results do not depend on the thread count.
EvalResult evaluate(const Pipeline& pipeline, const std::vector<synth::SceneSpec>& specs,
                    const EvalOptions& options);

}  // namespace compbind::evalkit
