#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "compbind/synthworld/scene.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::synth {

struct CorpusConfig {
  std::int64_t n_samples = 8000;
  double corruption_prob = 0.5;
  double single_object_fraction = 0.2;
  // Two-object specs excluded from the corpus (the evaluation hold-out).
  int holdout_count = 0;
  std::uint64_t holdout_seed = 1234;
  std::uint64_t seed = 7;
};

void validate(const CorpusConfig& config);

struct Sample {
  PromptTemplate prompt;  // the caption, possibly corrupted
  Image image;
  SceneSpec truth;        // what the image actually shows
  bool corrupted = false;
};

struct Corpus {
  std::vector<Sample> samples;
  std::int64_t corrupted_count() const;
  std::int64_t two_object_count() const;
};

// Sample i draws its scene and corruption from Rng(seed).derive(i), so the
// result does not depend on generation order.
Corpus gen_corpus(const CorpusConfig& config);

// Binary "CBD1" layout, little-endian:
//   magic "CBD1"
//   u32 sample count, u32 height, u32 width, u32 channels
//   per sample: u16 token count, u16 token ids, 4 x u16 slots (0xFFFF absent),
//               height*width*channels f32 pixels (HWC)
// `truth` and `corrupted` are not stored; loading re-derives `truth` from the
// caption.
void write_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus read_corpus(const std::filesystem::path& path);

// Sidecar key=value listing of the config and summary counts.
std::string corpus_manifest(const CorpusConfig& config, const Corpus& corpus);

}  // namespace compbind::synth
