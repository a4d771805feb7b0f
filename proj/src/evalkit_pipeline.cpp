#include <algorithm>
#include <thread>

#include "compbind/errors.hpp"
#include "compbind/evalkit/pipeline.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::evalkit {

void Pipeline::validate() const {
  if (!ecfg || !enc || !dcfg || !den || !schedule) throw ValidationError("pipeline is missing a component");
  if (ecfg->width != dcfg->text_width) throw ValidationError("encoder width does not match the denoiser");
  if (projection) {
    projection->validate();
    if (projection->width() != ecfg->width) throw ValidationError("projection width does not match the encoder");
  }
  if (reweight) reweight->validate();
  switch_off.validate(schedule->steps());
}

MatF text_embedding(const Pipeline& pipeline, const synth::PromptTemplate& prompt) {
  if (pipeline.reweight && prompt.slots.complete()) {
    const auto bias = reweight::build_bias_matrix(prompt, *pipeline.reweight, static_cast<int>(prompt.length()));
    return encoder::encode<float>(*pipeline.ecfg, *pipeline.enc, prompt.tokens, &bias).embeddings;
  }
  return encoder::encode<float>(*pipeline.ecfg, *pipeline.enc, prompt.tokens).embeddings;
}

diffusion::SampleResult generate(const Pipeline& pipeline, const synth::PromptTemplate& prompt, std::uint64_t seed,
                                 const diffusion::SampleOptions& options) {
  pipeline.validate();
  const MatF original = text_embedding(pipeline, prompt);
  if (!pipeline.projection) {
    return diffusion::sample(*pipeline.dcfg, *pipeline.den, *pipeline.schedule,
                             diffusion::constant_embedding(original), seed, options);
  }
  const MatF projected = correct::apply_projection(original, *pipeline.projection);
  return diffusion::sample(*pipeline.dcfg, *pipeline.den, *pipeline.schedule,
                           diffusion::switch_off_schedule(original, projected, pipeline.switch_off), seed, options);
}

std::uint64_t sample_seed(std::uint64_t base_seed, std::size_t prompt_index, int k) {
  return Rng(base_seed).derive(prompt_index).derive(static_cast<std::uint64_t>(k)).next_u64();
}

EvalResult evaluate(const Pipeline& pipeline, const std::vector<synth::SceneSpec>& specs,
                    const EvalOptions& options) {
  pipeline.validate();
  if (options.seeds_per_prompt <= 0) throw ValidationError("seeds per prompt must be positive");
  const std::size_t total = specs.size() * static_cast<std::size_t>(options.seeds_per_prompt);
  EvalResult out;
  out.scores.assign(total, 0.0);
  if (options.keep_images) out.images.assign(total, MatF());

  std::vector<synth::PromptTemplate> prompts;
  for (const auto& s : specs) prompts.push_back(synth::make_prompt(s));

  auto work = [&](std::size_t first, std::size_t stride) {
    for (std::size_t idx = first; idx < total; idx += stride) {
      const std::size_t p = idx / options.seeds_per_prompt;
      const int k = static_cast<int>(idx % options.seeds_per_prompt);
      auto result = generate(pipeline, prompts[p], sample_seed(options.base_seed, p, k));
      out.scores[idx] = composition_score(result.image, specs[p]).value;
      if (options.keep_images) out.images[idx] = std::move(result.image);
    }
  };
  const int threads = std::max(1, std::min<int>(options.threads, static_cast<int>(std::max<std::size_t>(total, 1))));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(work, static_cast<std::size_t>(i), threads);
    for (auto& t : pool) t.join();
  }
  double sum = 0.0;
  for (double s : out.scores) sum += s;
  out.n = static_cast<int>(total);
  out.mean = total ? sum / static_cast<double>(total) : 0.0;
  return out;
}

}  // namespace compbind::evalkit
