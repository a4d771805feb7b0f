#include <cmath>
#include <map>
#include <sstream>

#include "compbind/correct/projection.hpp"
#include "compbind/diffusion/train.hpp"
#include "compbind/errors.hpp"
#include "compbind/numkit/adam.hpp"
#include "compbind/numkit/rng.hpp"

namespace compbind::correct {

std::string_view kind_name(ProjectionKind kind) { return kind == ProjectionKind::Clp ? "clp" : "wiclp"; }

ProjectionKind parse_kind(std::string_view name) {
  if (name == "clp") return ProjectionKind::Clp;
  if (name == "wiclp") return ProjectionKind::Wiclp;
  throw ValidationError("unknown projection kind '" + std::string(name) + "' (expected clp or wiclp)");
}

template <typename S>
void ProjectionParams<S>::validate() const {
  if (radius < 0) throw ValidationError("projection radius must be non-negative");
  if (kind == ProjectionKind::Clp && radius != 0) throw ValidationError("CLP requires radius 0");
  if (w.cols() <= 0 || w.rows() != static_cast<Eigen::Index>(window()) * w.cols()) {
    throw ValidationError("projection W must be (2s+1)d x d");
  }
  if (b.rows() != 1 || b.cols() != w.cols()) throw ValidationError("projection b must be 1 x d");
}

ProjectionParams<float> zero_projection(ProjectionKind kind, int radius, int width) {
  if (width <= 0) throw ValidationError("projection width must be positive");
  ProjectionParams<float> p;
  p.kind = kind;
  p.radius = radius;
  p.w = MatF::Zero(static_cast<Eigen::Index>(2 * radius + 1) * width, width);
  p.b = MatF::Zero(1, width);
  p.validate();
  return p;
}

template <typename S>
Mat<S> window_stack(const Mat<S>& c, int radius) {
  const Eigen::Index n = c.rows();
  const Eigen::Index d = c.cols();
  const int win = 2 * radius + 1;
  Mat<S> out = Mat<S>::Zero(n, win * d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < win; ++k) {
      const Eigen::Index j = i - radius + k;
      if (j < 0 || j >= n) continue;
      out.block(i, k * d, 1, d) = c.row(j);
    }
  }
  return out;
}

namespace {

template <typename S>
void check_width(const Mat<S>& c, const ProjectionParams<S>& params) {
  params.validate();
  if (c.cols() != params.w.cols()) {
    std::ostringstream msg;
    msg << "embedding width " << c.cols() << " does not match projection width " << params.w.cols();
    throw ValidationError(msg.str());
  }
}

template <typename S>
Mat<S> project(const Mat<S>& c, const ProjectionParams<S>& params) {
  check_width(c, params);
  Mat<S> out = c + window_stack(c, params.radius) * params.w;
  out.rowwise() += params.b.row(0);
  return out;
}

}  // namespace

template <typename S>
Mat<S> clp_apply(const Mat<S>& c, const ProjectionParams<S>& params) {
  if (params.kind != ProjectionKind::Clp) throw ValidationError("clp_apply needs CLP parameters");
  return project(c, params);
}

template <typename S>
Mat<S> wiclp_apply(const Mat<S>& c, const ProjectionParams<S>& params) {
  if (params.kind != ProjectionKind::Wiclp) throw ValidationError("wiclp_apply needs WiCLP parameters");
  return project(c, params);
}

template <typename S>
Mat<S> apply_projection(const Mat<S>& c, const ProjectionParams<S>& params) {
  return project(c, params);
}

template <typename S>
Mat<S> projection_backward(const Mat<S>& c, const ProjectionParams<S>& params, const Mat<S>& d_out,
                           ProjectionParams<S>& grad) {
  check_width(c, params);
  const Mat<S> win = window_stack(c, params.radius);
  grad.w += win.transpose() * d_out;
  grad.b += d_out.colwise().sum();
  const Mat<S> d_win = d_out * params.w.transpose();
  Mat<S> dc = d_out;
  const Eigen::Index n = c.rows();
  const Eigen::Index d = c.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int k = 0; k < params.window(); ++k) {
      const Eigen::Index j = i - params.radius + k;
      if (j < 0 || j >= n) continue;
      dc.row(j) += d_win.block(i, k * d, 1, d);
    }
  }
  return dc;
}

#define COMPBIND_INSTANTIATE(S)                                                                 \
  template struct ProjectionParams<S>;                                                          \
  template Mat<S> window_stack(const Mat<S>&, int);                                             \
  template Mat<S> clp_apply(const Mat<S>&, const ProjectionParams<S>&);                         \
  template Mat<S> wiclp_apply(const Mat<S>&, const ProjectionParams<S>&);                       \
  template Mat<S> apply_projection(const Mat<S>&, const ProjectionParams<S>&);                  \
  template Mat<S> projection_backward(const Mat<S>&, const ProjectionParams<S>&, const Mat<S>&, \
                                      ProjectionParams<S>&);
COMPBIND_INSTANTIATE(float)
COMPBIND_INSTANTIATE(double)
#undef COMPBIND_INSTANTIATE

void save_projection(io::Checkpoint& ck, const ProjectionParams<float>& params) {
  params.validate();
  ck.put_scalar("proj.kind", params.kind == ProjectionKind::Clp ? 0.0 : 1.0);
  ck.put_scalar("proj.s", params.radius);
  ck.put_matrix("proj.W", params.w);
  ck.put_matrix("proj.b", params.b);
}

ProjectionParams<float> load_projection(const io::Checkpoint& ck) {
  ProjectionParams<float> p;
  const double kind = ck.get_scalar("proj.kind");
  if (kind != 0.0 && kind != 1.0) throw ValidationError("proj.kind must be 0 (clp) or 1 (wiclp)");
  p.kind = kind == 0.0 ? ProjectionKind::Clp : ProjectionKind::Wiclp;
  p.radius = static_cast<int>(ck.get_scalar("proj.s"));
  p.w = ck.get_matrix("proj.W");
  p.b = ck.get_matrix("proj.b");
  p.validate();
  return p;
}

namespace {

class EmbeddingCache {
 public:
  explicit EmbeddingCache(const FrozenStack& stack) : stack_(stack) {}

  const MatF& get(const std::vector<synth::TokenId>& tokens) {
    auto it = cache_.find(tokens);
    if (it == cache_.end()) {
      it = cache_.emplace(tokens, encoder::encode<float>(stack_.ecfg, stack_.enc, tokens).embeddings).first;
    }
    return it->second;
  }

 private:
  const FrozenStack& stack_;
  std::map<std::vector<synth::TokenId>, MatF> cache_;
};

}  // namespace

ProjectionTrainResult train_projection(ProjectionKind kind, int radius, const synth::Corpus& corpus,
                                       const FrozenStack& stack, const TrainConfig& config,
                                       const std::function<void(const LossRecord&)>& on_step) {
  config.validate();
  if (corpus.samples.empty()) throw ValidationError("projection training corpus is empty");
  if (stack.ecfg.width != stack.dcfg.text_width) throw ValidationError("encoder and denoiser widths differ");
  ProjectionTrainResult result;
  result.params = zero_projection(kind, radius, stack.ecfg.width);
  auto& params = result.params;
  EmbeddingCache cache(stack);
  AdamState<float> state;
  auto ptrs = nn::param_ptrs(params);
  Rng rng(config.seed);
  const double scale = 1.0 / config.batch;
  for (std::int64_t step = 0; step < config.steps; ++step) {
    const auto batch = diffusion::draw_examples(corpus, stack.schedule, config.batch, rng.next_u64());
    auto grad = nn::zeros_like(params);
    double loss = 0.0;
    for (const auto& ex : batch) {
      const MatF& c = cache.get(ex.tokens);
      const MatF projected = apply_projection(c, params);
      MatF d_text;
      loss += diffusion::embedding_example_loss<float>(stack.dcfg, stack.den, stack.schedule, projected, ex.x0,
                                                       ex.eps, ex.t, scale, &d_text, nullptr);
      projection_backward(c, params, d_text, grad);
    }
    loss /= config.batch;
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "projection training diverged at step " << step << " (loss " << loss << ")";
      throw RuntimeFailure(msg.str());
    }
    const double lr = config.lr_at(step);
    adam_step(ptrs, nn::const_param_ptrs(grad), state, lr);
    LossRecord rec{step, loss, lr};
    result.losses.push_back(rec);
    if (on_step) on_step(rec);
  }
  return result;
}

std::vector<ProbeExample> probe_batch(const synth::Corpus& corpus, const diffusion::NoiseSchedule& schedule,
                                      int count, std::uint64_t seed) {
  std::vector<ProbeExample> out;
  for (auto& ex : diffusion::draw_examples(corpus, schedule, count, seed)) {
    out.push_back({std::move(ex.tokens), std::move(ex.x0), std::move(ex.eps), ex.t});
  }
  return out;
}

double projection_loss(const ProjectionParams<float>& params, const FrozenStack& stack,
                       const std::vector<ProbeExample>& probe) {
  EmbeddingCache cache(stack);
  double total = 0.0;
  for (const auto& ex : probe) {
    const MatF projected = apply_projection(cache.get(ex.tokens), params);
    total += diffusion::embedding_example_loss<float>(stack.dcfg, stack.den, stack.schedule, projected, ex.x0,
                                                      ex.eps, ex.t, 1.0, nullptr, nullptr);
  }
  return probe.empty() ? 0.0 : total / static_cast<double>(probe.size());
}

// ---------------------------------------------------------------- embedding optimization

std::string_view preset_name(MaskPreset preset) {
  switch (preset) {
    case MaskPreset::Adjectives: return "adjectives";
    case MaskPreset::Nouns: return "nouns";
    case MaskPreset::AdjectivesAndNouns: return "adjectives+nouns";
    case MaskPreset::All: return "all";
  }
  return "all";
}

MaskPreset parse_preset(std::string_view name) {
  for (auto p : {MaskPreset::Adjectives, MaskPreset::Nouns, MaskPreset::AdjectivesAndNouns, MaskPreset::All}) {
    if (preset_name(p) == name) return p;
  }
  throw ValidationError("unknown token mask '" + std::string(name) +
                        "' (expected adjectives, nouns, adjectives+nouns or all)");
}

TokenMask make_mask(const synth::PromptTemplate& prompt, MaskPreset preset) {
  TokenMask mask(prompt.length(), preset == MaskPreset::All);
  const bool adj = preset == MaskPreset::Adjectives || preset == MaskPreset::AdjectivesAndNouns;
  const bool noun = preset == MaskPreset::Nouns || preset == MaskPreset::AdjectivesAndNouns;
  auto set = [&](std::uint16_t slot) {
    if (slot != synth::kAbsentSlot && slot < mask.size()) mask[slot] = true;
  };
  if (adj) {
    set(prompt.slots.a1);
    set(prompt.slots.a2);
  }
  if (noun) {
    set(prompt.slots.o1);
    set(prompt.slots.o2);
  }
  return mask;
}

namespace {

struct NoisePick {
  std::size_t image;
  int t;
  MatF eps;
};

NoisePick pick(Rng& rng, std::size_t images, int steps, int pixels) {
  NoisePick p;
  p.image = rng.below(images);
  p.t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(steps)));
  p.eps.resize(1, pixels);
  for (int k = 0; k < pixels; ++k) p.eps.data()[k] = static_cast<float>(rng.normal());
  return p;
}

}  // namespace

EmbeddingOptResult optimize_embedding(const MatF& initial, const std::vector<MatF>& images,
                                      const diffusion::DenoiserConfig& dcfg,
                                      const diffusion::DenoiserParams<float>& den,
                                      const diffusion::NoiseSchedule& schedule, const TokenMask& mask,
                                      const EmbeddingOptConfig& config) {
  if (images.empty()) throw ValidationError("embedding optimization needs at least one image");
  if (mask.size() != static_cast<std::size_t>(initial.rows())) {
    throw ValidationError("token mask length does not match the sequence length");
  }
  if (config.steps < 0 || config.batch <= 0 || !(config.lr > 0.0)) {
    throw ValidationError("embedding optimization needs steps >= 0, batch > 0 and lr > 0");
  }
  EmbeddingOptResult result;
  result.embedding = initial;
  MatF& c = result.embedding;
  AdamState<float> state;
  state.config.lr = config.lr;
  Rng rng(config.seed);
  const int pixels = static_cast<int>(images.front().cols());
  const double scale = 1.0 / config.batch;
  for (int step = 0; step < config.steps; ++step) {
    MatF grad = MatF::Zero(c.rows(), c.cols());
    double loss = 0.0;
    for (int b = 0; b < config.batch; ++b) {
      const NoisePick p = pick(rng, images.size(), schedule.steps(), pixels);
      MatF d_text;
      loss += diffusion::embedding_example_loss<float>(dcfg, den, schedule, c, images[p.image], p.eps, p.t, scale,
                                                       &d_text, nullptr);
      grad += d_text;
    }
    loss /= config.batch;
    if (!std::isfinite(loss)) throw RuntimeFailure("embedding optimization diverged");
    for (Eigen::Index i = 0; i < grad.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) grad.row(i).setZero();
    }
    adam_step<float>({&c}, {&grad}, state, config.lr);
    // Adam moves nothing where the gradient was always zero, but make the
    // frozen rows exact regardless of rounding.
    for (Eigen::Index i = 0; i < c.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) c.row(i) = initial.row(i);
    }
    result.losses.push_back({step, loss, config.lr});
  }
  return result;
}

double embedding_probe_loss(const MatF& embedding, const std::vector<MatF>& images,
                            const diffusion::DenoiserConfig& dcfg,
                            const diffusion::DenoiserParams<float>& den,
                            const diffusion::NoiseSchedule& schedule, int count, std::uint64_t seed) {
  if (images.empty()) throw ValidationError("probe loss needs at least one image");
  Rng rng(seed);
  const int pixels = static_cast<int>(images.front().cols());
  double total = 0.0;
  for (int i = 0; i < count; ++i) {
    const NoisePick p = pick(rng, images.size(), schedule.steps(), pixels);
    total += diffusion::embedding_example_loss<float>(dcfg, den, schedule, embedding, images[p.image], p.eps, p.t,
                                                      1.0, nullptr, nullptr);
  }
  return count > 0 ? total / count : 0.0;
}

}  // namespace compbind::correct
