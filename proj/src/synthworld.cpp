#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include "compbind/errors.hpp"
#include "compbind/numkit/rng.hpp"
#include "compbind/synthworld/corpus.hpp"
#include "compbind/synthworld/scene.hpp"
#include "compbind/synthworld/vocab.hpp"

namespace compbind::synth {

// ---------------------------------------------------------------- scenes

namespace {

std::array<bool, kBox * kBox> build_mask(Shape shape) {
  std::array<bool, kBox * kBox> m{};
  for (int r = 0; r < kBox; ++r) {
    for (int c = 0; c < kBox; ++c) {
      bool on = false;
      switch (shape) {
        case Shape::Square:
          on = true;
          break;
        case Shape::Circle: {
          const double dr = r - 2.5;
          const double dc = c - 2.5;
          on = dr * dr + dc * dc <= 7.0;
          break;
        }
        case Shape::Triangle: {
          // Apex up: widths 2, 2, 4, 4, 6, 6.
          const int half = 1 + r / 2;
          on = c >= 3 - half && c < 3 + half;
          break;
        }
      }
      m[r * kBox + c] = on;
    }
  }
  return m;
}

void check_object(const ObjectSpec& o) {
  if (o.color < 0 || o.color >= kNumColors) throw ValidationError("color index out of range");
  if (static_cast<int>(o.shape) < 0 || static_cast<int>(o.shape) >= kNumShapes) {
    throw ValidationError("shape out of range");
  }
}

void draw_object(Image& img, const ObjectSpec& o, int center_col) {
  const auto& mask = shape_mask(o.shape);
  const Rgb rgb = kPalette[o.color];
  const int top = kCenterRow - kBox / 2;
  const int left = center_col - kBox / 2;
  for (int r = 0; r < kBox; ++r) {
    for (int c = 0; c < kBox; ++c) {
      if (!mask[r * kBox + c]) continue;
      const int idx = ((top + r) * kCanvas + (left + c)) * kChannels;
      img[idx + 0] = rgb.r;
      img[idx + 1] = rgb.g;
      img[idx + 2] = rgb.b;
    }
  }
}

}  // namespace

const std::array<bool, kBox * kBox>& shape_mask(Shape shape) {
  static const std::array<std::array<bool, kBox * kBox>, kNumShapes> masks = {
      build_mask(Shape::Square), build_mask(Shape::Circle), build_mask(Shape::Triangle)};
  return masks[static_cast<int>(shape)];
}

void validate(const SceneSpec& spec) {
  check_object(spec.left);
  if (spec.right) {
    check_object(*spec.right);
    if (*spec.right == spec.left) {
      throw ValidationError("the two objects may not share both shape and color");
    }
  }
}

Image render_scene(const SceneSpec& spec) {
  validate(spec);
  Image img(kPixels, kBackground);
  draw_object(img, spec.left, kLeftCenterCol);
  if (spec.right) draw_object(img, *spec.right, kRightCenterCol);
  return img;
}

std::vector<SceneSpec> all_single_object_specs() {
  std::vector<SceneSpec> out;
  for (int s = 0; s < kNumShapes; ++s) {
    for (int c = 0; c < kNumColors; ++c) out.push_back({{static_cast<Shape>(s), c}, std::nullopt});
  }
  return out;
}

std::vector<SceneSpec> all_two_object_specs() {
  const auto singles = all_single_object_specs();
  std::vector<SceneSpec> out;
  out.reserve(singles.size() * (singles.size() - 1));
  for (const auto& a : singles) {
    for (const auto& b : singles) {
      if (a.left == b.left) continue;
      out.push_back({a.left, b.left});
    }
  }
  return out;
}

SpecSplit split_two_object_specs(int heldout_count, std::uint64_t seed) {
  auto specs = all_two_object_specs();
  if (heldout_count < 0 || heldout_count > static_cast<int>(specs.size())) {
    throw ValidationError("held-out count out of range");
  }
  // Fisher-Yates with the counter-based generator.
  Rng rng(seed);
  for (std::size_t i = specs.size() - 1; i > 0; --i) {
    std::swap(specs[i], specs[rng.below(i + 1)]);
  }
  SpecSplit split;
  split.heldout.assign(specs.begin(), specs.begin() + heldout_count);
  split.rest.assign(specs.begin() + heldout_count, specs.end());
  return split;
}

SceneSpec swap_colors(const SceneSpec& spec) {
  if (!spec.right) throw ValidationError("swap_colors needs a two-object spec");
  SceneSpec out = spec;
  std::swap(out.left.color, out.right->color);
  return out;
}

MatF image_to_matrix(const Image& img) {
  MatF m(1, static_cast<Eigen::Index>(img.size()));
  std::copy(img.begin(), img.end(), m.data());
  return m;
}

Image matrix_to_image(const MatF& m) { return Image(m.data(), m.data() + m.size()); }

// ---------------------------------------------------------------- vocabulary

std::string_view token_text(TokenId id) {
  switch (id) {
    case kPad:
      return "<pad>";
    case kBos:
      return "<bos>";
    case kEos:
      return "<eos>";
    case kArticle:
      return "a";
    case kAnd:
      return "and";
    default:
      break;
  }
  if (id >= kFirstColor && id < kFirstShape) return kColorNames[id - kFirstColor];
  if (id >= kFirstShape && id < kVocabSize) return kShapeNames[id - kFirstShape];
  throw ValidationError("token id " + std::to_string(id) + " outside the vocabulary");
}

TokenId word_token(std::string_view word) {
  for (int id = 0; id < kVocabSize; ++id) {
    if (token_text(static_cast<TokenId>(id)) == word) return static_cast<TokenId>(id);
  }
  throw ValidationError("word '" + std::string(word) + "' is not in the vocabulary");
}

std::vector<TokenId> tokenize(std::string_view text) {
  std::vector<TokenId> out{kBos};
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(word_token(word));
  out.push_back(kEos);
  return out;
}

std::string detokenize(const std::vector<TokenId>& tokens) {
  std::string out;
  for (TokenId t : tokens) {
    if (t == kBos || t == kEos || t == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token_text(t);
  }
  return out;
}

std::string prompt_text(const SceneSpec& spec) {
  validate(spec);
  auto phrase = [](const ObjectSpec& o) {
    return "a " + std::string(kColorNames[o.color]) + " " +
           std::string(kShapeNames[static_cast<int>(o.shape)]);
  };
  std::string s = phrase(spec.left);
  if (spec.right) s += " and " + phrase(*spec.right);
  return s;
}

PromptTemplate make_prompt(const SceneSpec& spec) {
  PromptTemplate p;
  p.tokens = tokenize(prompt_text(spec));
  p.slots.a1 = 2;
  p.slots.o1 = 3;
  if (spec.right) {
    p.slots.a2 = 6;
    p.slots.o2 = 7;
  }
  return p;
}

void validate(const PromptTemplate& prompt) {
  const auto n = prompt.tokens.size();
  for (TokenId t : prompt.tokens) {
    if (t >= kVocabSize) throw ValidationError("prompt token outside the vocabulary");
  }
  const auto& s = prompt.slots;
  auto in_range = [n](std::uint16_t v) { return v == kAbsentSlot || v < n; };
  if (!in_range(s.a1) || !in_range(s.o1) || !in_range(s.a2) || !in_range(s.o2)) {
    throw ValidationError("prompt slot index outside the sequence");
  }
  if (s.complete() && !(s.a1 < s.o1 && s.o1 < s.a2 && s.a2 < s.o2)) {
    throw ValidationError("prompt slots must satisfy a1 < o1 < a2 < o2");
  }
}

SceneSpec parse_prompt(const std::vector<TokenId>& tokens) {
  auto color_of = [](TokenId t) {
    if (t < kFirstColor || t >= kFirstShape) throw ValidationError("expected a color token");
    return static_cast<int>(t - kFirstColor);
  };
  auto shape_of = [](TokenId t) {
    if (t < kFirstShape || t >= kVocabSize) throw ValidationError("expected a shape token");
    return static_cast<Shape>(t - kFirstShape);
  };
  const bool single = tokens.size() == 5;
  const bool pair = tokens.size() == 9;
  if ((!single && !pair) || tokens.front() != kBos || tokens.back() != kEos ||
      tokens[1] != kArticle) {
    throw ValidationError("tokens are not a scene caption");
  }
  SceneSpec spec;
  spec.left = {shape_of(tokens[3]), color_of(tokens[2])};
  if (pair) {
    if (tokens[4] != kAnd || tokens[5] != kArticle) throw ValidationError("tokens are not a scene caption");
    spec.right = ObjectSpec{shape_of(tokens[7]), color_of(tokens[6])};
  }
  validate(spec);
  return spec;
}

// ---------------------------------------------------------------- corpus

void validate(const CorpusConfig& c) {
  if (c.n_samples <= 0) throw ValidationError("corpus.n_samples must be positive");
  if (!(c.corruption_prob >= 0.0 && c.corruption_prob <= 1.0)) {
    throw ValidationError("corpus.corruption_prob must lie in [0, 1]");
  }
  if (!(c.single_object_fraction >= 0.0 && c.single_object_fraction <= 1.0)) {
    throw ValidationError("corpus.single_object_fraction must lie in [0, 1]");
  }
  if (c.holdout_count < 0 || c.holdout_count >= 24 * 23) {
    throw ValidationError("corpus.holdout_count out of range");
  }
}

std::int64_t Corpus::corrupted_count() const {
  return std::count_if(samples.begin(), samples.end(), [](const Sample& s) { return s.corrupted; });
}

std::int64_t Corpus::two_object_count() const {
  return std::count_if(samples.begin(), samples.end(),
                       [](const Sample& s) { return s.truth.two_objects(); });
}

Corpus gen_corpus(const CorpusConfig& config) {
  validate(config);
  const auto singles = all_single_object_specs();
  const auto pairs = split_two_object_specs(config.holdout_count, config.holdout_seed).rest;
  const Rng root(config.seed);
  Corpus corpus;
  corpus.samples.reserve(static_cast<std::size_t>(config.n_samples));
  for (std::int64_t i = 0; i < config.n_samples; ++i) {
    Rng rng = root.derive(static_cast<std::uint64_t>(i));
    Sample s;
    if (rng.bernoulli(config.single_object_fraction)) {
      s.truth = singles[rng.below(singles.size())];
    } else {
      s.truth = pairs[rng.below(pairs.size())];
    }
    s.image = render_scene(s.truth);
    SceneSpec caption = s.truth;
    if (s.truth.two_objects() && rng.bernoulli(config.corruption_prob)) {
      caption = swap_colors(s.truth);
      s.corrupted = true;
    }
    s.prompt = make_prompt(caption);
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

namespace {

static_assert(std::endian::native == std::endian::little, "CBD1 I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw RuntimeFailure("unexpected end of dataset file");
  return v;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open dataset file for writing: " + path.string());
  out.write("CBD1", 4);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(corpus.samples.size()));
  put<std::uint32_t>(out, kCanvas);
  put<std::uint32_t>(out, kCanvas);
  put<std::uint32_t>(out, kChannels);
  for (const auto& s : corpus.samples) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(s.prompt.tokens.size()));
    for (TokenId t : s.prompt.tokens) put<std::uint16_t>(out, t);
    for (std::uint16_t slot : s.prompt.slots.as_array()) put<std::uint16_t>(out, slot);
    out.write(reinterpret_cast<const char*>(s.image.data()),
              static_cast<std::streamsize>(s.image.size() * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("failed writing dataset file: " + path.string());
}

Corpus read_corpus(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open dataset file: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CBD1", 4) != 0) throw ValidationError("not a CBD1 dataset: " + path.string());
  const auto count = get<std::uint32_t>(in);
  const auto h = get<std::uint32_t>(in);
  const auto w = get<std::uint32_t>(in);
  const auto ch = get<std::uint32_t>(in);
  if (h != kCanvas || w != kCanvas || ch != kChannels) {
    throw ValidationError("dataset image geometry does not match 16x16x3");
  }
  Corpus corpus;
  corpus.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s;
    const auto n = get<std::uint16_t>(in);
    s.prompt.tokens.resize(n);
    for (auto& t : s.prompt.tokens) t = get<std::uint16_t>(in);
    s.prompt.slots.a1 = get<std::uint16_t>(in);
    s.prompt.slots.o1 = get<std::uint16_t>(in);
    s.prompt.slots.a2 = get<std::uint16_t>(in);
    s.prompt.slots.o2 = get<std::uint16_t>(in);
    validate(s.prompt);
    s.image.resize(kPixels);
    in.read(reinterpret_cast<char*>(s.image.data()), kPixels * sizeof(float));
    if (!in) throw RuntimeFailure("unexpected end of dataset file");
    s.truth = parse_prompt(s.prompt.tokens);
    corpus.samples.push_back(std::move(s));
  }
  return corpus;
}

std::string corpus_manifest(const CorpusConfig& c, const Corpus& corpus) {
  std::ostringstream out;
  out << "corpus.n_samples=" << c.n_samples << '\n'
      << "corpus.corruption_prob=" << c.corruption_prob << '\n'
      << "corpus.single_object_fraction=" << c.single_object_fraction << '\n'
      << "corpus.holdout_count=" << c.holdout_count << '\n'
      << "corpus.holdout_seed=" << c.holdout_seed << '\n'
      << "corpus.seed=" << c.seed << '\n'
      << "two_object_samples=" << corpus.two_object_count() << '\n'
      << "corrupted_samples=" << corpus.corrupted_count() << '\n';
  return out.str();
}

}  // namespace compbind::synth
