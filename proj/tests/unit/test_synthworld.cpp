#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "compbind/errors.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/synthworld/corpus.hpp"
#include "compbind/synthworld/scene.hpp"
#include "compbind/synthworld/vocab.hpp"

using namespace compbind;
using namespace compbind::synth;

namespace {

int color_pixels(const Image& img, int half, const Rgb& c) {
  int n = 0;
  for (int r = 0; r < kCanvas; ++r) {
    for (int col = half * 8; col < half * 8 + 8; ++col) {
      const float* px = &img[(r * kCanvas + col) * 3];
      if (px[0] == c.r && px[1] == c.g && px[2] == c.b) ++n;
    }
  }
  return n;
}

std::filesystem::path temp_path(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "compbind_unit";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_SUITE("synthworld") {

TEST_CASE("red square left, blue circle right") {
  SceneSpec s{{Shape::Square, 0}, ObjectSpec{Shape::Circle, 2}};
  const Image img = render_scene(s);
  CHECK(color_pixels(img, 0, kPalette[0]) == 36);
  CHECK(color_pixels(img, 1, kPalette[0]) == 0);
  CHECK(color_pixels(img, 1, kPalette[2]) == 24);
  // The red pixels form exactly the 6x6 box around (8, 4).
  for (int r = 0; r < kCanvas; ++r) {
    for (int c = 0; c < 8; ++c) {
      const float* px = &img[(r * kCanvas + c) * 3];
      const bool inside = r >= 5 && r < 11 && c >= 1 && c < 7;
      CHECK((px[0] == 1.0f && px[1] == 0.0f) == inside);
    }
  }
  CHECK(render_scene(s) == img);
}

TEST_CASE("every shape and color renders at least 12 pixels in its half") {
  for (const auto& spec : all_single_object_specs()) {
    const Image img = render_scene(spec);
    CHECK(color_pixels(img, 0, kPalette[spec.left.color]) >= 12);
  }
  CHECK(all_single_object_specs().size() == 24);
}

TEST_CASE("palette entries are separated from each other and from gray") {
  const Rgb gray{kBackground, kBackground, kBackground};
  auto d = [](const Rgb& a, const Rgb& b) {
    return std::sqrt((a.r - b.r) * (a.r - b.r) + (a.g - b.g) * (a.g - b.g) + (a.b - b.b) * (a.b - b.b));
  };
  for (int i = 0; i < kNumColors; ++i) {
    CHECK(d(kPalette[i], gray) >= 0.5f);
    for (int j = i + 1; j < kNumColors; ++j) CHECK(d(kPalette[i], kPalette[j]) >= 0.5f);
  }
}

TEST_CASE("two-object enumeration and validation") {
  const auto specs = all_two_object_specs();
  CHECK(specs.size() == 552);
  std::set<std::string> unique;
  for (const auto& s : specs) {
    CHECK(s.left != *s.right);
    unique.insert(prompt_text(s));
  }
  CHECK(unique.size() == 552);
  SceneSpec bad{{Shape::Square, 1}, ObjectSpec{Shape::Square, 1}};
  CHECK_THROWS_AS(validate(bad), ValidationError);
}

TEST_CASE("prompt template for a two-object spec") {
  SceneSpec s{{Shape::Square, 0}, ObjectSpec{Shape::Circle, 2}};
  const auto p = make_prompt(s);
  const std::vector<TokenId> expect{kBos, kArticle, word_token("red"), word_token("square"), kAnd, kArticle,
                                    word_token("blue"), word_token("circle"), kEos};
  CHECK(p.tokens == expect);
  CHECK(p.slots == Slots{2, 3, 6, 7});
  CHECK(prompt_text(s) == "a red square and a blue circle");
}

TEST_CASE("single-object prompt has only the first slots") {
  SceneSpec s{{Shape::Triangle, 4}, std::nullopt};
  const auto p = make_prompt(s);
  CHECK(p.length() == 5);
  CHECK(p.slots.a1 == 2);
  CHECK(p.slots.o1 == 3);
  CHECK(p.slots.a2 == kAbsentSlot);
  CHECK(p.slots.o2 == kAbsentSlot);
  CHECK_FALSE(p.slots.complete());
}

TEST_CASE("tokenize round trip over all two-object prompts") {
  for (const auto& s : all_two_object_specs()) {
    const std::string text = prompt_text(s);
    CHECK(detokenize(tokenize(text)) == text);
    CHECK(parse_prompt(make_prompt(s).tokens) == s);
  }
  CHECK_THROWS_AS(tokenize("a violet square"), ValidationError);
}

TEST_CASE("corpus with no corruption scores 1.0 everywhere") {
  CorpusConfig c;
  c.n_samples = 400;
  c.corruption_prob = 0.0;
  const auto corpus = gen_corpus(c);
  CHECK(corpus.corrupted_count() == 0);
  for (const auto& s : corpus.samples) {
    CHECK(evalkit::composition_score(s.image, parse_prompt(s.prompt.tokens)).value == 1.0);
  }
}

TEST_CASE("corpus with full corruption never scores 1.0 on two-object pairs") {
  CorpusConfig c;
  c.n_samples = 400;
  c.corruption_prob = 1.0;
  const auto corpus = gen_corpus(c);
  int two = 0;
  for (const auto& s : corpus.samples) {
    if (!s.truth.two_objects()) continue;
    const std::string caption = prompt_text(parse_prompt(s.prompt.tokens));
    if (s.truth.left.color == s.truth.right->color) {
      // A color swap cannot change a same-color caption.
      CHECK(caption == prompt_text(s.truth));
      continue;
    }
    ++two;
    CHECK(evalkit::composition_score(s.image, parse_prompt(s.prompt.tokens)).value < 1.0);
  }
  CHECK(two > 0);
}

TEST_CASE("corrupted fraction is near p") {
  CorpusConfig c;
  c.n_samples = 10000;
  c.corruption_prob = 0.5;
  c.single_object_fraction = 0.0;
  const auto corpus = gen_corpus(c);
  const double frac = static_cast<double>(corpus.corrupted_count()) / corpus.two_object_count();
  CHECK(frac == doctest::Approx(0.5).epsilon(0.04));
}

TEST_CASE("corpus generation is deterministic and honours the hold-out") {
  CorpusConfig c;
  c.n_samples = 300;
  c.holdout_count = 64;
  const auto a = gen_corpus(c);
  const auto b = gen_corpus(c);
  REQUIRE(a.samples.size() == b.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].prompt == b.samples[i].prompt);
  }
  const auto split = split_two_object_specs(64, c.holdout_seed);
  CHECK(split.heldout.size() == 64);
  CHECK(split.rest.size() == 552 - 64);
  std::set<std::string> held;
  for (const auto& s : split.heldout) held.insert(prompt_text(s));
  for (const auto& s : a.samples) CHECK(held.count(prompt_text(s.truth)) == 0);
}

TEST_CASE("dataset file round trip") {
  CorpusConfig c;
  c.n_samples = 50;
  const auto corpus = gen_corpus(c);
  const auto path = temp_path("corpus.cbd");
  write_corpus(corpus, path);
  const auto back = read_corpus(path);
  REQUIRE(back.samples.size() == corpus.samples.size());
  for (std::size_t i = 0; i < back.samples.size(); ++i) {
    CHECK(back.samples[i].prompt == corpus.samples[i].prompt);
    CHECK(back.samples[i].image == corpus.samples[i].image);
  }
  std::ifstream in(path, std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "CBD1");
  CHECK_THROWS(read_corpus(temp_path("missing.cbd")));
}

TEST_CASE("invalid corpus configs are rejected") {
  CorpusConfig c;
  c.corruption_prob = 1.5;
  CHECK_THROWS_AS(gen_corpus(c), ValidationError);
  c.corruption_prob = 0.5;
  c.n_samples = 0;
  CHECK_THROWS_AS(gen_corpus(c), ValidationError);
}

}  // TEST_SUITE
