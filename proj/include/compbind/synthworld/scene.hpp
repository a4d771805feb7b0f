#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "compbind/numkit/tensor.hpp"

namespace compbind::synth {

inline constexpr int kCanvas = 16;
inline constexpr int kChannels = 3;
inline constexpr int kPixels = kCanvas * kCanvas * kChannels;
inline constexpr int kBox = 6;
inline constexpr float kBackground = 0.5f;
// Object centers as (row, col); the 6x6 box spans center - 3 .. center + 2.
inline constexpr int kCenterRow = 8;
inline constexpr int kLeftCenterCol = 4;
inline constexpr int kRightCenterCol = 12;

inline constexpr int kNumColors = 8;
inline constexpr int kNumShapes = 3;

enum class Shape : std::uint8_t { Square = 0, Circle = 1, Triangle = 2 };

struct Rgb {
  float r, g, b;
};

// Six saturated cube corners plus two mid-tones; none is closer than 0.5 to
// another entry or to the gray background.
inline constexpr std::array<Rgb, kNumColors> kPalette = {{
    {1.0f, 0.0f, 0.0f},  // red
    {0.0f, 1.0f, 0.0f},  // green
    {0.0f, 0.0f, 1.0f},  // blue
    {1.0f, 1.0f, 0.0f},  // yellow
    {0.0f, 1.0f, 1.0f},  // cyan
    {1.0f, 0.0f, 1.0f},  // magenta
    {1.0f, 0.5f, 0.0f},  // orange
    {0.5f, 0.0f, 1.0f},  // purple
}};

inline constexpr std::array<std::string_view, kNumColors> kColorNames = {
    "red", "green", "blue", "yellow", "cyan", "magenta", "orange", "purple"};
inline constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"square", "circle",
                                                                         "triangle"};

struct ObjectSpec {
  Shape shape = Shape::Square;
  int color = 0;
  bool operator==(const ObjectSpec&) const = default;
};

// Left object is always present; the right one is absent for single-object
// scenes. Two objects never agree in both shape and color.
struct SceneSpec {
  ObjectSpec left;
  std::optional<ObjectSpec> right;

  bool two_objects() const { return right.has_value(); }
  bool operator==(const SceneSpec&) const = default;
};

void validate(const SceneSpec& spec);

// 16 x 16 x 3, row-major HWC, values in [0, 1].
using Image = std::vector<float>;

// 6x6 boolean template for a shape, row-major.
const std::array<bool, kBox * kBox>& shape_mask(Shape shape);

Image render_scene(const SceneSpec& spec);

// All ordered pairs of distinct objects (24 x 23) in a fixed order.
std::vector<SceneSpec> all_two_object_specs();
std::vector<SceneSpec> all_single_object_specs();

// Deterministic split of the two-object specs: `count` held-out evaluation
// specs and a disjoint remainder.
struct SpecSplit {
  std::vector<SceneSpec> heldout;
  std::vector<SceneSpec> rest;
};
SpecSplit split_two_object_specs(int heldout_count, std::uint64_t seed);

// The same spec with colors exchanged between the two objects.
SceneSpec swap_colors(const SceneSpec& spec);

MatF image_to_matrix(const Image& img);  // 1 x 768
Image matrix_to_image(const MatF& m);

}  // namespace compbind::synth
