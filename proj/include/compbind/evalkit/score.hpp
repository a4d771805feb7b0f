#pragma once

#include <array>
#include <optional>
#include <vector>

#include "compbind/numkit/tensor.hpp"
#include "compbind/synthworld/scene.hpp"

namespace compbind::evalkit {

// Detector thresholds.
inline constexpr float kForegroundDistance = 0.15f;  // RGB distance from the gray background
inline constexpr int kMinForegroundPixels = 8;
inline constexpr double kMinShapeIou = 0.6;

struct DetectedObject {
  int pixels = 0;             // foreground pixels in the half
  std::optional<int> color;   // majority nearest-palette color
  std::optional<synth::Shape> shape;
  double iou = 0.0;           // best template IoU
};

struct ObjectMatch {
  bool color = false;
  bool shape = false;
  bool both() const { return color && shape; }
};

struct CompositionScore {
  double value = 0.0;
  std::vector<ObjectMatch> objects;  // left, then right
};

// Looks at one half of the canvas (0 = left, 1 = right).
DetectedObject detect_half(const synth::Image& image, int half);

// Fraction of the scene spec's objects whose color and shape both match what the
// detector finds in the corresponding half. Throws ValidationError on a
// malformed image.
CompositionScore composition_score(const synth::Image& image, const synth::SceneSpec& spec);
CompositionScore composition_score(const MatF& image, const synth::SceneSpec& spec);

// 48-dim feature: 4x4 average pooling of each channel.
MatD pooled_features(const std::vector<MatF>& images);

inline constexpr int kMinFidImages = 16;

// Frechet distance between Gaussian fits of pooled features. Throws
// ValidationError with fewer than 16 images on either side.
double fid_proxy(const std::vector<MatF>& generated, const std::vector<MatF>& reference);

}  // namespace compbind::evalkit
