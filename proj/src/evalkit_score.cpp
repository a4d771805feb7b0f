#include <algorithm>
#include <cmath>

#include "compbind/errors.hpp"
#include "compbind/evalkit/score.hpp"
#include "compbind/numkit/ops.hpp"

namespace compbind::evalkit {

namespace {

using synth::kBox;
using synth::kCanvas;

float dist2(const float* px, const synth::Rgb& c) {
  const float dr = px[0] - c.r, dg = px[1] - c.g, db = px[2] - c.b;
  return dr * dr + dg * dg + db * db;
}

void check_image(const synth::Image& image) {
  if (image.size() != static_cast<std::size_t>(synth::kPixels)) {
    throw ValidationError("image must have 16 x 16 x 3 values");
  }
  for (float v : image) {
    if (!std::isfinite(v)) throw ValidationError("image holds a non-finite value");
  }
}

}  // namespace

DetectedObject detect_half(const synth::Image& image, int half) {
  check_image(image);
  const int col0 = half * (kCanvas / 2);
  const int center = half == 0 ? synth::kLeftCenterCol : synth::kRightCenterCol;
  const int box_r0 = synth::kCenterRow - kBox / 2;
  const int box_c0 = center - kBox / 2;
  const synth::Rgb gray{synth::kBackground, synth::kBackground, synth::kBackground};
  const float thresh2 = kForegroundDistance * kForegroundDistance;

  DetectedObject det;
  std::array<int, synth::kNumColors> votes{};
  std::vector<bool> fg(kCanvas * (kCanvas / 2), false);
  for (int r = 0; r < kCanvas; ++r) {
    for (int c = 0; c < kCanvas / 2; ++c) {
      const float* px = &image[(r * kCanvas + col0 + c) * synth::kChannels];
      if (dist2(px, gray) <= thresh2) continue;
      fg[r * (kCanvas / 2) + c] = true;
      ++det.pixels;
      int best = 0;
      for (int k = 1; k < synth::kNumColors; ++k) {
        if (dist2(px, synth::kPalette[k]) < dist2(px, synth::kPalette[best])) best = k;
      }
      ++votes[best];
    }
  }
  if (det.pixels < kMinForegroundPixels) return det;
  // Lowest index wins a tied vote.
  det.color = static_cast<int>(std::max_element(votes.begin(), votes.end()) - votes.begin());

  for (int s = 0; s < synth::kNumShapes; ++s) {
    const auto& mask = synth::shape_mask(static_cast<synth::Shape>(s));
    int inter = 0, in_mask = 0;
    for (int r = 0; r < kBox; ++r) {
      for (int c = 0; c < kBox; ++c) {
        if (!mask[r * kBox + c]) continue;
        ++in_mask;
        if (fg[(box_r0 + r) * (kCanvas / 2) + (box_c0 - col0 + c)]) ++inter;
      }
    }
    const double iou = static_cast<double>(inter) / static_cast<double>(in_mask + det.pixels - inter);
    if (iou > det.iou) {
      det.iou = iou;
      det.shape = static_cast<synth::Shape>(s);
    }
  }
  if (det.iou < kMinShapeIou) det.shape.reset();
  return det;
}

CompositionScore composition_score(const synth::Image& image, const synth::SceneSpec& spec) {
  synth::validate(spec);
  check_image(image);
  CompositionScore out;
  auto match = [&](const synth::ObjectSpec& obj, int half) {
    const DetectedObject det = detect_half(image, half);
    ObjectMatch m;
    m.color = det.color && *det.color == obj.color;
    m.shape = det.shape && *det.shape == obj.shape;
    out.objects.push_back(m);
  };
  match(spec.left, 0);
  if (spec.right) match(*spec.right, 1);
  int good = 0;
  for (const auto& m : out.objects) good += m.both() ? 1 : 0;
  out.value = static_cast<double>(good) / static_cast<double>(out.objects.size());
  return out;
}

CompositionScore composition_score(const MatF& image, const synth::SceneSpec& spec) {
  if (image.size() != synth::kPixels) throw ValidationError("image must have 16 x 16 x 3 values");
  return composition_score(synth::matrix_to_image(image), spec);
}

MatD pooled_features(const std::vector<MatF>& images) {
  constexpr int cell = 4;
  constexpr int grid = kCanvas / cell;
  MatD out = MatD::Zero(static_cast<Eigen::Index>(images.size()), grid * grid * synth::kChannels);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const MatF& img = images[n];
    if (img.size() != synth::kPixels) throw ValidationError("image must have 16 x 16 x 3 values");
    for (int r = 0; r < kCanvas; ++r) {
      for (int c = 0; c < kCanvas; ++c) {
        for (int ch = 0; ch < synth::kChannels; ++ch) {
          const int f = ((r / cell) * grid + c / cell) * synth::kChannels + ch;
          out(static_cast<Eigen::Index>(n), f) += img.data()[(r * kCanvas + c) * synth::kChannels + ch];
        }
      }
    }
  }
  return out / static_cast<double>(cell * cell);
}

double fid_proxy(const std::vector<MatF>& generated, const std::vector<MatF>& reference) {
  if (static_cast<int>(generated.size()) < kMinFidImages || static_cast<int>(reference.size()) < kMinFidImages) {
    throw ValidationError("FID-proxy needs at least 16 images per side");
  }
  return frechet_gaussian_distance(fit_gaussian(pooled_features(generated)),
                                   fit_gaussian(pooled_features(reference)));
}

}  // namespace compbind::evalkit
