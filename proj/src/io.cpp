#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <png.h>

#include "compbind/errors.hpp"
#include "compbind/io/checkpoint.hpp"
#include "compbind/io/png.hpp"

namespace compbind::io {

static_assert(std::endian::native == std::endian::little, "CKPT I/O assumes a little-endian host");

namespace {

template <typename T>
void write_le(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw ValidationError("truncated checkpoint");
  return v;
}

}  // namespace

// ---------------------------------------------------------------- checkpoint

void Checkpoint::put(const std::string& name, Tensor t) {
  if (name.size() > 0xFFFF) throw ValidationError("checkpoint entry name too long");
  entries_.insert_or_assign(name, std::move(t));
}

void Checkpoint::put_scalar(const std::string& name, double value) {
  put(name, Tensor::scalar(static_cast<float>(value)));
}

void Checkpoint::put_matrix(const std::string& name, const MatF& m) {
  put(name, Tensor::from_matrix(m));
}

const Tensor& Checkpoint::get(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw ValidationError("checkpoint has no entry '" + name + "'");
  return it->second;
}

double Checkpoint::get_scalar(const std::string& name) const {
  const Tensor& t = get(name);
  if (t.size() != 1) throw ValidationError("checkpoint entry '" + name + "' is not a scalar");
  return t[0];
}

MatF Checkpoint::get_matrix(const std::string& name) const { return get(name).to_matrix(); }

void Checkpoint::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot open checkpoint for writing: " + path.string());
  out.write("CKPT", 4);
  write_le<std::uint32_t>(out, kVersion);
  write_le<std::uint32_t>(out, static_cast<std::uint32_t>(entries_.size()));
  for (const auto& [name, t] : entries_) {
    write_le<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.dims()) write_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
    out.write(reinterpret_cast<const char*>(t.data().data()),
              static_cast<std::streamsize>(t.size() * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "CKPT", 4) != 0) throw ValidationError("not a CKPT file: " + path.string());
  const auto version = read_le<std::uint32_t>(in);
  if (version != kVersion) throw ValidationError("unsupported checkpoint version");
  const auto count = read_le<std::uint32_t>(in);
  Checkpoint ck;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = read_le<std::uint16_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    const auto rank = read_le<std::uint8_t>(in);
    std::vector<std::size_t> dims(rank);
    for (auto& d : dims) d = read_le<std::uint32_t>(in);
    std::vector<float> data(element_count(dims));
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!in) throw ValidationError("truncated checkpoint: " + path.string());
    if (rank == 0) {
      ck.put(name, Tensor::scalar(data[0]));
    } else {
      ck.put(name, Tensor(std::move(dims), std::move(data)));
    }
  }
  return ck;
}

std::string fnv1a_hex(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string file_hash(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open for hashing: " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return fnv1a_hex(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------- PNG

namespace {

unsigned char to_byte(float v) {
  const float c = std::clamp(v, 0.0f, 1.0f);
  return static_cast<unsigned char>(std::lround(255.0f * c));
}

}  // namespace

void write_png(const std::filesystem::path& path, int width, int height,
               const std::vector<float>& rgb) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width * height * 3)) {
    throw ValidationError("write_png: pixel buffer does not match the geometry");
  }
  std::vector<unsigned char> bytes(rgb.size());
  std::transform(rgb.begin(), rgb.end(), bytes.begin(), to_byte);
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    const std::string why = image.message;
    png_image_free(&image);
    throw RuntimeFailure("failed writing PNG " + path.string() + ": " + why);
  }
}

std::vector<float> upscale(const std::vector<float>& rgb, int width, int height, int factor) {
  std::vector<float> out(static_cast<std::size_t>(width * factor * height * factor * 3));
  for (int y = 0; y < height * factor; ++y) {
    for (int x = 0; x < width * factor; ++x) {
      for (int c = 0; c < 3; ++c) {
        out[(y * width * factor + x) * 3 + c] = rgb[((y / factor) * width + x / factor) * 3 + c];
      }
    }
  }
  return out;
}

void write_heatmap_png(const std::filesystem::path& path, const MatD& values, int cell) {
  const int rows = static_cast<int>(values.rows());
  const int cols = static_cast<int>(values.cols());
  const double mx = values.size() ? values.maxCoeff() : 0.0;
  std::vector<float> small(static_cast<std::size_t>(rows * cols * 3));
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const float t = mx > 0 ? static_cast<float>(std::max(values(r, c), 0.0) / mx) : 0.0f;
      float* px = &small[(r * cols + c) * 3];
      px[0] = 1.0f;
      px[1] = 1.0f - t;
      px[2] = 1.0f - t;
    }
  }
  write_png(path, cols * cell, rows * cell, upscale(small, cols, rows, cell));
}

namespace {

constexpr std::array<std::array<float, 3>, 4> kSeriesColors = {
    {{0.85f, 0.2f, 0.2f}, {0.2f, 0.35f, 0.85f}, {0.2f, 0.7f, 0.3f}, {0.6f, 0.3f, 0.7f}}};

struct Canvas {
  int w, h;
  std::vector<float> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_ * h_ * 3), 1.0f) {}
  void set(int x, int y, const std::array<float, 3>& c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::copy(c.begin(), c.end(), &px[(y * w + x) * 3]);
  }
  void axes() {
    for (int x = 0; x < w; ++x) set(x, h - 1, {0, 0, 0});
    for (int y = 0; y < h; ++y) set(0, y, {0, 0, 0});
  }
};

std::pair<double, double> value_range(const std::vector<std::vector<double>>& series) {
  double lo = 0.0;
  double hi = 0.0;
  for (const auto& s : series) {
    for (double v : s) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  if (hi - lo < 1e-12) hi = lo + 1.0;
  return {lo, hi};
}

}  // namespace

void write_bar_chart_png(const std::filesystem::path& path,
                         const std::vector<std::vector<double>>& series, int width, int height) {
  Canvas cv(width, height);
  const auto [lo, hi] = value_range(series);
  std::size_t bins = 0;
  for (const auto& s : series) bins = std::max(bins, s.size());
  if (bins > 0 && !series.empty()) {
    const int group = width / static_cast<int>(bins);
    const int bar = std::max(1, group / static_cast<int>(series.size() + 1));
    for (std::size_t si = 0; si < series.size(); ++si) {
      for (std::size_t b = 0; b < series[si].size(); ++b) {
        const int top = height - 1 - static_cast<int>((series[si][b] - lo) / (hi - lo) * (height - 2));
        const int x0 = static_cast<int>(b) * group + static_cast<int>(si) * bar + bar / 2;
        for (int x = x0; x < x0 + bar; ++x) {
          for (int y = top; y < height - 1; ++y) cv.set(x, y, kSeriesColors[si % kSeriesColors.size()]);
        }
      }
    }
  }
  cv.axes();
  write_png(path, width, height, cv.px);
}

void write_line_chart_png(const std::filesystem::path& path,
                          const std::vector<std::vector<double>>& series, int width, int height) {
  Canvas cv(width, height);
  const auto [lo, hi] = value_range(series);
  for (std::size_t si = 0; si < series.size(); ++si) {
    const auto& s = series[si];
    if (s.empty()) continue;
    auto to_xy = [&](std::size_t i) {
      const double fx = s.size() > 1 ? static_cast<double>(i) / static_cast<double>(s.size() - 1) : 0.5;
      return std::pair<int, int>{static_cast<int>(fx * (width - 3)) + 1,
                                 height - 2 - static_cast<int>((s[i] - lo) / (hi - lo) * (height - 3))};
    };
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
      auto [x0, y0] = to_xy(i);
      auto [x1, y1] = to_xy(i + 1);
      const int steps = std::max(std::abs(x1 - x0), std::abs(y1 - y0)) + 1;
      for (int k = 0; k <= steps; ++k) {
        cv.set(x0 + (x1 - x0) * k / steps, y0 + (y1 - y0) * k / steps,
               kSeriesColors[si % kSeriesColors.size()]);
      }
    }
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto [x, y] = to_xy(i);
      for (int dx = -2; dx <= 2; ++dx) {
        for (int dy = -2; dy <= 2; ++dy) cv.set(x + dx, y + dy, kSeriesColors[si % kSeriesColors.size()]);
      }
    }
  }
  cv.axes();
  write_png(path, width, height, cv.px);
}

}  // namespace compbind::io
