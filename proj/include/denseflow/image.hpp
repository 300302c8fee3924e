#pragma once

#include <algorithm>
#include <atomic>
#include <bit>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "denseflow/error.hpp"

namespace denseflow {

enum class ColorSpace { Gray, RGB, CIELab };

inline int expected_channels(ColorSpace cs) { return cs == ColorSpace::Gray ? 1 : 3; }

/// Row-major interleaved float raster.
class Image {
 public:
  Image() = default;

  Image(int width, int height, ColorSpace cs, float fill = 0.0f)
      : width_(width), height_(height), channels_(expected_channels(cs)), colorspace_(cs) {
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be positive");
    data_.assign(static_cast<std::size_t>(width) * height * channels_, fill);
  }

  Image(int width, int height, ColorSpace cs, std::vector<float> data)
      : width_(width), height_(height), channels_(expected_channels(cs)), colorspace_(cs), data_(std::move(data)) {
    if (width <= 0 || height <= 0) throw Error(ErrorCode::InvalidInput, "image dimensions must be positive");
    if (data_.size() != static_cast<std::size_t>(width) * height * channels_)
      throw Error(ErrorCode::InvalidInput, "image data length does not match dimensions");
    for (float s : data_)
      if (!std::isfinite(s)) throw Error(ErrorCode::NonFiniteValue, "image sample is not finite");
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  ColorSpace colorspace() const noexcept { return colorspace_; }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t pixel_count() const noexcept { return static_cast<std::size_t>(width_) * height_; }

  float& at(int x, int y, int c = 0) noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }
  float at(int x, int y, int c = 0) const noexcept {
    return data_[(static_cast<std::size_t>(y) * width_ + x) * channels_ + c];
  }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }

  /// Bilinear sample with coordinates clamped into the domain.
  float sample_clamped(float x, float y, int c = 0) const noexcept {
    x = std::clamp(x, 0.0f, static_cast<float>(width_ - 1));
    y = std::clamp(y, 0.0f, static_cast<float>(height_ - 1));
    const int x0 = std::min(static_cast<int>(x), width_ - 1);
    const int y0 = std::min(static_cast<int>(y), height_ - 1);
    const int x1 = std::min(x0 + 1, width_ - 1);
    const int y1 = std::min(y0 + 1, height_ - 1);
    const float fx = x - x0;
    const float fy = y - y0;
    const float top = at(x0, y0, c) + fx * (at(x1, y0, c) - at(x0, y0, c));
    const float bottom = at(x0, y1, c) + fx * (at(x1, y1, c) - at(x0, y1, c));
    return top + fy * (bottom - top);
  }

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  ColorSpace colorspace_ = ColorSpace::Gray;
  std::vector<float> data_;
};

/// Dense displacement raster with a validity mask.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<float> u;
  std::vector<float> v;
  std::vector<std::uint8_t> valid;

  FlowField() = default;
  FlowField(int w, int h, float u0 = 0.0f, float v0 = 0.0f, bool is_valid = true)
      : width(w), height(h),
        u(static_cast<std::size_t>(w) * h, u0),
        v(static_cast<std::size_t>(w) * h, v0),
        valid(static_cast<std::size_t>(w) * h, is_valid ? 1 : 0) {}

  std::size_t size() const noexcept { return u.size(); }
  std::size_t index(int x, int y) const noexcept { return static_cast<std::size_t>(y) * width + x; }
  bool same_shape(const FlowField& o) const noexcept { return width == o.width && height == o.height; }
  std::size_t valid_count() const noexcept {
    return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
};

inline bool bit_identical(const FlowField& a, const FlowField& b) {
  if (!a.same_shape(b) || a.valid != b.valid) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::bit_cast<std::uint32_t>(a.u[i]) != std::bit_cast<std::uint32_t>(b.u[i])) return false;
    if (std::bit_cast<std::uint32_t>(a.v[i]) != std::bit_cast<std::uint32_t>(b.v[i])) return false;
  }
  return true;
}

// ---------------------------------------------------------------------------
// Instrumentation: number of image/flow resampling operations performed.

inline std::atomic<long>& resample_counter() {
  static std::atomic<long> counter{0};
  return counter;
}

// ---------------------------------------------------------------------------
// Color conversion (sRGB, D65 white point).

namespace detail {

constexpr double kWhiteX = 0.95047;
constexpr double kWhiteY = 1.0;
constexpr double kWhiteZ = 1.08883;
constexpr double kLabDelta = 6.0 / 29.0;

inline double srgb_to_linear(double c) {
  return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
}
inline double linear_to_srgb(double c) {
  return c <= 0.0031308 ? c * 12.92 : 1.055 * std::pow(c, 1.0 / 2.4) - 0.055;
}
inline double lab_f(double t) {
  return t > kLabDelta * kLabDelta * kLabDelta ? std::cbrt(t) : t / (3.0 * kLabDelta * kLabDelta) + 4.0 / 29.0;
}
inline double lab_f_inv(double t) {
  return t > kLabDelta ? t * t * t : 3.0 * kLabDelta * kLabDelta * (t - 4.0 / 29.0);
}

inline void rgb_to_lab(double r, double g, double b, double& L, double& A, double& B) {
  r = srgb_to_linear(r);
  g = srgb_to_linear(g);
  b = srgb_to_linear(b);
  const double x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
  const double y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
  const double z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
  const double fx = lab_f(x / kWhiteX);
  const double fy = lab_f(y / kWhiteY);
  const double fz = lab_f(z / kWhiteZ);
  L = 116.0 * fy - 16.0;
  A = 500.0 * (fx - fy);
  B = 200.0 * (fy - fz);
}

inline void lab_to_rgb(double L, double A, double B, double& r, double& g, double& b) {
  const double fy = (L + 16.0) / 116.0;
  const double x = kWhiteX * lab_f_inv(fy + A / 500.0);
  const double y = kWhiteY * lab_f_inv(fy);
  const double z = kWhiteZ * lab_f_inv(fy - B / 200.0);
  r = linear_to_srgb(3.2404542 * x - 1.5371385 * y - 0.4985314 * z);
  g = linear_to_srgb(-0.9692660 * x + 1.8760108 * y + 0.0415560 * z);
  b = linear_to_srgb(0.0556434 * x - 0.2040259 * y + 1.0572252 * z);
}

}  // namespace detail

/// RGB or Gray (samples in [0,1]) to CIELab. Gray is treated as R=G=B.
inline Image to_cielab(const Image& img) {
  if (img.colorspace() == ColorSpace::CIELab) return img;
  Image out(img.width(), img.height(), ColorSpace::CIELab);
  const auto src = img.data();
  auto dst = out.data();
  const int ch = img.channels();
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    const double r = src[p * ch];
    const double g = ch == 3 ? src[p * ch + 1] : r;
    const double b = ch == 3 ? src[p * ch + 2] : r;
    if (!std::isfinite(r) || !std::isfinite(g) || !std::isfinite(b))
      throw Error(ErrorCode::InvalidInput, "non-finite sample in color conversion");
    double L, A, B;
    detail::rgb_to_lab(r, g, b, L, A, B);
    dst[p * 3] = static_cast<float>(L);
    dst[p * 3 + 1] = static_cast<float>(A);
    dst[p * 3 + 2] = static_cast<float>(B);
  }
  return out;
}

inline Image lab_to_rgb(const Image& lab) {
  if (lab.colorspace() != ColorSpace::CIELab) throw Error(ErrorCode::InvalidInput, "expected a CIELab image");
  Image out(lab.width(), lab.height(), ColorSpace::RGB);
  const auto src = lab.data();
  auto dst = out.data();
  for (std::size_t p = 0; p < lab.pixel_count(); ++p) {
    double r, g, b;
    detail::lab_to_rgb(src[p * 3], src[p * 3 + 1], src[p * 3 + 2], r, g, b);
    dst[p * 3] = static_cast<float>(r);
    dst[p * 3 + 1] = static_cast<float>(g);
    dst[p * 3 + 2] = static_cast<float>(b);
  }
  return out;
}

/// Lightness in [0,1]; for RGB/Gray inputs this goes through CIELab.
inline Image to_gray(const Image& img) {
  if (img.colorspace() == ColorSpace::Gray) return img;
  const Image lab = to_cielab(img);
  Image out(img.width(), img.height(), ColorSpace::Gray);
  for (std::size_t p = 0; p < img.pixel_count(); ++p) out.data()[p] = lab.data()[p * 3] / 100.0f;
  return out;
}

// ---------------------------------------------------------------------------
// Sampling and filtering.

/// Bilinear sample; throws OutOfBounds outside [0,W-1]x[0,H-1].
inline float sample_bilinear(const Image& img, float x, float y, int channel = 0) {
  if (!(x >= 0.0f && y >= 0.0f && x <= img.width() - 1 && y <= img.height() - 1))
    throw Error(ErrorCode::OutOfBounds, "bilinear sample outside image domain");
  if (channel < 0 || channel >= img.channels()) throw Error(ErrorCode::OutOfBounds, "channel index out of range");
  return img.sample_clamped(x, y, channel);
}

inline std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double w = std::exp(-0.5 * i * i / (sigma * sigma));
    k[i + radius] = static_cast<float>(w);
    sum += w;
  }
  for (auto& w : k) w = static_cast<float>(w / sum);
  return k;
}

/// Separable Gaussian blur with replicated borders.
inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const auto kernel = gaussian_kernel(sigma);
  const int radius = static_cast<int>(kernel.size() / 2);
  const int w = img.width(), h = img.height(), ch = img.channels();
  Image tmp(w, h, img.colorspace());
  Image out(w, h, img.colorspace());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * img.at(std::clamp(x + k, 0, w - 1), y, c);
        tmp.at(x, y, c) = acc;
      }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (int k = -radius; k <= radius; ++k) acc += kernel[k + radius] * tmp.at(x, std::clamp(y + k, 0, h - 1), c);
        out.at(x, y, c) = acc;
      }
  return out;
}

namespace detail {

// Overlap weights for box-averaging `src_len` samples into `dst_len` bins.
struct AreaTap {
  int src;
  float weight;
};

inline std::vector<std::vector<AreaTap>> area_taps(int src_len, int dst_len) {
  std::vector<std::vector<AreaTap>> taps(dst_len);
  const double ratio = static_cast<double>(src_len) / dst_len;
  for (int i = 0; i < dst_len; ++i) {
    const double lo = i * ratio, hi = (i + 1) * ratio;
    for (int s = static_cast<int>(std::floor(lo)); s < static_cast<int>(std::ceil(hi)) && s < src_len; ++s) {
      const double overlap = std::min(hi, s + 1.0) - std::max(lo, static_cast<double>(s));
      if (overlap > 1e-12) taps[i].push_back({s, static_cast<float>(overlap / ratio)});
    }
  }
  return taps;
}

}  // namespace detail

/// Area-averaging resize to (new_w, new_h).
inline Image resize_area(const Image& img, int new_w, int new_h) {
  ++resample_counter();
  const auto tx = detail::area_taps(img.width(), new_w);
  const auto ty = detail::area_taps(img.height(), new_h);
  const int ch = img.channels();
  Image tmp(new_w, img.height(), img.colorspace());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < new_w; ++x)
      for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (const auto& t : tx[x]) acc += t.weight * img.at(t.src, y, c);
        tmp.at(x, y, c) = acc;
      }
  Image out(new_w, new_h, img.colorspace());
  for (int y = 0; y < new_h; ++y)
    for (int x = 0; x < new_w; ++x)
      for (int c = 0; c < ch; ++c) {
        float acc = 0.0f;
        for (const auto& t : ty[y]) acc += t.weight * tmp.at(x, t.src, c);
        out.at(x, y, c) = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Scale pyramid.

struct PyramidConfig {
  int min_dimension = 16;
  // Adds a second intermediate level per half-octave (scale steps of 2^-1/4).
  bool sub_sub_scales = false;
};

struct ScalePyramid {
  std::vector<Image> levels;          // level 0 is full resolution
  std::vector<double> scale_factors;  // strictly decreasing, level 0 == 1

  std::size_t size() const noexcept { return levels.size(); }
};

inline int scaled_dimension(int full, double scale) {
  return static_cast<int>(std::lround(full * scale));
}

/// Scale factors 1, 2^-1/2, 2^-1, ... (or 2^-1/4 steps) down to the last
/// level whose smaller side is still at least `min_dimension`.
inline std::vector<double> pyramid_scales(int width, int height, const PyramidConfig& cfg) {
  const double steps_per_octave = cfg.sub_sub_scales ? 4.0 : 2.0;
  std::vector<double> scales{1.0};
  for (int k = 1;; ++k) {
    const double s = std::pow(2.0, -k / steps_per_octave);
    if (std::min(scaled_dimension(width, s), scaled_dimension(height, s)) < cfg.min_dimension) break;
    scales.push_back(s);
  }
  return scales;
}

/// Every level is produced from the full-resolution image: Gaussian prefilter
/// with sigma = 0.5/scale, then area resampling.
inline ScalePyramid build_pyramid(const Image& img, const PyramidConfig& cfg = {}) {
  if (img.width() < 32 || img.height() < 32)
    throw Error(ErrorCode::InvalidInput, "pyramid input must be at least 32x32");
  ScalePyramid pyr;
  pyr.scale_factors = pyramid_scales(img.width(), img.height(), cfg);
  pyr.levels.reserve(pyr.scale_factors.size());
  pyr.levels.push_back(img);
  for (std::size_t k = 1; k < pyr.scale_factors.size(); ++k) {
    const double s = pyr.scale_factors[k];
    const Image blurred = gaussian_blur(img, 0.5 / s);
    pyr.levels.push_back(
        resize_area(blurred, scaled_dimension(img.width(), s), scaled_dimension(img.height(), s)));
  }
  return pyr;
}

}  // namespace denseflow
