#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <numbers>
#include <vector>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"
#include "denseflow/parallel.hpp"

namespace denseflow {

// ---------------------------------------------------------------------------
// Census transform over the three CIELab channels.
//
// Neighbors are enumerated in raster order (dy = -R..R, dx = -R..R, center
// skipped). Bit `c * kNeighbors + k` is set iff neighbor k of channel c is
// strictly greater than the center sample of that channel.

template <int Radius = 3>
struct CensusDescriptor {
  static constexpr int kRadius = Radius;
  static constexpr int kNeighbors = (2 * Radius + 1) * (2 * Radius + 1) - 1;
  static constexpr int kBits = 3 * kNeighbors;

  std::bitset<kBits> bits;

  friend bool operator==(const CensusDescriptor&, const CensusDescriptor&) = default;
};

template <int Radius>
int census_distance(const CensusDescriptor<Radius>& a, const CensusDescriptor<Radius>& b) {
  return static_cast<int>((a.bits ^ b.bits).count());
}

/// Sub-pixel positions are sampled bilinearly with replicate-clamped borders.
template <int Radius = 3>
CensusDescriptor<Radius> census_at(const Image& lab, float x, float y) {
  if (lab.channels() != 3) throw Error(ErrorCode::InvalidInput, "census needs a 3-channel CIELab image");
  CensusDescriptor<Radius> d;
  for (int c = 0; c < 3; ++c) {
    const float center = lab.sample_clamped(x, y, c);
    int k = 0;
    for (int dy = -Radius; dy <= Radius; ++dy)
      for (int dx = -Radius; dx <= Radius; ++dx) {
        if (dx == 0 && dy == 0) continue;
        if (lab.sample_clamped(x + dx, y + dy, c) > center) d.bits.set(c * CensusDescriptor<Radius>::kNeighbors + k);
        ++k;
      }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dense SIFT-like descriptor: fixed scale, no orientation normalization.

inline constexpr int kSiftLength = 128;
inline constexpr int kDefaultSiftRadius = 8;
using SiftDescriptor = std::array<float, kSiftLength>;

namespace detail {

// Central-difference gradient at an integer pixel, indices clamped.
inline void gradient_at(const Image& gray, int x, int y, float& gx, float& gy) {
  const int w = gray.width(), h = gray.height();
  x = std::clamp(x, 0, w - 1);
  y = std::clamp(y, 0, h - 1);
  gx = 0.5f * (gray.at(std::min(x + 1, w - 1), y) - gray.at(std::max(x - 1, 0), y));
  gy = 0.5f * (gray.at(x, std::min(y + 1, h - 1)) - gray.at(x, std::max(y - 1, 0)));
}

// Spatial binning tables for a (2r+1)^2 patch: per-offset cell index and
// fractional weight, and the Gaussian window (sigma = r).
struct SiftLayout {
  int radius = 0;
  std::vector<int> cell0;
  std::vector<float> cell_frac;
  std::vector<float> window;

  explicit SiftLayout(int r) : radius(r), cell0(2 * r + 1), cell_frac(2 * r + 1), window((2 * r + 1) * (2 * r + 1)) {
    const float cell = (2.0f * r + 1.0f) / 4.0f;
    for (int d = -r; d <= r; ++d) {
      const float c = (d + r + 0.5f) / cell - 0.5f;
      cell0[d + r] = static_cast<int>(std::floor(c));
      cell_frac[d + r] = c - std::floor(c);
    }
    const float sigma = static_cast<float>(r);
    for (int dy = -r; dy <= r; ++dy)
      for (int dx = -r; dx <= r; ++dx)
        window[(dy + r) * (2 * r + 1) + dx + r] = std::exp(-(dx * dx + dy * dy) / (2.0f * sigma * sigma));
  }
};

// Gradient magnitude and continuous orientation bin in [0, 8).
inline void sift_polar(float gx, float gy, float& mag, float& obin) {
  mag = std::sqrt(gx * gx + gy * gy);
  float theta = std::atan2(gy, gx);
  if (theta < 0.0f) theta += 2.0f * std::numbers::pi_v<float>;
  obin = theta * (8.0f / (2.0f * std::numbers::pi_v<float>));
  if (obin >= 8.0f) obin -= 8.0f;
}

// Adds one gradient sample at patch offset (dx, dy) into the 4x4x8
// histogram with trilinear weights.
inline void sift_accumulate(SiftDescriptor& hist, const SiftLayout& layout, int dx, int dy, float mag, float obin) {
  if (mag <= 0.0f) return;
  const int r = layout.radius;
  const float weight = mag * layout.window[(dy + r) * (2 * r + 1) + dx + r];
  const int x0 = layout.cell0[dx + r], y0 = layout.cell0[dy + r];
  const float fx = layout.cell_frac[dx + r], fy = layout.cell_frac[dy + r];
  const int o0 = static_cast<int>(obin);
  const float fo = obin - o0;
  for (int iy = 0; iy < 2; ++iy) {
    const int yy = y0 + iy;
    if (yy < 0 || yy > 3) continue;
    const float wy = iy ? fy : 1.0f - fy;
    for (int ix = 0; ix < 2; ++ix) {
      const int xx = x0 + ix;
      if (xx < 0 || xx > 3) continue;
      const float wxy = weight * wy * (ix ? fx : 1.0f - fx);
      float* bins = &hist[(yy * 4 + xx) * 8];
      bins[o0] += wxy * (1.0f - fo);
      if (fo > 0.0f) bins[(o0 + 1) & 7] += wxy * fo;
    }
  }
}

// Normalize, then clamp at 0.2 and renormalize. One clamp pass can push
// bins back above 0.2, so repeat until none exceed it (needs >= 25 nonzero
// bins to be reachable; otherwise stop after a fixed number of passes).
inline void sift_normalize(SiftDescriptor& d) {
  auto rescale = [&d] {
    double norm = 0.0;
    for (float v : d) norm += static_cast<double>(v) * v;
    if (norm <= 0.0) return false;
    norm = std::sqrt(norm);
    for (float& v : d) v = static_cast<float>(v / norm);
    return true;
  };
  if (!rescale()) {
    d.fill(0.0f);
    return;
  }
  for (int pass = 0; pass < 32; ++pass) {
    if (*std::max_element(d.begin(), d.end()) <= 0.2f + 1e-4f) break;
    for (float& v : d) v = std::min(v, 0.2f);
    rescale();
  }
}

}  // namespace detail

/// 4x4 spatial cells x 8 orientations over a (2r+1)^2 patch, Gaussian
/// weighted (sigma = r), L2 normalized, clamped at 0.2, renormalized.
/// Gradients at sub-pixel positions are bilinear blends of lattice gradients.
inline SiftDescriptor sift_at(const Image& gray, float x, float y, int patch_radius = kDefaultSiftRadius) {
  if (gray.channels() != 1) throw Error(ErrorCode::InvalidInput, "sift needs a grayscale image");
  if (patch_radius < 2) throw Error(ErrorCode::InvalidInput, "sift patch radius must be at least 2");
  const detail::SiftLayout layout(patch_radius);
  SiftDescriptor hist{};
  for (int dy = -patch_radius; dy <= patch_radius; ++dy)
    for (int dx = -patch_radius; dx <= patch_radius; ++dx) {
      const float px = std::clamp(x + dx, 0.0f, static_cast<float>(gray.width() - 1));
      const float py = std::clamp(y + dy, 0.0f, static_cast<float>(gray.height() - 1));
      const int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
      const float fx = px - x0, fy = py - y0;
      float gx = 0.0f, gy = 0.0f;
      for (int iy = 0; iy < 2; ++iy)
        for (int ix = 0; ix < 2; ++ix) {
          const float w = (ix ? fx : 1.0f - fx) * (iy ? fy : 1.0f - fy);
          if (w == 0.0f) continue;
          float tx, ty;
          detail::gradient_at(gray, x0 + ix, y0 + iy, tx, ty);
          gx += w * tx;
          gy += w * ty;
        }
      float mag, obin;
      detail::sift_polar(gx, gy, mag, obin);
      detail::sift_accumulate(hist, layout, dx, dy, mag, obin);
    }
  detail::sift_normalize(hist);
  return hist;
}

inline float sift_distance(const SiftDescriptor& a, const SiftDescriptor& b) {
  float acc = 0.0f;
  for (int i = 0; i < kSiftLength; ++i) {
    const float d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc);
}

// ---------------------------------------------------------------------------
// Walsh-Hadamard projections of an 8x8 grayscale patch.
//
// The patch spans columns x-3..x+4 and rows y-3..y+4 (clamped). 2-D basis
// function (i, j) is walsh_i(row) * walsh_j(col) with 1-D Walsh functions in
// sequency order; coefficients are ordered by i+j, then by i.

inline constexpr int kWhPatch = 8;
inline constexpr int kWhLength = 16;
using WHDescriptor = std::array<float, kWhLength>;

namespace detail {

// Natural-order Hadamard row index of each sequency-ordered Walsh function.
inline const std::array<int, kWhPatch>& walsh_natural_index() {
  static const std::array<int, kWhPatch> table = [] {
    std::array<int, kWhPatch> t{};
    for (int k = 0; k < kWhPatch; ++k) {
      const int gray = k ^ (k >> 1);
      int rev = 0;
      for (int b = 0; b < 3; ++b)
        if (gray & (1 << b)) rev |= 1 << (2 - b);
      t[k] = rev;
    }
    return t;
  }();
  return table;
}

inline const std::array<std::pair<int, int>, kWhLength>& wh_coefficient_order() {
  static const std::array<std::pair<int, int>, kWhLength> order = [] {
    std::array<std::pair<int, int>, kWhLength> o{};
    int n = 0;
    for (int s = 0; n < kWhLength; ++s)
      for (int i = 0; i <= s && n < kWhLength; ++i)
        if (i < kWhPatch && s - i < kWhPatch) o[n++] = {i, s - i};
    return o;
  }();
  return order;
}

// In-place unnormalized fast Walsh-Hadamard transform (natural order).
inline void fwht8(float* v, int stride) {
  for (int len = 1; len < kWhPatch; len <<= 1)
    for (int i = 0; i < kWhPatch; i += len << 1)
      for (int j = i; j < i + len; ++j) {
        const float a = v[j * stride], b = v[(j + len) * stride];
        v[j * stride] = a + b;
        v[(j + len) * stride] = a - b;
      }
}

}  // namespace detail

/// Value of sequency-ordered 1-D Walsh function `k` at position `t` (both in 0..7).
inline int walsh_value(int k, int t) {
  const int natural = detail::walsh_natural_index()[k];
  return (std::popcount(static_cast<unsigned>(natural & t)) & 1) ? -1 : 1;
}

/// Row/column sequency pair of coefficient `k`.
inline std::pair<int, int> wh_basis_index(int k) { return detail::wh_coefficient_order()[k]; }

inline WHDescriptor wh_at(const Image& gray, int x, int y) {
  if (gray.channels() != 1) throw Error(ErrorCode::InvalidInput, "walsh-hadamard needs a grayscale image");
  std::array<float, kWhPatch * kWhPatch> patch{};
  for (int r = 0; r < kWhPatch; ++r)
    for (int c = 0; c < kWhPatch; ++c)
      patch[r * kWhPatch + c] = gray.at(std::clamp(x - 3 + c, 0, gray.width() - 1),
                                        std::clamp(y - 3 + r, 0, gray.height() - 1));
  for (int r = 0; r < kWhPatch; ++r) detail::fwht8(&patch[r * kWhPatch], 1);
  for (int c = 0; c < kWhPatch; ++c) detail::fwht8(&patch[c], kWhPatch);
  WHDescriptor d{};
  const auto& natural = detail::walsh_natural_index();
  for (int k = 0; k < kWhLength; ++k) {
    const auto [i, j] = wh_basis_index(k);
    d[k] = patch[natural[i] * kWhPatch + natural[j]];
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dense descriptor fields sampled at every integer pixel of one image.

template <int Radius>
struct CensusField {
  using Descriptor = CensusDescriptor<Radius>;
  int width = 0;
  int height = 0;
  std::vector<Descriptor> cells;

  CensusField() = default;
  CensusField(const Image& lab, int threads = 1) : width(lab.width()), height(lab.height()), cells(lab.pixel_count()) {
    parallel_for(height, threads, [&](int y) {
      for (int x = 0; x < width; ++x)
        cells[static_cast<std::size_t>(y) * width + x] = census_at<Radius>(lab, static_cast<float>(x), static_cast<float>(y));
    });
  }

  float distance(std::size_t a, const CensusField& other, std::size_t b) const {
    return static_cast<float>(census_distance(cells[a], other.cells[b]));
  }
};

struct SiftField {
  int width = 0;
  int height = 0;
  int radius = kDefaultSiftRadius;
  std::vector<float> values;  // kSiftLength per pixel

  SiftField() = default;
  SiftField(const Image& gray, int patch_radius, int threads = 1)
      : width(gray.width()), height(gray.height()), radius(patch_radius),
        values(gray.pixel_count() * kSiftLength, 0.0f) {
    if (gray.channels() != 1) throw Error(ErrorCode::InvalidInput, "sift field needs a grayscale image");
    const detail::SiftLayout layout(radius);
    std::vector<float> mag(gray.pixel_count()), obin(gray.pixel_count());
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        float gx, gy;
        detail::gradient_at(gray, x, y, gx, gy);
        detail::sift_polar(gx, gy, mag[y * width + x], obin[y * width + x]);
      }
    parallel_for(height, threads, [&](int y) {
      for (int x = 0; x < width; ++x) {
        SiftDescriptor hist{};
        for (int dy = -radius; dy <= radius; ++dy) {
          const int row = std::clamp(y + dy, 0, height - 1) * width;
          for (int dx = -radius; dx <= radius; ++dx) {
            const int j = row + std::clamp(x + dx, 0, width - 1);
            detail::sift_accumulate(hist, layout, dx, dy, mag[j], obin[j]);
          }
        }
        detail::sift_normalize(hist);
        std::copy(hist.begin(), hist.end(), values.begin() + (static_cast<std::size_t>(y) * width + x) * kSiftLength);
      }
    });
  }

  float distance(std::size_t a, const SiftField& other, std::size_t b) const {
    const float* pa = &values[a * kSiftLength];
    const float* pb = &other.values[b * kSiftLength];
    // Eight independent partial sums so the loop vectorizes without
    // reassociating floating-point adds.
    std::array<float, 8> acc{};
    for (int i = 0; i < kSiftLength; i += 8)
      for (int j = 0; j < 8; ++j) {
        const float d = pa[i + j] - pb[i + j];
        acc[j] += d * d;
      }
    return std::sqrt(((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])));
  }
};

}  // namespace denseflow
