#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"

namespace denseflow {

/// Per-pixel boundary strength in [0,1].
struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<float> strength;

  EdgeMap() = default;
  EdgeMap(int w, int h, float fill = 0.0f) : width(w), height(h), strength(static_cast<std::size_t>(w) * h, fill) {}

  float at(int x, int y) const noexcept { return strength[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) noexcept { return strength[static_cast<std::size_t>(y) * width + x]; }
};

inline constexpr double kGeodesicOffset = 0.002;

struct GeodesicParams {
  double euclidean_offset = kGeodesicOffset;
  int connectivity = 8;  // 4 or 8

  void validate() const {
    if (!(euclidean_offset > 0.0)) throw Error(ErrorCode::InvalidInput, "euclidean offset must be > 0");
    if (connectivity != 4 && connectivity != 8) throw Error(ErrorCode::InvalidInput, "connectivity must be 4 or 8");
  }
};

/// Gradient-magnitude boundary map: Gaussian smoothing (sigma 1), central
/// differences summed over channels, normalized by the 99th percentile and
/// clamped to [0,1].
inline EdgeMap detect_edges(const Image& img) {
  const Image smooth = gaussian_blur(img, 1.0);
  const int w = img.width(), h = img.height(), ch = img.channels();
  EdgeMap edges(w, h);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int c = 0; c < ch; ++c) {
        const double gx = 0.5 * (smooth.at(std::min(x + 1, w - 1), y, c) - smooth.at(std::max(x - 1, 0), y, c));
        const double gy = 0.5 * (smooth.at(x, std::min(y + 1, h - 1), c) - smooth.at(x, std::max(y - 1, 0), c));
        acc += gx * gx + gy * gy;
      }
      edges.at(x, y) = static_cast<float>(std::sqrt(acc));
    }
  std::vector<float> sorted = edges.strength;
  const std::size_t rank = static_cast<std::size_t>(0.99 * (sorted.size() - 1));
  std::nth_element(sorted.begin(), sorted.begin() + rank, sorted.end());
  float norm = sorted[rank];
  if (!(norm > 0.0f)) norm = *std::max_element(edges.strength.begin(), edges.strength.end());
  for (float& s : edges.strength) s = norm > 0.0f ? std::clamp(s / norm, 0.0f, 1.0f) : 0.0f;
  return edges;
}

// ---------------------------------------------------------------------------
// Edge-map file: "EDG1", int32 width, int32 height, float32 row-major, all
// little-endian.

namespace detail {

inline void put_u32le(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline bool get_u32le(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

inline void put_f32le(std::ostream& os, float f) { put_u32le(os, std::bit_cast<std::uint32_t>(f)); }

inline bool get_f32le(std::istream& is, float& f) {
  std::uint32_t v;
  if (!get_u32le(is, v)) return false;
  f = std::bit_cast<float>(v);
  return true;
}

}  // namespace detail

inline void save_edges(const std::string& path, const EdgeMap& edges) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  os.write("EDG1", 4);
  detail::put_u32le(os, static_cast<std::uint32_t>(edges.width));
  detail::put_u32le(os, static_cast<std::uint32_t>(edges.height));
  for (float s : edges.strength) detail::put_f32le(os, s);
  if (!os) throw Error(ErrorCode::Io, "failed writing " + path);
}

/// Loads an edge map; values are clamped to [0,1]. Pass expected dimensions
/// (> 0) to reject maps that do not match the reference image.
inline EdgeMap load_edges(const std::string& path, int expected_width = 0, int expected_height = 0) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::FileNotFound, path);
  char magic[4];
  if (!is.read(magic, 4)) throw Error(ErrorCode::Truncated, path);
  if (std::memcmp(magic, "EDG1", 4) != 0) throw Error(ErrorCode::BadMagic, path);
  std::uint32_t w = 0, h = 0;
  if (!detail::get_u32le(is, w) || !detail::get_u32le(is, h)) throw Error(ErrorCode::Truncated, path);
  if (w == 0 || h == 0 || w > (1u << 16) || h > (1u << 16)) throw Error(ErrorCode::Format, "implausible edge map size");
  if (expected_width > 0 && (static_cast<int>(w) != expected_width || static_cast<int>(h) != expected_height))
    throw Error(ErrorCode::DimensionMismatch, "edge map is " + std::to_string(w) + "x" + std::to_string(h));
  EdgeMap edges(static_cast<int>(w), static_cast<int>(h));
  for (float& s : edges.strength) {
    float v;
    if (!detail::get_f32le(is, v)) throw Error(ErrorCode::Truncated, path);
    if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteValue, "edge map " + path);
    s = std::clamp(v, 0.0f, 1.0f);
  }
  return edges;
}

// ---------------------------------------------------------------------------
// Geodesic distances on the pixel grid.

/// Dense distance raster; +inf where the expansion did not reach.
struct DistanceMap {
  int width = 0;
  int height = 0;
  std::vector<double> distance;

  double at(int x, int y) const { return distance[static_cast<std::size_t>(y) * width + x]; }
};

/// Cost of stepping between adjacent pixels p and q.
inline double geodesic_step_cost(const EdgeMap& edges, std::size_t p, std::size_t q, double step_length,
                                 double offset) {
  return step_length * ((static_cast<double>(edges.strength[p]) + edges.strength[q]) / 2.0 + offset);
}

/// Single-source Dijkstra; nodes beyond `radius_limit` are not expanded.
inline DistanceMap geodesic_distances(const EdgeMap& edges, int source_x, int source_y, const GeodesicParams& params,
                                      double radius_limit = std::numeric_limits<double>::infinity()) {
  params.validate();
  const int w = edges.width, h = edges.height;
  if (source_x < 0 || source_y < 0 || source_x >= w || source_y >= h)
    throw Error(ErrorCode::OutOfBounds, "geodesic source outside the edge map");
  DistanceMap out{w, h, std::vector<double>(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity())};
  using Entry = std::pair<double, std::size_t>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
  const std::size_t src = static_cast<std::size_t>(source_y) * w + source_x;
  out.distance[src] = 0.0;
  queue.push({0.0, src});
  static constexpr int kDx[8] = {1, -1, 0, 0, 1, 1, -1, -1};
  static constexpr int kDy[8] = {0, 0, 1, -1, 1, -1, 1, -1};
  const double diagonal = std::sqrt(2.0);
  while (!queue.empty()) {
    const auto [d, p] = queue.top();
    queue.pop();
    if (d > out.distance[p]) continue;
    if (d > radius_limit) break;
    const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
    for (int k = 0; k < params.connectivity; ++k) {
      const int nx = x + kDx[k], ny = y + kDy[k];
      if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
      const std::size_t q = static_cast<std::size_t>(ny) * w + nx;
      const double nd = d + geodesic_step_cost(edges, p, q, k < 4 ? 1.0 : diagonal, params.euclidean_offset);
      if (nd < out.distance[q]) {
        out.distance[q] = nd;
        queue.push({nd, q});
      }
    }
  }
  for (double& d : out.distance)
    if (d > radius_limit) d = std::numeric_limits<double>::infinity();
  return out;
}

}  // namespace denseflow
