#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "denseflow/descriptors.hpp"
#include "denseflow/error.hpp"
#include "denseflow/image.hpp"
#include "denseflow/kdtree.hpp"
#include "denseflow/parallel.hpp"

namespace denseflow {

enum class DescriptorKind { CensusCIELab, Sift };

struct MatchingParams {
  int iterations = 12;
  DescriptorKind descriptor = DescriptorKind::CensusCIELab;
  int patch_radius = 3;  // census: 3 -> 7x7; sift: half-width of the patch
  float random_search_radius = 1.0f;
  int random_searches_per_iteration = 3;
  std::uint64_t seed = 0;
  int kd_leaf_budget = 32;  // 0 = exact search
  PyramidConfig pyramid{};
  int threads = 1;

  void validate() const {
    if (iterations < 1) throw Error(ErrorCode::InvalidInput, "matching iterations must be >= 1");
    if (!(random_search_radius > 0.0f)) throw Error(ErrorCode::InvalidInput, "random search radius must be > 0");
    if (random_searches_per_iteration < 0 || random_searches_per_iteration > 4)
      throw Error(ErrorCode::InvalidInput, "random searches per iteration must be in [0,4]");
    if (descriptor == DescriptorKind::CensusCIELab && (patch_radius < 2 || patch_radius > 5))
      throw Error(ErrorCode::InvalidInput, "census patch radius must be in [2,5]");
    if (descriptor == DescriptorKind::Sift && patch_radius < 2)
      throw Error(ErrorCode::InvalidInput, "sift patch radius must be >= 2");
  }
};

/// Parameters of the second backward field used by the filtering stage:
/// one pixel larger patch and a different seed.
inline MatchingParams alternate_params(const MatchingParams& main) {
  MatchingParams alt = main;
  alt.patch_radius = main.patch_radius + 1;
  alt.seed = mix_seed(main.seed, 0xA17);
  return alt;
}

/// Per-pixel best flow and its matching cost.
struct CostField {
  int width = 0;
  int height = 0;
  std::vector<float> u, v, cost;

  CostField() = default;
  CostField(int w, int h)
      : width(w), height(h),
        u(static_cast<std::size_t>(w) * h, 0.0f),
        v(static_cast<std::size_t>(w) * h, 0.0f),
        cost(static_cast<std::size_t>(w) * h, std::numeric_limits<float>::infinity()) {}

  std::size_t size() const noexcept { return u.size(); }

  double total_cost() const {
    double acc = 0.0;
    for (float c : cost) acc += c;
    return acc;
  }

  FlowField to_flow() const {
    FlowField f(width, height);
    f.u = u;
    f.v = v;
    return f;
  }
};

/// Matching cost at sub-pixel targets: bilinear blend of the descriptor
/// distances to the four surrounding lattice positions of the second image.
/// Targets outside the second image cost +inf.
template <typename Field>
class DescriptorCost {
 public:
  DescriptorCost(const Field& first, const Field& second) : first_(first), second_(second) {}

  int width() const noexcept { return first_.width; }
  int height() const noexcept { return first_.height; }

  float operator()(int x, int y, float u, float v) const {
    const float tx = static_cast<float>(x) + u;
    const float ty = static_cast<float>(y) + v;
    const int w2 = second_.width, h2 = second_.height;
    if (!(tx >= 0.0f && ty >= 0.0f && tx <= w2 - 1 && ty <= h2 - 1)) return std::numeric_limits<float>::infinity();
    const int x0 = std::min(static_cast<int>(tx), w2 - 1);
    const int y0 = std::min(static_cast<int>(ty), h2 - 1);
    const float fx = tx - x0, fy = ty - y0;
    const std::size_t src = static_cast<std::size_t>(y) * first_.width + x;
    const std::size_t base = static_cast<std::size_t>(y0) * w2 + x0;
    float acc = (1.0f - fx) * (1.0f - fy) * first_.distance(src, second_, base);
    if (fx > 0.0f) acc += fx * (1.0f - fy) * first_.distance(src, second_, base + 1);
    if (fy > 0.0f) {
      acc += (1.0f - fx) * fy * first_.distance(src, second_, base + w2);
      if (fx > 0.0f) acc += fx * fy * first_.distance(src, second_, base + w2 + 1);
    }
    return acc;
  }

 private:
  const Field& first_;
  const Field& second_;
};

/// Reports the field after every propagation sweep and random-search pass.
using SweepObserver = std::function<void(const CostField&)>;

// ---------------------------------------------------------------------------
// Walsh-Hadamard kd-tree initialization.

using WHTree = KdTree<kWhLength>;

inline WHTree build_wh_tree(const Image& gray, int leaf_size = 8) {
  std::vector<WHDescriptor> points(gray.pixel_count());
  for (int y = 0; y < gray.height(); ++y)
    for (int x = 0; x < gray.width(); ++x) points[static_cast<std::size_t>(y) * gray.width() + x] = wh_at(gray, x, y);
  return WHTree(std::move(points), leaf_size);
}

inline int kd_nearest(const WHTree& tree, const WHDescriptor& query, int max_leaf_visits = 0) {
  return tree.nearest(query, max_leaf_visits);
}

/// Nearest-neighbor flow from gray1 into gray2 under Walsh-Hadamard
/// distance; costs are filled by `cost`.
template <typename CostFn>
CostField init_coarsest(const Image& gray1, const Image& gray2, const CostFn& cost, const MatchingParams& params) {
  if (gray1.width() != gray2.width() || gray1.height() != gray2.height())
    throw Error(ErrorCode::InvalidInput, "image dimensions differ");
  const WHTree tree = build_wh_tree(gray2);
  CostField field(gray1.width(), gray1.height());
  parallel_for(gray1.height(), params.threads, [&](int y) {
    for (int x = 0; x < gray1.width(); ++x) {
      const int idx = tree.nearest(wh_at(gray1, x, y), params.kd_leaf_budget);
      const std::size_t i = static_cast<std::size_t>(y) * field.width + x;
      field.u[i] = static_cast<float>(idx % gray2.width() - x);
      field.v[i] = static_cast<float>(idx / gray2.width() - y);
      field.cost[i] = cost(x, y, field.u[i], field.v[i]);
    }
  });
  return field;
}

// ---------------------------------------------------------------------------
// Propagation with random search.

namespace detail {

struct SweepDirection {
  bool forward_y;
  bool forward_x;
  int nx;  // x offset of the horizontal causal neighbor
  int ny;  // y offset of the vertical causal neighbor
};

// top-left -> bottom-right, bottom-right -> top-left,
// top-right -> bottom-left, bottom-left -> top-right
inline constexpr SweepDirection kSweeps[4] = {
    {true, true, -1, -1},
    {false, false, +1, +1},
    {true, false, +1, -1},
    {false, true, -1, +1},
};

template <typename CostFn>
bool try_candidate(CostField& f, std::size_t i, int x, int y, float cu, float cv, const CostFn& cost) {
  if (cu == f.u[i] && cv == f.v[i]) return false;
  const float c = cost(x, y, cu, cv);
  if (c < f.cost[i]) {
    f.u[i] = cu;
    f.v[i] = cv;
    f.cost[i] = c;
    return true;
  }
  return false;
}

template <typename CostFn>
void propagation_sweep(CostField& f, const SweepDirection& dir, const CostFn& cost) {
  const int w = f.width, h = f.height;
  for (int yi = 0; yi < h; ++yi) {
    const int y = dir.forward_y ? yi : h - 1 - yi;
    for (int xi = 0; xi < w; ++xi) {
      const int x = dir.forward_x ? xi : w - 1 - xi;
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const int hx = x + dir.nx;
      if (hx >= 0 && hx < w) {
        const std::size_t n = static_cast<std::size_t>(y) * w + hx;
        try_candidate(f, i, x, y, f.u[n], f.v[n], cost);
      }
      const int vy = y + dir.ny;
      if (vy >= 0 && vy < h) {
        const std::size_t n = static_cast<std::size_t>(vy) * w + x;
        try_candidate(f, i, x, y, f.u[n], f.v[n], cost);
      }
    }
  }
}

template <typename CostFn>
void random_search_pass(CostField& f, float radius, std::uint64_t seed, const CostFn& cost) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> offset(-radius, radius);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * f.width + x;
      const float du = offset(rng);
      const float dv = offset(rng);
      try_candidate(f, i, x, y, f.u[i] + du, f.v[i] + dv, cost);
    }
}

}  // namespace detail

/// `iterations` rounds of four directional sweeps; a random-search pass
/// follows each of the last `random_searches_per_iteration` sweeps.
/// `stream` separates RNG streams of different pyramid levels.
template <typename CostFn>
CostField propagate_scale(const CostField& init, const CostFn& cost, const MatchingParams& params,
                          std::uint64_t stream = 0, const SweepObserver& observer = {}) {
  params.validate();
  if (init.width != cost.width() || init.height != cost.height())
    throw Error(ErrorCode::InvalidInput, "cost field does not match image dimensions");
  CostField f = init;
  const int first_random = 4 - params.random_searches_per_iteration;
  for (int it = 0; it < params.iterations; ++it)
    for (int s = 0; s < 4; ++s) {
      detail::propagation_sweep(f, detail::kSweeps[s], cost);
      if (observer) observer(f);
      if (s >= first_random) {
        const std::uint64_t pass_seed = mix_seed(params.seed, (stream << 20) + static_cast<std::uint64_t>(it) * 4 + s);
        detail::random_search_pass(f, params.random_search_radius, pass_seed, cost);
        if (observer) observer(f);
      }
    }
  return f;
}

/// Flow-only upscale: fine pixel centers map into the coarse lattice, flow is
/// sampled bilinearly and multiplied by `scale_ratio`, and targets are clamped
/// into the fine image domain. Costs are left at +inf.
inline CostField upscale_flow(const CostField& coarse, int fine_width, int fine_height, double scale_ratio) {
  if (!(scale_ratio >= 1.0)) throw Error(ErrorCode::InvalidInput, "scale ratio must be >= 1");
  ++resample_counter();
  CostField fine(fine_width, fine_height);
  const double rx = static_cast<double>(coarse.width) / fine_width;
  const double ry = static_cast<double>(coarse.height) / fine_height;
  for (int y = 0; y < fine_height; ++y) {
    const double cy = std::clamp((y + 0.5) * ry - 0.5, 0.0, coarse.height - 1.0);
    const int y0 = std::min(static_cast<int>(cy), coarse.height - 1);
    const int y1 = std::min(y0 + 1, coarse.height - 1);
    const double fy = cy - y0;
    for (int x = 0; x < fine_width; ++x) {
      const double cx = std::clamp((x + 0.5) * rx - 0.5, 0.0, coarse.width - 1.0);
      const int x0 = std::min(static_cast<int>(cx), coarse.width - 1);
      const int x1 = std::min(x0 + 1, coarse.width - 1);
      const double fx = cx - x0;
      auto blend = [&](const std::vector<float>& c) {
        const double top = c[y0 * coarse.width + x0] * (1 - fx) + c[y0 * coarse.width + x1] * fx;
        const double bot = c[y1 * coarse.width + x0] * (1 - fx) + c[y1 * coarse.width + x1] * fx;
        return top * (1 - fy) + bot * fy;
      };
      const std::size_t i = static_cast<std::size_t>(y) * fine_width + x;
      const double tx = std::clamp(x + blend(coarse.u) * scale_ratio, 0.0, fine_width - 1.0);
      const double ty = std::clamp(y + blend(coarse.v) * scale_ratio, 0.0, fine_height - 1.0);
      fine.u[i] = static_cast<float>(tx - x);
      fine.v[i] = static_cast<float>(ty - y);
    }
  }
  return fine;
}

/// Upscale and recompute costs at the fine level.
template <typename CostFn>
CostField upscale_flow(const CostField& coarse, double scale_ratio, const CostFn& cost) {
  CostField fine = upscale_flow(coarse, cost.width(), cost.height(), scale_ratio);
  for (int y = 0; y < fine.height; ++y)
    for (int x = 0; x < fine.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * fine.width + x;
      fine.cost[i] = cost(x, y, fine.u[i], fine.v[i]);
    }
  return fine;
}

// ---------------------------------------------------------------------------
// Full coarse-to-fine matching.

/// Images prepared for matching at one pyramid level.
template <typename Field>
struct MatchLevel {
  Image gray1, gray2;
  Field field1, field2;
};

namespace detail {

template <typename Field, typename MakeField>
CostField match_pyramid(const Image& img1, const Image& img2, const MatchingParams& params, MakeField make_field,
                        const SweepObserver& observer) {
  const ScalePyramid p1 = build_pyramid(to_cielab(img1), params.pyramid);
  const ScalePyramid p2 = build_pyramid(to_cielab(img2), params.pyramid);
  const int levels = static_cast<int>(p1.size());
  CostField field;
  for (int k = levels - 1; k >= 0; --k) {
    const Image g1 = to_gray(p1.levels[k]);
    const Image g2 = to_gray(p2.levels[k]);
    const Field f1 = make_field(p1.levels[k], g1);
    const Field f2 = make_field(p2.levels[k], g2);
    const DescriptorCost<Field> cost(f1, f2);
    if (k == levels - 1)
      field = init_coarsest(g1, g2, cost, params);
    else
      field = upscale_flow(field, p1.scale_factors[k] / p1.scale_factors[k + 1], cost);
    field = propagate_scale(field, cost, params, static_cast<std::uint64_t>(k), observer);
  }
  return field;
}

}  // namespace detail

/// Dense correspondence field from img1 to img2 (RGB, Gray or CIELab input).
inline CostField match_dense(const Image& img1, const Image& img2, const MatchingParams& params,
                             const SweepObserver& observer = {}) {
  params.validate();
  if (img1.width() != img2.width() || img1.height() != img2.height())
    throw Error(ErrorCode::InvalidInput, "image dimensions differ");
  if (img1.width() < 32 || img1.height() < 32) throw Error(ErrorCode::InvalidInput, "images must be at least 32x32");
  const int threads = params.threads;
  if (params.descriptor == DescriptorKind::Sift) {
    const int r = params.patch_radius;
    return detail::match_pyramid<SiftField>(
        img1, img2, params, [r, threads](const Image&, const Image& gray) { return SiftField(gray, r, threads); },
        observer);
  }
  auto census = [&]<int R>() {
    return detail::match_pyramid<CensusField<R>>(
        img1, img2, params, [threads](const Image& lab, const Image&) { return CensusField<R>(lab, threads); },
        observer);
  };
  switch (params.patch_radius) {
    case 2: return census.template operator()<2>();
    case 3: return census.template operator()<3>();
    case 4: return census.template operator()<4>();
    default: return census.template operator()<5>();
  }
}

inline FlowField match_full(const Image& img1, const Image& img2, const MatchingParams& params) {
  return match_dense(img1, img2, params).to_flow();
}

}  // namespace denseflow
