#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "denseflow/edge_geodesic.hpp"
#include "denseflow/error.hpp"
#include "denseflow/image.hpp"
#include "denseflow/outlier_filter.hpp"
#include "denseflow/parallel.hpp"
#include "denseflow/superpixels.hpp"

namespace denseflow {

/// (x, y) -> (a11 x + a12 y + b1, a21 x + a22 y + b2); the flow is the
/// mapped point minus (x, y).
struct AffineModel {
  double a11 = 1.0, a12 = 0.0, a21 = 0.0, a22 = 1.0;
  double b1 = 0.0, b2 = 0.0;

  static AffineModel translation(double u, double v) { return {1.0, 0.0, 0.0, 1.0, u, v}; }

  double det() const { return a11 * a22 - a12 * a21; }
  bool finite() const {
    return std::isfinite(a11) && std::isfinite(a12) && std::isfinite(a21) && std::isfinite(a22) && std::isfinite(b1) &&
           std::isfinite(b2);
  }
  std::array<double, 2> flow_at(double x, double y) const {
    return {a11 * x + a12 * y + b1 - x, a21 * x + a22 * y + b2 - y};
  }
  double residual(const Match& m) const {
    const auto f = flow_at(m.x, m.y);
    return std::hypot(f[0] - m.u, f[1] - m.v);
  }
  double max_parameter_difference(const AffineModel& o) const {
    return std::max({std::abs(a11 - o.a11), std::abs(a12 - o.a12), std::abs(a21 - o.a21), std::abs(a22 - o.a22),
                     std::abs(b1 - o.b1), std::abs(b2 - o.b2)});
  }
};

struct InterpParams {
  int neighborhood_size = 150;
  double inlier_threshold = 1.0;
  int ransac_iterations = 150;
  int propagation_rounds = 8;
  std::uint64_t seed = 0;
  double geodesic_offset = kGeodesicOffset;
  // Refit weights: Gaussian of geodesic distance with sigma equal to this
  // fraction of the zero-edge geodesic length of the image diagonal.
  double weight_sigma_fraction = 0.05;
  int threads = 1;

  void validate() const {
    if (neighborhood_size < 3) throw Error(ErrorCode::InvalidInput, "neighborhood size must be >= 3");
    if (!(inlier_threshold > 0.0)) throw Error(ErrorCode::InvalidInput, "inlier threshold must be > 0");
    if (ransac_iterations < 1) throw Error(ErrorCode::InvalidInput, "ransac iterations must be >= 1");
    if (propagation_rounds < 0) throw Error(ErrorCode::InvalidInput, "propagation rounds must be >= 0");
  }
};

/// One support match of a superpixel: index into the MatchSet and its
/// geodesic distance from the superpixel centroid.
struct SupportEntry {
  int match = 0;
  double distance = 0.0;
};
using SupportList = std::vector<SupportEntry>;

/// Weighted correspondence for least-squares fitting.
struct WeightedMatch {
  double x = 0.0, y = 0.0, u = 0.0, v = 0.0;
  double weight = 1.0;
};

// ---------------------------------------------------------------------------
// Geodesic support on the superpixel graph.

namespace detail {

// Mean edge strength over the 4-neighbor pixel pairs on each shared
// boundary, as adjacency lists parallel to seg.neighbors.
inline std::vector<std::vector<double>> boundary_strengths(const SuperpixelSegmentation& seg, const EdgeMap& edges) {
  if (edges.width != seg.width || edges.height != seg.height)
    throw Error(ErrorCode::DimensionMismatch, "edge map does not match segmentation");
  std::vector<std::vector<double>> sum(seg.count), count(seg.count);
  for (int l = 0; l < seg.count; ++l) {
    sum[l].assign(seg.neighbors[l].size(), 0.0);
    count[l].assign(seg.neighbors[l].size(), 0.0);
  }
  auto add = [&](int a, int b, double s) {
    const auto& nb = seg.neighbors[a];
    const auto k = std::lower_bound(nb.begin(), nb.end(), b) - nb.begin();
    sum[a][k] += s;
    count[a][k] += 1.0;
  };
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const int a = seg.label(x, y);
      const double sa = edges.at(x, y);
      if (x + 1 < seg.width && seg.label(x + 1, y) != a) {
        const int b = seg.label(x + 1, y);
        const double s = 0.5 * (sa + edges.at(x + 1, y));
        add(a, b, s);
        add(b, a, s);
      }
      if (y + 1 < seg.height && seg.label(x, y + 1) != a) {
        const int b = seg.label(x, y + 1);
        const double s = 0.5 * (sa + edges.at(x, y + 1));
        add(a, b, s);
        add(b, a, s);
      }
    }
  for (int a = 0; a < seg.count; ++a)
    for (std::size_t k = 0; k < sum[a].size(); ++k) sum[a][k] /= count[a][k];
  return sum;
}

inline double centroid_distance(const SuperpixelSegmentation& seg, int a, int b) {
  return std::hypot(seg.centroid[a][0] - seg.centroid[b][0], seg.centroid[a][1] - seg.centroid[b][1]);
}

}  // namespace detail

/// Edge weights between adjacent superpixels: mean edge strength on their
/// shared boundary plus offset x centroid distance. Adjacency lists parallel
/// to seg.neighbors.
inline std::vector<std::vector<double>> superpixel_graph_weights(const SuperpixelSegmentation& seg,
                                                                 const EdgeMap& edges, double offset) {
  auto weights = detail::boundary_strengths(seg, edges);
  for (int a = 0; a < seg.count; ++a)
    for (std::size_t k = 0; k < seg.neighbors[a].size(); ++k)
      weights[a][k] += offset * detail::centroid_distance(seg, a, seg.neighbors[a][k]);
  return weights;
}

/// For every superpixel, the `neighborhood_size` matches closest in geodesic
/// distance. A path runs between superpixel centroids on the graph, then
/// straight to the match from its home superpixel's centroid or from an
/// adjacent centroid (paying that shared boundary's edge strength), costing
/// offset per pixel of the last leg. Ties break by match index.
inline std::vector<SupportList> assign_support(const MatchSet& matches, const SuperpixelSegmentation& seg,
                                               const EdgeMap& edges, const InterpParams& params) {
  params.validate();
  if (matches.empty()) throw Error(ErrorCode::InterpolationImpossible, "no matches to interpolate");
  const auto boundary = detail::boundary_strengths(seg, edges);
  const auto weights = superpixel_graph_weights(seg, edges, params.geodesic_offset);
  // Last-leg candidates per match as (superpixel, cost), flattened.
  struct Leg {
    int from;
    double cost;
  };
  std::vector<std::size_t> leg_begin(matches.size() + 1, 0);
  std::vector<Leg> legs;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    const Match& mt = matches[m];
    const int x = std::clamp(static_cast<int>(std::lround(mt.x)), 0, seg.width - 1);
    const int y = std::clamp(static_cast<int>(std::lround(mt.y)), 0, seg.height - 1);
    const int home = seg.label(x, y);
    auto leg = [&](int from) {
      return params.geodesic_offset * std::hypot(mt.x - seg.centroid[from][0], mt.y - seg.centroid[from][1]);
    };
    legs.push_back({home, leg(home)});
    for (std::size_t k = 0; k < seg.neighbors[home].size(); ++k) {
      const int nb = seg.neighbors[home][k];
      legs.push_back({nb, boundary[home][k] + leg(nb)});
    }
    leg_begin[m + 1] = legs.size();
  }
  const std::size_t keep = std::min<std::size_t>(params.neighborhood_size, matches.size());
  std::vector<SupportList> support(seg.count);
  parallel_for(seg.count, params.threads, [&](int source) {
    std::vector<double> dist(seg.count, std::numeric_limits<double>::infinity());
    using Entry = std::pair<double, int>;
    std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue;
    dist[source] = 0.0;
    queue.push({0.0, source});
    while (!queue.empty()) {
      const auto [d, a] = queue.top();
      queue.pop();
      if (d > dist[a]) continue;
      for (std::size_t k = 0; k < seg.neighbors[a].size(); ++k) {
        const int b = seg.neighbors[a][k];
        const double nd = d + weights[a][k];
        if (nd < dist[b]) {
          dist[b] = nd;
          queue.push({nd, b});
        }
      }
    }
    SupportList all(matches.size());
    for (std::size_t m = 0; m < matches.size(); ++m) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = leg_begin[m]; k < leg_begin[m + 1]; ++k) best = std::min(best, dist[legs[k].from] + legs[k].cost);
      all[m] = {static_cast<int>(m), best};
    }
    auto closer = [](const SupportEntry& a, const SupportEntry& b) {
      return a.distance < b.distance || (a.distance == b.distance && a.match < b.match);
    };
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(keep), all.end(), closer);
    all.resize(keep);
    support[source] = std::move(all);
  });
  return support;
}

// ---------------------------------------------------------------------------
// Affine fitting.

/// Weighted least squares over >= 3 correspondences. Coordinates are
/// centered and scaled first; a normal matrix with condition number above
/// 1e10 is rejected as degenerate.
inline AffineModel fit_affine(std::span<const WeightedMatch> pts) {
  if (pts.size() < 3) throw Error(ErrorCode::DegenerateFit, "affine fit needs at least 3 correspondences");
  double wsum = 0.0, mx = 0.0, my = 0.0;
  for (const auto& p : pts) {
    if (!(p.weight > 0.0)) continue;
    wsum += p.weight;
    mx += p.weight * p.x;
    my += p.weight * p.y;
  }
  if (!(wsum > 0.0)) throw Error(ErrorCode::DegenerateFit, "all weights are zero");
  mx /= wsum;
  my /= wsum;
  double spread = 0.0;
  for (const auto& p : pts) spread += p.weight * ((p.x - mx) * (p.x - mx) + (p.y - my) * (p.y - my));
  const double scale = std::sqrt(spread / wsum);
  if (!(scale > 0.0)) throw Error(ErrorCode::DegenerateFit, "coincident correspondences");

  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd design(n, 3);
  Eigen::MatrixX2d target(n, 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = pts[static_cast<std::size_t>(i)];
    const double sw = std::sqrt(std::max(p.weight, 0.0));
    design(i, 0) = sw * (p.x - mx) / scale;
    design(i, 1) = sw * (p.y - my) / scale;
    design(i, 2) = sw;
    target(i, 0) = sw * (p.x + p.u);
    target(i, 1) = sw * (p.y + p.v);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  if (!(sv(2) > 0.0) || (sv(0) / sv(2)) * (sv(0) / sv(2)) > 1e10)
    throw Error(ErrorCode::DegenerateFit, "correspondences are collinear or degenerate");
  const Eigen::MatrixXd coef = svd.solve(target);
  AffineModel m;
  m.a11 = coef(0, 0) / scale;
  m.a12 = coef(1, 0) / scale;
  m.b1 = coef(2, 0) - m.a11 * mx - m.a12 * my;
  m.a21 = coef(0, 1) / scale;
  m.a22 = coef(1, 1) / scale;
  m.b2 = coef(2, 1) - m.a21 * mx - m.a22 * my;
  if (!m.finite()) throw Error(ErrorCode::DegenerateFit, "non-finite affine parameters");
  return m;
}

inline AffineModel fit_affine(std::initializer_list<WeightedMatch> pts) {
  return fit_affine(std::span<const WeightedMatch>(pts.begin(), pts.size()));
}

namespace detail {

// Exact affine model through three correspondences; false if collinear.
inline bool fit_minimal(const Match& p, const Match& q, const Match& r, AffineModel& out) {
  const double ux = q.x - p.x, uy = q.y - p.y, vx = r.x - p.x, vy = r.y - p.y;
  const double cross = ux * vy - uy * vx;
  const double extent = std::max({ux * ux + uy * uy, vx * vx + vy * vy, 1e-300});
  if (std::abs(cross) <= 1e-9 * extent) return false;
  // Solve in coordinates relative to p.
  const double tx0 = p.x + p.u, ty0 = p.y + p.v;
  const double tx1 = q.x + q.u - tx0, ty1 = q.y + q.v - ty0;
  const double tx2 = r.x + r.u - tx0, ty2 = r.y + r.v - ty0;
  out.a11 = (tx1 * vy - tx2 * uy) / cross;
  out.a12 = (ux * tx2 - vx * tx1) / cross;
  out.a21 = (ty1 * vy - ty2 * uy) / cross;
  out.a22 = (ux * ty2 - vx * ty1) / cross;
  out.b1 = tx0 - out.a11 * p.x - out.a12 * p.y;
  out.b2 = ty0 - out.a21 * p.x - out.a22 * p.y;
  return out.finite();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Robust per-superpixel models.

struct ModelFit {
  AffineModel model;
  std::vector<int> inliers;  // positions within the support list
  bool low_confidence = false;
};

/// Support entries whose flow residual under `model` is below the threshold.
inline std::vector<int> support_inliers(const AffineModel& model, const SupportList& support, const MatchSet& matches,
                                        double threshold) {
  std::vector<int> in;
  for (std::size_t k = 0; k < support.size(); ++k)
    if (model.residual(matches[support[k].match]) < threshold) in.push_back(static_cast<int>(k));
  return in;
}

inline double support_weight_sigma(int width, int height, const InterpParams& params) {
  return params.weight_sigma_fraction * params.geodesic_offset * std::hypot(width, height);
}

namespace detail {

// Gaussian weights of geodesic distance, scaled so the closest entry of the
// set has weight 1 (a common factor; the least-squares solution is
// unchanged), with a small floor so far entries keep the system full rank.
inline std::vector<WeightedMatch> weighted_points(const SupportList& support, std::span<const int> which,
                                                  const MatchSet& matches, double sigma) {
  double dmin = std::numeric_limits<double>::infinity();
  for (int k : which) dmin = std::min(dmin, support[k].distance);
  std::vector<WeightedMatch> pts;
  pts.reserve(which.size());
  for (int k : which) {
    const Match& m = matches[support[k].match];
    const double d = support[k].distance;
    const double w = sigma > 0.0 ? std::exp(-(d * d - dmin * dmin) / (2.0 * sigma * sigma)) : 1.0;
    pts.push_back({m.x, m.y, m.u, m.v, std::max(w, 1e-12)});
  }
  return pts;
}

// Least-squares refit on the inliers of `fit`; kept only if it does not lose
// inliers.
inline void refit_on_inliers(ModelFit& fit, const SupportList& support, const MatchSet& matches, double threshold,
                             double sigma) {
  if (fit.inliers.size() < 3) return;
  try {
    const auto pts = weighted_points(support, fit.inliers, matches, sigma);
    const AffineModel refined = fit_affine(pts);
    if (std::abs(refined.det()) <= 1e-6) return;
    auto in = support_inliers(refined, support, matches, threshold);
    if (in.size() >= fit.inliers.size()) {
      fit.model = refined;
      fit.inliers = std::move(in);
    }
  } catch (const Error&) {
  }
}

}  // namespace detail

/// Randomized consensus over minimal 3-match samples, best hypothesis refit
/// on its inliers. Falls back to a weighted fit over the whole support (or a
/// weighted mean translation if that is degenerate) when no hypothesis
/// reaches 3 inliers; such fits are flagged low-confidence.
inline ModelFit robust_model(const SupportList& support, const MatchSet& matches, const InterpParams& params,
                             std::uint64_t stream, double weight_sigma) {
  if (support.size() < 3) throw Error(ErrorCode::InvalidInput, "robust model needs at least 3 support matches");
  std::mt19937_64 rng(mix_seed(params.seed, stream));
  std::uniform_int_distribution<int> pick(0, static_cast<int>(support.size()) - 1);
  ModelFit best;
  bool have = false;
  for (int it = 0; it < params.ransac_iterations; ++it) {
    const int i = pick(rng);
    int j = pick(rng);
    while (j == i) j = pick(rng);
    int k = pick(rng);
    while (k == i || k == j) k = pick(rng);
    AffineModel hyp;
    if (!detail::fit_minimal(matches[support[i].match], matches[support[j].match], matches[support[k].match], hyp))
      continue;
    if (std::abs(hyp.det()) <= 1e-6) continue;
    auto in = support_inliers(hyp, support, matches, params.inlier_threshold);
    if (!have || in.size() > best.inliers.size()) {
      best.model = hyp;
      best.inliers = std::move(in);
      have = true;
    }
  }
  if (have && best.inliers.size() >= 3) {
    detail::refit_on_inliers(best, support, matches, params.inlier_threshold, weight_sigma);
    return best;
  }
  std::vector<int> everything(support.size());
  std::iota(everything.begin(), everything.end(), 0);
  const auto pts = detail::weighted_points(support, everything, matches, weight_sigma);
  ModelFit fallback;
  fallback.low_confidence = true;
  try {
    fallback.model = fit_affine(pts);
  } catch (const Error&) {
    double su = 0.0, sv = 0.0, sw = 0.0;
    for (const auto& p : pts) {
      su += p.weight * p.u;
      sv += p.weight * p.v;
      sw += p.weight;
    }
    fallback.model = AffineModel::translation(su / sw, sv / sw);
  }
  fallback.inliers = support_inliers(fallback.model, support, matches, params.inlier_threshold);
  return fallback;
}

/// Jacobi rounds: each superpixel scores its neighbors' previous-round
/// models on its own support and adopts one with strictly more inliers
/// (incumbent wins ties), then refits on the new inliers.
inline std::vector<ModelFit> propagate_models(const SuperpixelSegmentation& seg, std::vector<ModelFit> fits,
                                              const std::vector<SupportList>& supports, const MatchSet& matches,
                                              const InterpParams& params, double weight_sigma) {
  for (int round = 0; round < params.propagation_rounds; ++round) {
    const std::vector<ModelFit> previous = fits;
    std::vector<std::uint8_t> changed(seg.count, 0);
    parallel_for(seg.count, params.threads, [&](int s) {
      ModelFit& mine = fits[s];
      int best_neighbor = -1;
      std::vector<int> best_inliers;
      for (int nb : seg.neighbors[s]) {
        auto in = support_inliers(previous[nb].model, supports[s], matches, params.inlier_threshold);
        if (in.size() > std::max(mine.inliers.size(), best_inliers.size())) {
          best_neighbor = nb;
          best_inliers = std::move(in);
        }
      }
      if (best_neighbor < 0) return;
      mine.model = previous[best_neighbor].model;
      mine.inliers = std::move(best_inliers);
      mine.low_confidence = mine.inliers.size() < 3;
      detail::refit_on_inliers(mine, supports[s], matches, params.inlier_threshold, weight_sigma);
      changed[s] = 1;
    });
    if (std::none_of(changed.begin(), changed.end(), [](std::uint8_t c) { return c != 0; })) break;
  }
  return fits;
}

/// Evaluates each pixel's superpixel model; pixels that coincide with a
/// match take the match flow verbatim.
inline FlowField densify(const SuperpixelSegmentation& seg, const std::vector<ModelFit>& fits,
                         const MatchSet& matches) {
  if (static_cast<int>(fits.size()) != seg.count) throw Error(ErrorCode::InvalidInput, "one model per superpixel required");
  FlowField flow(seg.width, seg.height);
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const auto f = fits[seg.label(x, y)].model.flow_at(x, y);
      flow.u[flow.index(x, y)] = static_cast<float>(f[0]);
      flow.v[flow.index(x, y)] = static_cast<float>(f[1]);
    }
  for (const auto& m : matches) {
    if (m.x != std::round(m.x) || m.y != std::round(m.y)) continue;
    const int x = static_cast<int>(m.x), y = static_cast<int>(m.y);
    if (x < 0 || y < 0 || x >= seg.width || y >= seg.height) continue;
    flow.u[flow.index(x, y)] = m.u;
    flow.v[flow.index(x, y)] = m.v;
  }
  return flow;
}

struct Interpolation {
  FlowField flow;
  std::vector<SupportList> supports;
  std::vector<ModelFit> models;
};

/// assign_support -> robust_model per superpixel -> propagate_models -> densify.
inline Interpolation interpolate(const MatchSet& matches, const SuperpixelSegmentation& seg, const EdgeMap& edges,
                                 const InterpParams& params) {
  params.validate();
  if (matches.size() < 3) throw Error(ErrorCode::InterpolationImpossible, "at least 3 matches are required");
  Interpolation out;
  out.supports = assign_support(matches, seg, edges, params);
  const double sigma = support_weight_sigma(seg.width, seg.height, params);
  out.models.resize(seg.count);
  parallel_for(seg.count, params.threads, [&](int s) {
    out.models[s] = robust_model(out.supports[s], matches, params, static_cast<std::uint64_t>(s), sigma);
  });
  out.models = propagate_models(seg, std::move(out.models), out.supports, matches, params, sigma);
  out.flow = densify(seg, out.models, matches);
  return out;
}

}  // namespace denseflow
