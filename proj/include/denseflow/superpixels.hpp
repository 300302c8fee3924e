#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"

namespace denseflow {

struct SuperpixelSegmentation {
  int width = 0;
  int height = 0;
  int count = 0;
  std::vector<int> labels;                      // per pixel, in [0, count)
  std::vector<std::array<double, 2>> centroid;  // (x, y) per label
  std::vector<std::array<double, 3>> color;     // mean CIELab per label
  std::vector<int> area;
  std::vector<std::vector<int>> neighbors;      // sorted adjacency lists

  int label(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }

  std::set<std::pair<int, int>> adjacency() const {
    std::set<std::pair<int, int>> pairs;
    for (int a = 0; a < count; ++a)
      for (int b : neighbors[a]) pairs.insert({a, b});
    return pairs;
  }
};

struct SlicParams {
  double compactness = 10.0;
  int iterations = 10;
};

namespace detail {

// Relabels 4-connected components of `labels` so every label is connected.
// The largest component of each original label keeps it; every other
// (orphan) component joins the adjacent kept component of largest area.
// Labels are then renumbered by first appearance in raster order.
inline int enforce_connectivity(std::vector<int>& labels, int w, int h) {
  const std::size_t n = labels.size();
  std::vector<int> comp(n, -1);
  std::vector<int> comp_label, comp_size;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (comp[s] >= 0) continue;
    const int id = static_cast<int>(comp_label.size());
    comp_label.push_back(labels[s]);
    comp_size.push_back(0);
    comp[s] = id;
    stack.assign(1, s);
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      ++comp_size[id];
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const int nx[4] = {x - 1, x + 1, x, x}, ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (comp[q] < 0 && labels[q] == labels[s]) {
          comp[q] = id;
          stack.push_back(q);
        }
      }
    }
  }
  const int ncomp = static_cast<int>(comp_label.size());
  // Largest component per original label (first found on ties).
  int max_label = 0;
  for (int l : comp_label) max_label = std::max(max_label, l);
  std::vector<int> keeper(max_label + 1, -1);
  for (int c = 0; c < ncomp; ++c) {
    int& k = keeper[comp_label[c]];
    if (k < 0 || comp_size[c] > comp_size[k]) k = c;
  }
  std::vector<int> target(ncomp);
  std::vector<int> size(comp_size);
  for (int c = 0; c < ncomp; ++c) target[c] = keeper[comp_label[c]] == c ? c : -1;
  std::vector<std::set<int>> adj(ncomp);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int a = comp[static_cast<std::size_t>(y) * w + x];
      if (x + 1 < w) {
        const int b = comp[static_cast<std::size_t>(y) * w + x + 1];
        if (a != b) adj[a].insert(b), adj[b].insert(a);
      }
      if (y + 1 < h) {
        const int b = comp[static_cast<std::size_t>(y + 1) * w + x];
        if (a != b) adj[a].insert(b), adj[b].insert(a);
      }
    }
  auto resolve = [&](int c) {
    while (target[c] != c) c = target[c];
    return c;
  };
  bool pending = true;
  while (pending) {
    pending = false;
    for (int c = 0; c < ncomp; ++c) {
      if (target[c] >= 0) continue;
      int best = -1;
      for (int nb : adj[c]) {
        if (target[nb] < 0) continue;
        const int r = resolve(nb);
        if (best < 0 || size[r] > size[best] || (size[r] == size[best] && r < best)) best = r;
      }
      if (best < 0) {
        pending = true;
        continue;
      }
      target[c] = best;
      size[best] += comp_size[c];
    }
  }
  std::vector<int> renumber(ncomp, -1);
  int next = 0;
  for (std::size_t p = 0; p < n; ++p) {
    const int r = resolve(comp[p]);
    if (renumber[r] < 0) renumber[r] = next++;
    labels[p] = renumber[r];
  }
  return next;
}

}  // namespace detail

/// Fills centroids, mean colors, areas and adjacency from `labels`.
inline void finalize_segmentation(SuperpixelSegmentation& seg, const Image& lab) {
  const int w = seg.width, h = seg.height, n = seg.count;
  seg.centroid.assign(n, {0.0, 0.0});
  seg.color.assign(n, {0.0, 0.0, 0.0});
  seg.area.assign(n, 0);
  std::vector<std::set<int>> adj(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int l = seg.label(x, y);
      ++seg.area[l];
      seg.centroid[l][0] += x;
      seg.centroid[l][1] += y;
      for (int c = 0; c < 3; ++c) seg.color[l][c] += lab.at(x, y, c);
      if (x + 1 < w && seg.label(x + 1, y) != l) adj[l].insert(seg.label(x + 1, y)), adj[seg.label(x + 1, y)].insert(l);
      if (y + 1 < h && seg.label(x, y + 1) != l) adj[l].insert(seg.label(x, y + 1)), adj[seg.label(x, y + 1)].insert(l);
    }
  seg.neighbors.assign(n, {});
  for (int l = 0; l < n; ++l) {
    seg.centroid[l][0] /= seg.area[l];
    seg.centroid[l][1] /= seg.area[l];
    for (auto& c : seg.color[l]) c /= seg.area[l];
    seg.neighbors[l].assign(adj[l].begin(), adj[l].end());
  }
}

/// SLIC over a CIELab image with seeds on a `grid_step` lattice.
inline SuperpixelSegmentation segment(const Image& lab, int grid_step, const SlicParams& params = {}) {
  if (lab.colorspace() != ColorSpace::CIELab) throw Error(ErrorCode::InvalidInput, "segmentation expects CIELab input");
  const int w = lab.width(), h = lab.height();
  if (grid_step < 5 || grid_step > std::min(w, h) / 2)
    throw Error(ErrorCode::InvalidInput, "grid step must be in [5, min(width,height)/2]");

  const int nx = std::max(1, static_cast<int>(std::lround(static_cast<double>(w) / grid_step)));
  const int ny = std::max(1, static_cast<int>(std::lround(static_cast<double>(h) / grid_step)));
  struct Center {
    double l, a, b, x, y;
  };
  std::vector<Center> centers;
  centers.reserve(static_cast<std::size_t>(nx) * ny);
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const double cx = (i + 0.5) * w / nx, cy = (j + 0.5) * h / ny;
      const int px = std::clamp(static_cast<int>(cx), 0, w - 1), py = std::clamp(static_cast<int>(cy), 0, h - 1);
      centers.push_back({lab.at(px, py, 0), lab.at(px, py, 1), lab.at(px, py, 2), cx, cy});
    }

  const double spatial = params.compactness / grid_step;
  const int k = static_cast<int>(centers.size());
  std::vector<int> labels(lab.pixel_count(), 0);
  std::vector<double> best(lab.pixel_count());
  for (int it = 0; it < params.iterations; ++it) {
    std::fill(best.begin(), best.end(), std::numeric_limits<double>::infinity());
    // Assignment: every pixel scans the centers whose 2S window covers it.
    // Iterating centers in index order keeps ties deterministic.
    for (int c = 0; c < k; ++c) {
      const auto& ctr = centers[c];
      const int x0 = std::max(0, static_cast<int>(std::floor(ctr.x - grid_step)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(ctr.x + grid_step)));
      const int y0 = std::max(0, static_cast<int>(std::floor(ctr.y - grid_step)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(ctr.y + grid_step)));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dl = lab.at(x, y, 0) - ctr.l, da = lab.at(x, y, 1) - ctr.a, db = lab.at(x, y, 2) - ctr.b;
          const double dx = x - ctr.x, dy = y - ctr.y;
          const double d = std::sqrt(dl * dl + da * da + db * db) + spatial * std::sqrt(dx * dx + dy * dy);
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          if (d < best[i]) {
            best[i] = d;
            labels[i] = c;
          }
        }
    }
    // Update.
    std::vector<Center> sums(k, {0, 0, 0, 0, 0});
    std::vector<int> counts(k, 0);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const int c = labels[static_cast<std::size_t>(y) * w + x];
        sums[c].l += lab.at(x, y, 0);
        sums[c].a += lab.at(x, y, 1);
        sums[c].b += lab.at(x, y, 2);
        sums[c].x += x;
        sums[c].y += y;
        ++counts[c];
      }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      const double n = counts[c];
      centers[c] = {sums[c].l / n, sums[c].a / n, sums[c].b / n, sums[c].x / n, sums[c].y / n};
    }
  }

  SuperpixelSegmentation seg;
  seg.width = w;
  seg.height = h;
  seg.count = detail::enforce_connectivity(labels, w, h);
  seg.labels = std::move(labels);
  finalize_segmentation(seg, lab);
  return seg;
}

}  // namespace denseflow
