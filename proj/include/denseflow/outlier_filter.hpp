#pragma once

#include <cmath>
#include <fstream>
#include <future>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"
#include "denseflow/matcher.hpp"

namespace denseflow {

struct Match {
  float x = 0.0f, y = 0.0f;  // position in frame 1
  float u = 0.0f, v = 0.0f;  // displacement
  float consistency_error = 0.0f;

  friend bool operator==(const Match&, const Match&) = default;
};

using MatchSet = std::vector<Match>;

struct FilterParams {
  float epsilon = 1.0f;
  int min_matches_s = 7;
  int min_region_area = 10;
  float region_flow_tolerance = 1.0f;

  void validate() const {
    if (!(epsilon > 0.0f)) throw Error(ErrorCode::InvalidInput, "consistency threshold must be > 0");
    if (min_matches_s < 1 || min_matches_s > 9) throw Error(ErrorCode::InvalidInput, "minimum matches s must be in [1,9]");
  }
};

/// Validity-masked flow plus per-pixel consistency error (+inf where the
/// target leaves the frame or the input was already invalid).
struct FilteredFlow {
  FlowField flow;
  std::vector<float> error;
};

/// Forward-backward check: e(x) = |w_f(x) + w_b(x + w_f(x))| with w_b sampled
/// bilinearly. Pixels with e > epsilon or a target outside frame 2 are
/// invalidated.
inline FilteredFlow consistency_check(const FlowField& fwd, const FlowField& bwd, float epsilon) {
  if (!fwd.same_shape(bwd)) throw Error(ErrorCode::InvalidInput, "forward and backward flow dimensions differ");
  FilteredFlow out{fwd, std::vector<float>(fwd.size(), std::numeric_limits<float>::infinity())};
  const int w = fwd.width, h = fwd.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = fwd.index(x, y);
      out.flow.valid[i] = 0;
      if (!fwd.valid[i]) continue;
      const float tx = x + fwd.u[i], ty = y + fwd.v[i];
      if (!(tx >= 0.0f && ty >= 0.0f && tx <= w - 1 && ty <= h - 1)) continue;
      const int x0 = std::min(static_cast<int>(tx), w - 1), y0 = std::min(static_cast<int>(ty), h - 1);
      const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
      const float fx = tx - x0, fy = ty - y0;
      auto sample = [&](const std::vector<float>& c) {
        const float top = c[bwd.index(x0, y0)] + fx * (c[bwd.index(x1, y0)] - c[bwd.index(x0, y0)]);
        const float bot = c[bwd.index(x0, y1)] + fx * (c[bwd.index(x1, y1)] - c[bwd.index(x0, y1)]);
        return top + fy * (bot - top);
      };
      const float eu = fwd.u[i] + sample(bwd.u);
      const float ev = fwd.v[i] + sample(bwd.v);
      const float e = std::sqrt(eu * eu + ev * ev);
      out.error[i] = e;
      out.flow.valid[i] = e <= epsilon ? 1 : 0;
    }
  return out;
}

/// Combines two checks: a pixel survives only if both pass; error is the max.
inline FilteredFlow two_pass_filter(const FlowField& fwd, const FlowField& bwd_main, const FlowField& bwd_alt,
                                    const FilterParams& fp) {
  fp.validate();
  FilteredFlow a = consistency_check(fwd, bwd_main, fp.epsilon);
  const FilteredFlow b = consistency_check(fwd, bwd_alt, fp.epsilon);
  for (std::size_t i = 0; i < a.error.size(); ++i) {
    a.flow.valid[i] = a.flow.valid[i] && b.flow.valid[i];
    a.error[i] = std::max(a.error[i], b.error[i]);
  }
  return a;
}

/// Computes both inverse fields (frame 2 -> frame 1) with `main` and `alt`
/// matching parameters and applies the combined check.
inline FilteredFlow two_pass_filter(const Image& img1, const Image& img2, const FlowField& fwd,
                                    const MatchingParams& main, const MatchingParams& alt, const FilterParams& fp) {
  fp.validate();
  FlowField bwd_main, bwd_alt;
  if (main.threads > 1) {
    auto pending = std::async(std::launch::async, [&] { return match_full(img2, img1, alt); });
    bwd_main = match_full(img2, img1, main);
    bwd_alt = pending.get();
  } else {
    bwd_main = match_full(img2, img1, main);
    bwd_alt = match_full(img2, img1, alt);
  }
  return two_pass_filter(fwd, bwd_main, bwd_alt, fp);
}

/// Invalidates 4-connected components (neighbors whose flows differ by less
/// than the tolerance in each component) smaller than min_region_area.
inline FlowField region_filter(const FlowField& flow, const FilterParams& fp) {
  FlowField out = flow;
  const int w = flow.width, h = flow.height;
  std::vector<int> component(flow.size(), -1);
  std::vector<std::size_t> stack, members;
  int next = 0;
  auto coherent = [&](std::size_t a, std::size_t b) {
    return std::abs(flow.u[a] - flow.u[b]) < fp.region_flow_tolerance &&
           std::abs(flow.v[a] - flow.v[b]) < fp.region_flow_tolerance;
  };
  for (std::size_t seed = 0; seed < flow.size(); ++seed) {
    if (!flow.valid[seed] || component[seed] >= 0) continue;
    members.clear();
    stack.assign(1, seed);
    component[seed] = next;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int x = static_cast<int>(p % w), y = static_cast<int>(p / w);
      const int nx[4] = {x - 1, x + 1, x, x};
      const int ny[4] = {y, y, y - 1, y + 1};
      for (int k = 0; k < 4; ++k) {
        if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
        const std::size_t q = flow.index(nx[k], ny[k]);
        if (!flow.valid[q] || component[q] >= 0 || !coherent(p, q)) continue;
        component[q] = next;
        stack.push_back(q);
      }
    }
    if (static_cast<int>(members.size()) < fp.min_region_area)
      for (std::size_t p : members) out.valid[p] = 0;
    ++next;
  }
  return out;
}

/// One match per non-overlapping 3x3 block holding at least s valid pixels:
/// the valid pixel with the smallest error (first in raster order on ties).
inline MatchSet sparsify(const FlowField& flow, const std::vector<float>& errors, const FilterParams& fp) {
  if (errors.size() != flow.size()) throw Error(ErrorCode::InvalidInput, "error raster does not match flow");
  MatchSet matches;
  for (int by = 0; by < flow.height; by += 3)
    for (int bx = 0; bx < flow.width; bx += 3) {
      int count = 0;
      std::size_t best = 0;
      float best_error = std::numeric_limits<float>::infinity();
      bool have = false;
      for (int y = by; y < std::min(by + 3, flow.height); ++y)
        for (int x = bx; x < std::min(bx + 3, flow.width); ++x) {
          const std::size_t i = flow.index(x, y);
          if (!flow.valid[i]) continue;
          ++count;
          if (!have || errors[i] < best_error) {
            have = true;
            best = i;
            best_error = errors[i];
          }
        }
      if (count >= fp.min_matches_s && have) {
        const int x = static_cast<int>(best % flow.width), y = static_cast<int>(best / flow.width);
        matches.push_back({static_cast<float>(x), static_cast<float>(y), flow.u[best], flow.v[best], best_error});
      }
    }
  return matches;
}

// ---------------------------------------------------------------------------
// Text serialization: one "x y u v error" line per match.

inline void write_matches(std::ostream& os, const MatchSet& matches) {
  os << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (const auto& m : matches) os << m.x << ' ' << m.y << ' ' << m.u << ' ' << m.v << ' ' << m.consistency_error << '\n';
}

inline MatchSet read_matches(std::istream& is) {
  MatchSet matches;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    std::istringstream ls(line);
    Match m;
    if (!(ls >> m.x >> m.y >> m.u >> m.v >> m.consistency_error))
      throw Error(ErrorCode::Format, "malformed match on line " + std::to_string(line_no));
    matches.push_back(m);
  }
  return matches;
}

inline void save_matches(const std::string& path, const MatchSet& matches) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  write_matches(os, matches);
  if (!os) throw Error(ErrorCode::Io, "failed writing " + path);
}

inline MatchSet load_matches(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::FileNotFound, path);
  return read_matches(is);
}

}  // namespace denseflow
