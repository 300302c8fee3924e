#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "denseflow/outlier_filter.hpp"
#include "synthetic.hpp"

using namespace denseflow;

namespace {

FlowField constant_flow(int w, int h, float u, float v) { return FlowField(w, h, u, v); }

// Labels 4-connected coherent components by breadth-first search over an
// explicit neighbor list.
std::vector<int> oracle_components(const FlowField& f, float tol) {
  std::vector<int> label(f.size(), -1);
  int next = 0;
  for (std::size_t s = 0; s < f.size(); ++s) {
    if (!f.valid[s] || label[s] >= 0) continue;
    std::vector<std::size_t> frontier{s};
    label[s] = next;
    for (std::size_t head = 0; head < frontier.size(); ++head) {
      const std::size_t p = frontier[head];
      const int x = static_cast<int>(p % f.width), y = static_cast<int>(p / f.width);
      for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
        const int nx = x + dx, ny = y + dy;
        if (nx < 0 || ny < 0 || nx >= f.width || ny >= f.height) continue;
        const std::size_t q = f.index(nx, ny);
        if (!f.valid[q] || label[q] >= 0) continue;
        if (std::abs(f.u[p] - f.u[q]) < tol && std::abs(f.v[p] - f.v[q]) < tol) {
          label[q] = next;
          frontier.push_back(q);
        }
      }
    }
    ++next;
  }
  return label;
}

}  // namespace

TEST(ConsistencyCheck, ExactInverses) {
  const auto r = consistency_check(constant_flow(20, 10, 2, 0), constant_flow(20, 10, -2, 0), 1.f);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) {
      const std::size_t i = r.flow.index(x, y);
      if (x < 18) {
        EXPECT_TRUE(r.flow.valid[i]);
        EXPECT_EQ(r.error[i], 0.f);
      } else {
        EXPECT_FALSE(r.flow.valid[i]);  // target leaves the frame
      }
    }
}

TEST(ConsistencyCheck, ErrorAboveThreshold) {
  const auto r = consistency_check(constant_flow(20, 10, 2, 0), constant_flow(20, 10, 0, 0), 1.f);
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 18; ++x) {
      EXPECT_FALSE(r.flow.valid[r.flow.index(x, y)]);
      EXPECT_FLOAT_EQ(r.error[r.flow.index(x, y)], 2.f);
    }
}

TEST(ConsistencyCheck, OutsideTargetInvalidForAnyEpsilon) {
  const auto r = consistency_check(constant_flow(8, 8, 100, 0), constant_flow(8, 8, -100, 0),
                                   std::numeric_limits<float>::infinity());
  EXPECT_EQ(r.flow.valid_count(), 0u);
}

TEST(ConsistencyCheck, InfiniteEpsilonKeepsInBoundsMask) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<float> u(-6.f, 6.f);
  FlowField f(30, 20), b(30, 20);
  for (std::size_t i = 0; i < f.size(); ++i) f.u[i] = u(rng), f.v[i] = u(rng), b.u[i] = u(rng), b.v[i] = u(rng);
  const auto r = consistency_check(f, b, std::numeric_limits<float>::infinity());
  for (int y = 0; y < 20; ++y)
    for (int x = 0; x < 30; ++x) {
      const std::size_t i = f.index(x, y);
      const float tx = x + f.u[i], ty = y + f.v[i];
      EXPECT_EQ(r.flow.valid[i] != 0, tx >= 0 && ty >= 0 && tx <= 29 && ty <= 19);
    }
}

TEST(ConsistencyCheck, DimensionMismatchThrows) {
  try {
    consistency_check(FlowField(4, 4), FlowField(5, 4), 1.f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
}

TEST(TwoPassFilter, IdentityFramesSurvive) {
  const auto pair = synth::make_shift_pair(96, 80, 0, 0, 3);
  MatchingParams mp;
  FilterParams fp;
  const FlowField fwd = match_full(pair.frame1, pair.frame1, mp);
  const auto r = two_pass_filter(pair.frame1, pair.frame1, fwd, mp, alternate_params(mp), fp);
  std::size_t good = 0;
  for (std::size_t i = 0; i < r.error.size(); ++i) good += r.flow.valid[i] && r.error[i] < 0.5f;
  EXPECT_GE(static_cast<double>(good) / r.error.size(), 0.9);
}

TEST(TwoPassFilter, RejectsCorruptedPixels) {
  const auto pair = synth::make_shift_pair(96, 80, 3, 1, 4);
  MatchingParams mp;
  FilterParams fp;
  fp.epsilon = 1.f;
  FlowField fwd = match_full(pair.frame1, pair.frame2, mp);
  const FlowField bwd_main = match_full(pair.frame2, pair.frame1, mp);
  const FlowField bwd_alt = match_full(pair.frame2, pair.frame1, alternate_params(mp));
  std::mt19937 rng(5);
  std::bernoulli_distribution pick(0.1);
  std::uniform_real_distribution<float> noise(-20.f, 20.f);
  std::vector<std::uint8_t> corrupted(fwd.size(), 0);
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (pick(rng)) {
      corrupted[i] = 1;
      fwd.u[i] += noise(rng);
      fwd.v[i] += noise(rng);
    }
  const auto r = two_pass_filter(fwd, bwd_main, bwd_alt, fp);
  std::size_t total = 0, rejected = 0;
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (corrupted[i]) {
      ++total;
      rejected += !r.flow.valid[i];
    }
  EXPECT_GE(static_cast<double>(rejected) / total, 0.95);
  for (std::size_t i = 0; i < fwd.size(); ++i)
    if (r.flow.valid[i]) {
      EXPECT_LE(r.error[i], fp.epsilon);
    }
}

TEST(TwoPassFilter, RequiresBothChecks) {
  const FlowField fwd = constant_flow(10, 10, 1, 0);
  const auto r = two_pass_filter(fwd, constant_flow(10, 10, -1, 0), constant_flow(10, 10, -3, 0), FilterParams{});
  EXPECT_EQ(r.flow.valid_count(), 0u);
  for (int y = 0; y < 10; ++y) EXPECT_FLOAT_EQ(r.error[r.flow.index(0, y)], 2.f);
}

TEST(RegionFilter, GiantRegionUnchanged) {
  const FlowField f = constant_flow(30, 30, 1, 1);
  const FlowField out = region_filter(f, FilterParams{});
  EXPECT_EQ(out.valid, f.valid);
}

TEST(RegionFilter, IsolatedPixelRemoved) {
  FlowField f(20, 20, 0, 0, false);
  f.valid[f.index(5, 5)] = 1;
  EXPECT_EQ(region_filter(f, FilterParams{}).valid_count(), 0u);
}

TEST(RegionFilter, IslandRemovedMatchesOracle) {
  FlowField f = constant_flow(40, 30, 2, 0);
  // 5-pixel plus-shaped island with a different flow.
  for (auto [x, y] : {std::pair{10, 10}, {9, 10}, {11, 10}, {10, 9}, {10, 11}}) f.u[f.index(x, y)] = 9.f;
  // Some invalid pixels and a second small island elsewhere.
  for (int x = 0; x < 40; ++x) f.valid[f.index(x, 20)] = 0;
  f.u[f.index(30, 25)] = -5.f;
  FilterParams fp;
  const FlowField out = region_filter(f, fp);
  const auto labels = oracle_components(f, fp.region_flow_tolerance);
  std::map<int, int> area;
  for (int l : labels)
    if (l >= 0) ++area[l];
  for (std::size_t i = 0; i < f.size(); ++i) {
    const bool expect = f.valid[i] && area[labels[i]] >= fp.min_region_area;
    EXPECT_EQ(out.valid[i] != 0, expect);
  }
  EXPECT_FALSE(out.valid[f.index(10, 10)]);
  EXPECT_TRUE(out.valid[f.index(0, 0)]);
}

TEST(Sparsify, BlockRules) {
  FilterParams fp;
  fp.min_matches_s = 7;
  FlowField f(3, 3);
  std::vector<float> err = {5, 4, 3, 2, 1, 1, 6, 7, 8};
  MatchSet m = sparsify(f, err, fp);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].x, 1.f);  // first of the two minima in raster order
  EXPECT_EQ(m[0].y, 1.f);
  EXPECT_EQ(m[0].consistency_error, 1.f);
  for (int k = 0; k < 3; ++k) f.valid[k] = 0;
  EXPECT_TRUE(sparsify(f, err, fp).empty());
}

TEST(Sparsify, FullyValidCountAndDensity) {
  for (auto [w, h] : {std::pair{30, 21}, {31, 22}, {10, 4}}) {
    const FlowField f(w, h);
    const std::vector<float> err(f.size(), 0.1f);
    FilterParams fp;
    const MatchSet m = sparsify(f, err, fp);
    std::size_t blocks = 0;  // blocks holding at least s pixels
    for (int by = 0; by < h; by += 3)
      for (int bx = 0; bx < w; bx += 3) blocks += std::min(3, w - bx) * std::min(3, h - by) >= fp.min_matches_s;
    EXPECT_EQ(m.size(), blocks);
    fp.min_matches_s = 1;
    EXPECT_EQ(sparsify(f, err, fp).size(), static_cast<std::size_t>(((w + 2) / 3) * ((h + 2) / 3)));
    EXPECT_LE(m.size() * 9, f.size() + 9 * static_cast<std::size_t>(w + h));
  }
}

TEST(Sparsify, PartialBorderBlocksUseSameRule) {
  FilterParams fp;
  fp.min_matches_s = 4;
  const FlowField f(4, 4);  // border blocks hold 3, 3 and 1 pixels
  const std::vector<float> err(16, 0.f);
  EXPECT_EQ(sparsify(f, err, fp).size(), 1u);
  fp.min_matches_s = 1;
  EXPECT_EQ(sparsify(f, err, fp).size(), 4u);
}

TEST(MatchText, RoundTripExact) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(-50.f, 50.f);
  MatchSet m;
  for (int i = 0; i < 50; ++i) m.push_back({float(i), float(2 * i), u(rng), u(rng), std::abs(u(rng)) / 50.f});
  std::stringstream ss;
  write_matches(ss, m);
  EXPECT_EQ(read_matches(ss), m);
  std::stringstream bad("1 2 3\n");
  EXPECT_THROW(read_matches(bad), Error);
  EXPECT_THROW(load_matches("/nonexistent/matches.txt"), Error);
}

TEST(FilterParams, Validation) {
  FilterParams fp;
  fp.min_matches_s = 10;
  EXPECT_THROW(fp.validate(), Error);
  fp = {};
  fp.epsilon = 0;
  EXPECT_THROW(fp.validate(), Error);
}
