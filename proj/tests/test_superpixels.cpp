#include <gtest/gtest.h>

#include <cmath>
#include <queue>
#include <set>

#include "denseflow/superpixels.hpp"
#include "synthetic.hpp"

using namespace denseflow;

namespace {

Image textured_lab(int w, int h, std::uint64_t seed) {
  const synth::Texture tex(seed);
  return to_cielab(synth::render(w, h, [&](double x, double y) { return tex(x, y); }));
}

Image constant_lab(int w, int h) {
  Image img(w, h, ColorSpace::RGB);
  for (float& v : img.data()) v = 0.5f;
  return to_cielab(img);
}

bool label_connected(const SuperpixelSegmentation& seg, int l) {
  std::vector<char> seen(seg.labels.size(), 0);
  std::size_t start = seg.labels.size();
  for (std::size_t i = 0; i < seg.labels.size(); ++i)
    if (seg.labels[i] == l) {
      start = i;
      break;
    }
  if (start == seg.labels.size()) return false;
  std::queue<std::size_t> q;
  q.push(start);
  seen[start] = 1;
  int reached = 0;
  while (!q.empty()) {
    const std::size_t p = q.front();
    q.pop();
    ++reached;
    const int x = static_cast<int>(p % seg.width), y = static_cast<int>(p / seg.width);
    for (auto [dx, dy] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
      const int nx = x + dx, ny = y + dy;
      if (nx < 0 || ny < 0 || nx >= seg.width || ny >= seg.height) continue;
      const std::size_t n = static_cast<std::size_t>(ny) * seg.width + nx;
      if (!seen[n] && seg.labels[n] == l) {
        seen[n] = 1;
        q.push(n);
      }
    }
  }
  return reached == seg.area[l];
}

}  // namespace

TEST(Superpixels, ConstantImageAreas) {
  const int S = 20;
  const auto seg = segment(constant_lab(200, 160), S);
  for (int a : seg.area) {
    EXPECT_GE(a, 0.25 * S * S);
    EXPECT_LE(a, 4.0 * S * S);
  }
}

TEST(Superpixels, CountNearExpected) {
  for (int S : {10, 20, 50}) {
    const int w = 300, h = 200;
    const auto seg = segment(textured_lab(w, h, 3), S);
    const double expected = static_cast<double>(w) * h / (S * S);
    EXPECT_GE(seg.count, 0.7 * expected) << S;
    EXPECT_LE(seg.count, 1.3 * expected) << S;
  }
}

TEST(Superpixels, PartitionAndConnectivity) {
  const auto seg = segment(textured_lab(160, 120, 5), 15);
  ASSERT_EQ(seg.labels.size(), 160u * 120u);
  std::vector<int> area(seg.count, 0);
  for (int l : seg.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LT(l, seg.count);
    ++area[l];
  }
  EXPECT_EQ(area, seg.area);
  for (int l = 0; l < seg.count; ++l) EXPECT_TRUE(label_connected(seg, l)) << l;
}

TEST(Superpixels, AdjacencyExactAndSymmetric) {
  const auto seg = segment(textured_lab(120, 90, 7), 12);
  std::set<std::pair<int, int>> truth;
  for (int y = 0; y < seg.height; ++y)
    for (int x = 0; x < seg.width; ++x) {
      const int a = seg.label(x, y);
      if (x + 1 < seg.width && seg.label(x + 1, y) != a) truth.insert({a, seg.label(x + 1, y)}), truth.insert({seg.label(x + 1, y), a});
      if (y + 1 < seg.height && seg.label(x, y + 1) != a) truth.insert({a, seg.label(x, y + 1)}), truth.insert({seg.label(x, y + 1), a});
    }
  EXPECT_EQ(seg.adjacency(), truth);
  for (auto [a, b] : seg.adjacency()) EXPECT_TRUE(seg.adjacency().count({b, a}));
}

TEST(Superpixels, AdjacencyGraphConnected) {
  const auto seg = segment(textured_lab(150, 100, 8), 20);
  std::vector<char> seen(seg.count, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  int reached = 0;
  while (!stack.empty()) {
    const int l = stack.back();
    stack.pop_back();
    ++reached;
    for (int n : seg.neighbors[l])
      if (!seen[n]) seen[n] = 1, stack.push_back(n);
  }
  EXPECT_EQ(reached, seg.count);
}

TEST(Superpixels, StatisticsConsistent) {
  const Image lab = textured_lab(90, 70, 9);
  const auto seg = segment(lab, 15);
  for (int l = 0; l < seg.count; ++l) {
    double cx = 0, cy = 0, L = 0;
    for (int y = 0; y < seg.height; ++y)
      for (int x = 0; x < seg.width; ++x)
        if (seg.label(x, y) == l) cx += x, cy += y, L += lab.at(x, y, 0);
    EXPECT_NEAR(seg.centroid[l][0], cx / seg.area[l], 1e-9);
    EXPECT_NEAR(seg.centroid[l][1], cy / seg.area[l], 1e-9);
    EXPECT_NEAR(seg.color[l][0], L / seg.area[l], 1e-6);
  }
}

TEST(Superpixels, Deterministic) {
  const Image lab = textured_lab(130, 90, 11);
  const auto a = segment(lab, 20), b = segment(lab, 20);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.count, b.count);
}

TEST(Superpixels, Preconditions) {
  const Image lab = constant_lab(60, 40);
  EXPECT_THROW(segment(lab, 4), Error);
  EXPECT_THROW(segment(lab, 21), Error);
  Image rgb(60, 40, ColorSpace::RGB);
  EXPECT_THROW(segment(rgb, 10), Error);
}

TEST(Superpixels, OrphansJoinLargestNeighbor) {
  // Label 1 is split in two; the small piece joins label 2 (larger neighbor).
  std::vector<int> labels = {0, 0, 1, 1, 1,
                             0, 0, 2, 2, 2,
                             1, 2, 2, 2, 2};
  const int n = detail::enforce_connectivity(labels, 5, 3);
  EXPECT_EQ(n, 3);
  EXPECT_EQ(labels[10], labels[7]);
  EXPECT_NE(labels[2], labels[7]);
}
