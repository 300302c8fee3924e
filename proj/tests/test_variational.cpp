#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "denseflow/variational.hpp"
#include "synthetic.hpp"

using namespace denseflow;

namespace {

Image noise_rgb(int w, int h, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(w, h, ColorSpace::RGB);
  for (float& v : img.data()) v = u(rng);
  return img;
}

// Straightforward evaluation of the energy, written independently of the
// library internals (only color conversion and blur are shared).
double naive_energy(const Image& a, const Image& b, const FlowField& f, const VariationalParams& p,
                    const OptimizationDomainMask& mask) {
  const int w = a.width(), h = a.height();
  const Image la = gaussian_blur(to_cielab(a), p.presmooth_sigma), lb = gaussian_blur(to_cielab(b), p.presmooth_sigma);
  auto px = [&](const Image& img, int c, int x, int y) {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return static_cast<double>(img.at(x, y, c));
  };
  auto gx = [&](const Image& img, int c, int x, int y) { return (px(img, c, x + 1, y) - px(img, c, x - 1, y)) / 2; };
  auto gy = [&](const Image& img, int c, int x, int y) { return (px(img, c, x, y + 1) - px(img, c, x, y - 1)) / 2; };
  // Catmull-Rom spline through four samples.
  auto spline = [](double p0, double p1, double p2, double p3, double t) {
    return 0.5 * (2 * p1 + (p2 - p0) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t * t + (3 * p1 - p0 - 3 * p2 + p3) * t * t * t);
  };
  auto bicubic = [&](auto fn, double x, double y) {
    x = std::clamp(x, 0.0, w - 1.0);
    y = std::clamp(y, 0.0, h - 1.0);
    const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
    double rows[4];
    for (int j = 0; j < 4; ++j) {
      const int Y = std::clamp(y0 - 1 + j, 0, h - 1);
      auto at = [&](int X) { return fn(std::clamp(X, 0, w - 1), Y); };
      rows[j] = spline(at(x0 - 1), at(x0), at(x0 + 1), at(x0 + 2), x - x0);
    }
    return spline(rows[0], rows[1], rows[2], rows[3], y - y0);
  };
  const double e2 = p.robust_epsilon * p.robust_epsilon;
  double E = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = f.index(x, y);
      if (mask.at(x, y)) {
        double s = 0;
        for (int c = 0; c < 3; ++c) {
          const double tx = x + double(f.u[i]), ty = y + double(f.v[i]);
          const double dz = bicubic([&](int X, int Y) { return px(lb, c, X, Y); }, tx, ty) - px(la, c, x, y);
          const double dxz = bicubic([&](int X, int Y) { return gx(lb, c, X, Y); }, tx, ty) - gx(la, c, x, y);
          const double dyz = bicubic([&](int X, int Y) { return gy(lb, c, X, Y); }, tx, ty) - gy(la, c, x, y);
          s += dz * dz + p.gamma * (dxz * dxz + dyz * dyz);
        }
        E += std::sqrt(s / 3 + e2);
      }
      double g = 0;
      if (x + 1 < w) g += std::pow(double(f.u[i + 1]) - f.u[i], 2) + std::pow(double(f.v[i + 1]) - f.v[i], 2);
      if (y + 1 < h) g += std::pow(double(f.u[i + w]) - f.u[i], 2) + std::pow(double(f.v[i + w]) - f.v[i], 2);
      E += p.alpha * std::sqrt(g + e2);
    }
  return E;
}

}  // namespace

TEST(Energy, ZeroFlowIdenticalFrames) {
  const Image img = noise_rgb(20, 15, 1);
  const FlowField f(20, 15);
  VariationalParams p;
  p.alpha = 2.5;
  const double N = 20 * 15;
  EXPECT_NEAR(energy(img, img, f, p, build_mask(f)), p.robust_epsilon * N + p.alpha * p.robust_epsilon * N, 1e-12);
}

TEST(Energy, ConstantFlowHasMinimalSmoothness) {
  const Image img = noise_rgb(20, 15, 2);
  const FlowField f(20, 15, 1.25f, -0.5f);
  VariationalParams p;
  const auto mask = build_mask(f);
  OptimizationDomainMask none{20, 15, std::vector<std::uint8_t>(f.size(), 0)};
  EXPECT_NEAR(energy(img, img, f, p, none), p.alpha * p.robust_epsilon * 300, 1e-12);
  EXPECT_GT(energy(img, img, f, p, mask), p.alpha * p.robust_epsilon * 300);
}

TEST(Energy, MatchesNaiveOracle) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(-2.f, 2.f);
  for (int trial = 0; trial < 3; ++trial) {
    const Image a = noise_rgb(13, 11, 10 + trial), b = noise_rgb(13, 11, 20 + trial);
    FlowField f(13, 11);
    for (std::size_t i = 0; i < f.size(); ++i) f.u[i] = u(rng), f.v[i] = u(rng);
    for (double sigma : {0.0, 1.0}) {
      VariationalParams p;
      p.alpha = 0.7;
      p.presmooth_sigma = sigma;
      const auto mask = build_mask(f);
      const double expect = naive_energy(a, b, f, p, mask);
      EXPECT_LT(std::abs(energy(a, b, f, p, mask) - expect) / expect, 1e-10) << sigma;
    }
  }
}

TEST(BuildMask, Examples) {
  EXPECT_EQ(build_mask(FlowField(30, 20)).count(), 600u);
  EXPECT_EQ(build_mask(FlowField(30, 20, 30.f, 0.f)).count(), 0u);
  const auto m = build_mask(FlowField(100, 10, 10.f, 0.f));
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 100; ++x) EXPECT_EQ(m.at(x, y), x < 90);
  EXPECT_THROW(build_mask(FlowField(10, 10), 11, 10), Error);
}

TEST(Refine, IdenticalFramesStayAtZero) {
  const Image img = synth::make_shift_pair(48, 40, 0, 0, 1).frame1;
  const FlowField out = refine(img, img, FlowField(48, 40), VariationalParams{});
  for (std::size_t i = 0; i < out.size(); ++i) {
    EXPECT_EQ(out.u[i], 0.f);
    EXPECT_EQ(out.v[i], 0.f);
  }
}

TEST(Refine, SubPixelTranslation) {
  const auto pair = synth::make_shift_pair(96, 80, 1.5, 0.0, 5);
  for (int outer : {2, 5}) {
    VariationalParams p;
    p.outer_iterations = outer;
    const FlowField out = refine(pair.frame1, pair.frame2, FlowField(96, 80, 1.f, 0.f), p);
    EXPECT_EQ(synth::fraction_within(out, pair.truth, 0.15, 8), 1.0) << outer;
  }
}

TEST(Refine, FrozenPixelsBitExact) {
  const auto pair = synth::make_shift_pair(64, 48, 3.0, 0.0, 6);
  FlowField init(64, 48, 3.f, 0.f);
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> jitter(-0.3f, 0.3f);
  for (std::size_t i = 0; i < init.size(); ++i) init.u[i] += jitter(rng);
  const auto mask = build_mask(init);
  ASSERT_LT(mask.count(), init.size());
  const FlowField out = refine(pair.frame1, pair.frame2, init, VariationalParams{});
  for (std::size_t i = 0; i < init.size(); ++i)
    if (!mask.inside[i]) {
      EXPECT_EQ(std::bit_cast<std::uint32_t>(out.u[i]), std::bit_cast<std::uint32_t>(init.u[i]));
      EXPECT_EQ(std::bit_cast<std::uint32_t>(out.v[i]), std::bit_cast<std::uint32_t>(init.v[i]));
    }
}

TEST(Refine, EnergyDoesNotIncrease) {
  std::mt19937 rng(9);
  std::uniform_real_distribution<float> u(-1.5f, 1.5f);
  for (int trial = 0; trial < 4; ++trial) {
    const auto pair = synth::make_affine_pair(40, 32, synth::Affine{1.02, 0.01, 0.0, 0.99, 1.0, 0.5}, 30 + trial);
    FlowField init = pair.truth;
    for (std::size_t i = 0; i < init.size(); ++i) init.u[i] += u(rng), init.v[i] += u(rng);
    for (int outer : {1, 3}) {
      VariationalParams p;
      p.outer_iterations = outer;
      const auto mask = build_mask(init);
      const double before = energy(pair.frame1, pair.frame2, init, p, mask);
      const double after = energy(pair.frame1, pair.frame2, refine(pair.frame1, pair.frame2, init, p), p, mask);
      EXPECT_LE(after, before + 1e-6 * std::abs(before));
    }
  }
  // Unrelated frames: still no increase.
  const Image a = noise_rgb(24, 20, 40), b = noise_rgb(24, 20, 41);
  FlowField init(24, 20);
  for (std::size_t i = 0; i < init.size(); ++i) init.u[i] = u(rng), init.v[i] = u(rng);
  const VariationalParams p;
  const auto mask = build_mask(init);
  EXPECT_LE(energy(a, b, refine(a, b, init, p), p, mask), energy(a, b, init, p, mask) * (1 + 1e-6));
}

TEST(Refine, NoResampling) {
  const auto pair = synth::make_shift_pair(40, 32, 1.0, 0.5, 7);
  const long before = resample_counter().load();
  refine(pair.frame1, pair.frame2, FlowField(40, 32, 1.f, 0.f), VariationalParams{});
  EXPECT_EQ(resample_counter().load() - before, 0);
}

TEST(Refine, ParallelMatchesSerial) {
  const auto pair = synth::make_shift_pair(64, 48, 1.3, -0.4, 8);
  VariationalParams p;
  const FlowField a = refine(pair.frame1, pair.frame2, FlowField(64, 48, 1.f, 0.f), p);
  p.threads = 4;
  const FlowField b = refine(pair.frame1, pair.frame2, FlowField(64, 48, 1.f, 0.f), p);
  EXPECT_TRUE(bit_identical(a, b));
}

TEST(Refine, Preconditions) {
  const Image img = noise_rgb(10, 10, 1);
  EXPECT_THROW(refine(img, img, FlowField(9, 10), VariationalParams{}), Error);
  VariationalParams p;
  p.sor_omega = 2.0;
  EXPECT_THROW(refine(img, img, FlowField(10, 10), p), Error);
  p = {};
  p.outer_iterations = 0;
  EXPECT_THROW(p.validate(), Error);
  p = {};
  p.presmooth_sigma = -0.5;
  EXPECT_THROW(p.validate(), Error);
}
