#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "denseflow/image.hpp"
#include "synthetic.hpp"

using namespace denseflow;

namespace {

Image rgb_pixel(float r, float g, float b) { return Image(1, 1, ColorSpace::RGB, std::vector<float>{r, g, b}); }

// Independent sRGB -> Lab: IEC 61966-2-1 transfer, Bradford-free D65 matrix
// and CIE 1976 definitions, all in long double.
std::array<long double, 3> reference_lab(long double r, long double g, long double b) {
  auto lin = [](long double c) { return c <= 0.04045L ? c / 12.92L : std::pow((c + 0.055L) / 1.055L, 2.4L); };
  const long double R = lin(r), G = lin(g), B = lin(b);
  const long double X = (0.4124564L * R + 0.3575761L * G + 0.1804375L * B) / 0.95047L;
  const long double Y = 0.2126729L * R + 0.7151522L * G + 0.0721750L * B;
  const long double Z = (0.0193339L * R + 0.1191920L * G + 0.9503041L * B) / 1.08883L;
  const long double e = 216.0L / 24389.0L, k = 24389.0L / 27.0L;
  auto f = [&](long double t) { return t > e ? std::cbrt(t) : (k * t + 16.0L) / 116.0L; };
  return {116.0L * f(Y) - 16.0L, 500.0L * (f(X) - f(Y)), 200.0L * (f(Y) - f(Z))};
}

double oracle_bilinear(const Image& img, double x, double y, int c) {
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
  const double ax = x - x0, ay = y - y0;
  return (1 - ax) * (1 - ay) * img.at(x0, y0, c) + ax * (1 - ay) * img.at(x1, y0, c) +
         (1 - ax) * ay * img.at(x0, y1, c) + ax * ay * img.at(x1, y1, c);
}

}  // namespace

TEST(Image, RejectsWrongLengthAndNonFinite) {
  EXPECT_THROW(Image(2, 2, ColorSpace::Gray, std::vector<float>(3)), Error);
  EXPECT_THROW(Image(1, 1, ColorSpace::RGB, std::vector<float>{0.f, NAN, 0.f}), Error);
  EXPECT_THROW(Image(0, 4, ColorSpace::Gray), Error);
  const Image lab(4, 3, ColorSpace::CIELab);
  EXPECT_EQ(lab.channels(), 3);
  EXPECT_EQ(lab.data().size(), 36u);
}

TEST(ColorConversion, WhiteAndBlack) {
  const Image white = to_cielab(rgb_pixel(1, 1, 1));
  EXPECT_NEAR(white.at(0, 0, 0), 100.0f, 1e-3);
  EXPECT_LT(std::abs(white.at(0, 0, 1)), 0.5f);
  EXPECT_LT(std::abs(white.at(0, 0, 2)), 0.5f);
  const Image black = to_cielab(rgb_pixel(0, 0, 0));
  EXPECT_EQ(black.at(0, 0, 0), 0.0f);
  EXPECT_EQ(black.at(0, 0, 1), 0.0f);
  EXPECT_EQ(black.at(0, 0, 2), 0.0f);
}

TEST(ColorConversion, MidGrayMatchesReference) {
  const Image lab = to_cielab(rgb_pixel(0.5f, 0.5f, 0.5f));
  EXPECT_NEAR(lab.at(0, 0, 0), 53.38896474111432, 1e-3);
  const auto ref = reference_lab(0.5L, 0.5L, 0.5L);
  EXPECT_NEAR(lab.at(0, 0, 0), static_cast<double>(ref[0]), 1e-3);
}

TEST(ColorConversion, RandomColorsMatchReference) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (int i = 0; i < 500; ++i) {
    const float r = u(rng), g = u(rng), b = u(rng);
    const Image lab = to_cielab(rgb_pixel(r, g, b));
    const auto ref = reference_lab(r, g, b);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(lab.at(0, 0, c), static_cast<double>(ref[c]), 2e-3);
  }
}

TEST(ColorConversion, RoundTripWithinTolerance) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> data(3 * 64 * 64);
  for (auto& v : data) v = u(rng);
  const Image rgb(64, 64, ColorSpace::RGB, data);
  const Image back = lab_to_rgb(to_cielab(rgb));
  float worst = 0.f;
  for (std::size_t i = 0; i < data.size(); ++i) worst = std::max(worst, std::abs(back.data()[i] - data[i]));
  EXPECT_LT(worst, 1e-3f);
}

TEST(ColorConversion, GrayIsTreatedAsEqualChannels) {
  const Image gray(1, 1, ColorSpace::Gray, std::vector<float>{0.5f});
  const Image lab = to_cielab(gray);
  EXPECT_NEAR(lab.at(0, 0, 0), 53.38896474111432, 1e-3);
  EXPECT_NEAR(lab.at(0, 0, 1), 0.0, 1e-3);
}

TEST(Bilinear, LatticeAndMidpoint) {
  Image img(6, 7, ColorSpace::Gray);
  for (int y = 0; y < 7; ++y)
    for (int x = 0; x < 6; ++x) img.at(x, y) = static_cast<float>(x * 10 + y * 100);
  EXPECT_EQ(sample_bilinear(img, 3, 5), img.at(3, 5));
  Image row(2, 1, ColorSpace::Gray, std::vector<float>{10.f, 20.f});
  EXPECT_FLOAT_EQ(sample_bilinear(row, 0.5f, 0.f), 15.f);
}

TEST(Bilinear, MatchesOracleAndBounds) {
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> val(-3.f, 3.f);
  std::vector<float> data(3 * 17 * 13);
  for (auto& v : data) v = val(rng);
  const Image img(17, 13, ColorSpace::RGB, data);
  std::uniform_real_distribution<float> ux(0.f, 16.f), uy(0.f, 12.f);
  for (int i = 0; i < 5000; ++i) {
    const float x = ux(rng), y = uy(rng);
    const int c = i % 3;
    const float s = sample_bilinear(img, x, y, c);
    EXPECT_NEAR(s, oracle_bilinear(img, x, y, c), 1e-6);
    const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
    const int x1 = std::min(x0 + 1, 16), y1 = std::min(y0 + 1, 12);
    const float lo = std::min({img.at(x0, y0, c), img.at(x1, y0, c), img.at(x0, y1, c), img.at(x1, y1, c)});
    const float hi = std::max({img.at(x0, y0, c), img.at(x1, y0, c), img.at(x0, y1, c), img.at(x1, y1, c)});
    EXPECT_GE(s, lo - 1e-6f);
    EXPECT_LE(s, hi + 1e-6f);
  }
}

TEST(Bilinear, OutOfRangeThrows) {
  const Image img(4, 4, ColorSpace::Gray);
  try {
    sample_bilinear(img, 3.5f, 0.f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfBounds);
  }
  EXPECT_THROW(sample_bilinear(img, -0.01f, 0.f), Error);
  EXPECT_THROW(sample_bilinear(img, 0.f, 0.f, 1), Error);
}

TEST(Pyramid, ScheduleFor512) {
  const Image img(512, 512, ColorSpace::Gray, 0.25f);
  const ScalePyramid p = build_pyramid(img);
  ASSERT_EQ(p.size(), 11u);
  for (std::size_t k = 0; k < p.size(); ++k) {
    EXPECT_NEAR(p.scale_factors[k], std::pow(2.0, -static_cast<double>(k) / 2.0), 1e-12);
    EXPECT_EQ(p.levels[k].width(), static_cast<int>(std::lround(512 * p.scale_factors[k])));
    if (k > 0) {
      EXPECT_LT(p.scale_factors[k], p.scale_factors[k - 1]);
      EXPECT_LT(p.levels[k].width(), p.levels[k - 1].width());
    }
  }
  EXPECT_EQ(p.levels.back().width(), 16);
}

TEST(Pyramid, SubSubScalesQuarterOctave) {
  PyramidConfig cfg;
  cfg.sub_sub_scales = true;
  const auto s = pyramid_scales(128, 96, cfg);
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(s[k], std::pow(2.0, -static_cast<double>(k) / 4.0), 1e-12);
  EXPECT_GE(scaled_dimension(96, s.back()), 16);
  EXPECT_LT(scaled_dimension(96, std::pow(2.0, -static_cast<double>(s.size()) / 4.0)), 16);
}

TEST(Pyramid, ConstantImageStaysConstant) {
  const Image img(100, 70, ColorSpace::RGB, 0.375f);
  const ScalePyramid p = build_pyramid(img);
  for (const auto& level : p.levels)
    for (float v : level.data()) EXPECT_NEAR(v, 0.375f, 1e-6f);
}

TEST(Pyramid, LevelMeansPreserved) {
  const synth::Texture tex(21);
  const Image img = synth::render(640, 480, [&](double x, double y) { return tex(x, y); });
  const ScalePyramid p = build_pyramid(img);
  auto mean = [](const Image& im) {
    double s = 0;
    for (float v : im.data()) s += v;
    return s / static_cast<double>(im.data().size());
  };
  const double m0 = mean(img);
  for (const auto& level : p.levels) EXPECT_NEAR(mean(level), m0, 0.01 * m0);
}

TEST(Pyramid, TooSmallThrows) {
  const Image img(31, 64, ColorSpace::Gray);
  try {
    build_pyramid(img);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
}

TEST(Blur, KernelNormalizedAndConstantPreserved) {
  for (double s : {0.5, 1.0, 2.7}) {
    const auto k = gaussian_kernel(s);
    double sum = 0;
    for (float v : k) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
  const Image img(20, 20, ColorSpace::Gray, 0.7f);
  for (float v : gaussian_blur(img, 1.5).data()) EXPECT_NEAR(v, 0.7f, 1e-6f);
}
