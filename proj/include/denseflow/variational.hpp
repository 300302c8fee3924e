#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"
#include "denseflow/parallel.hpp"

namespace denseflow {

struct VariationalParams {
  int outer_iterations = 5;
  int inner_fixed_point_iterations = 5;
  int sor_iterations = 30;
  double sor_omega = 1.85;
  double alpha = 1.0;
  double gamma = 0.72;
  double robust_epsilon = 1e-3;
  double presmooth_sigma = 1.0;  // Gaussian blur of both frames before the data term; 0 disables
  int threads = 1;

  void validate() const {
    if (outer_iterations < 1) throw Error(ErrorCode::InvalidInput, "outer iterations must be >= 1");
    if (inner_fixed_point_iterations < 1 || sor_iterations < 1)
      throw Error(ErrorCode::InvalidInput, "inner and SOR iterations must be >= 1");
    if (!(sor_omega > 0.0 && sor_omega < 2.0)) throw Error(ErrorCode::InvalidInput, "SOR omega must be in (0,2)");
    if (!(alpha >= 0.0) || !(gamma >= 0.0)) throw Error(ErrorCode::InvalidInput, "alpha and gamma must be >= 0");
    if (!(robust_epsilon > 0.0)) throw Error(ErrorCode::InvalidInput, "robust epsilon must be > 0");
    if (!(presmooth_sigma >= 0.0)) throw Error(ErrorCode::InvalidInput, "presmoothing sigma must be >= 0");
  }
};

/// True where the flow is optimized: the initial target lies inside frame 2.
struct OptimizationDomainMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> inside;

  bool at(int x, int y) const { return inside[static_cast<std::size_t>(y) * width + x] != 0; }
  std::size_t count() const { return static_cast<std::size_t>(std::count(inside.begin(), inside.end(), 1)); }
};

inline OptimizationDomainMask build_mask(const FlowField& w_init, int width, int height) {
  if (w_init.width != width || w_init.height != height)
    throw Error(ErrorCode::DimensionMismatch, "flow does not match image dimensions");
  OptimizationDomainMask mask{width, height, std::vector<std::uint8_t>(w_init.size(), 0)};
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = w_init.index(x, y);
      const double tx = x + static_cast<double>(w_init.u[i]);
      const double ty = y + static_cast<double>(w_init.v[i]);
      mask.inside[i] = (tx >= 0.0 && ty >= 0.0 && tx <= width - 1 && ty <= height - 1) ? 1 : 0;
    }
  return mask;
}

inline OptimizationDomainMask build_mask(const FlowField& w_init) { return build_mask(w_init, w_init.width, w_init.height); }

namespace detail {

// Double-precision plane with clamped bicubic lookup.
struct Plane {
  int w = 0, h = 0;
  std::vector<double> v;

  Plane() = default;
  Plane(int width, int height) : w(width), h(height), v(static_cast<std::size_t>(width) * height, 0.0) {}
  double& operator()(int x, int y) { return v[static_cast<std::size_t>(y) * w + x]; }
  double operator()(int x, int y) const { return v[static_cast<std::size_t>(y) * w + x]; }

  // Keys cubic convolution (a = -0.5) on a clamped 4x4 neighborhood.
  double sample(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(x), w - 1), y0 = std::min(static_cast<int>(y), h - 1);
    double kx[4], ky[4];
    cubic_weights(x - x0, kx);
    cubic_weights(y - y0, ky);
    double acc = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int yy = std::clamp(y0 - 1 + j, 0, h - 1);
      double row = 0.0;
      for (int i = 0; i < 4; ++i) row += kx[i] * (*this)(std::clamp(x0 - 1 + i, 0, w - 1), yy);
      acc += ky[j] * row;
    }
    return acc;
  }

  static void cubic_weights(double t, double* k) {
    constexpr double a = -0.5;
    const double t1 = t + 1.0, t3 = 1.0 - t, t4 = 2.0 - t;
    k[0] = ((a * t1 - 5.0 * a) * t1 + 8.0 * a) * t1 - 4.0 * a;
    k[1] = ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    k[2] = ((a + 2.0) * t3 - (a + 3.0)) * t3 * t3 + 1.0;
    k[3] = ((a * t4 - 5.0 * a) * t4 + 8.0 * a) * t4 - 4.0 * a;
  }

  Plane dx() const {
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(x, y) = 0.5 * ((*this)(std::min(x + 1, w - 1), y) - (*this)(std::max(x - 1, 0), y));
    return out;
  }
  Plane dy() const {
    Plane out(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out(x, y) = 0.5 * ((*this)(x, std::min(y + 1, h - 1)) - (*this)(x, std::max(y - 1, 0)));
    return out;
  }
};

// Data-term channels: CIELab (L in [0,100]), optionally blurred.
inline std::vector<Plane> data_channels(const Image& img, double sigma) {
  const Image lab = gaussian_blur(to_cielab(img), sigma);
  std::vector<Plane> planes(3, Plane(lab.width(), lab.height()));
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < lab.height(); ++y)
      for (int x = 0; x < lab.width(); ++x) planes[c](x, y) = lab.at(x, y, c);
  return planes;
}

struct ChannelStack {
  Plane i, ix, iy, ixx, ixy, iyy;
};

inline std::vector<ChannelStack> derivative_stacks(const std::vector<Plane>& planes, bool second_order) {
  std::vector<ChannelStack> out(planes.size());
  for (std::size_t c = 0; c < planes.size(); ++c) {
    out[c].i = planes[c];
    out[c].ix = planes[c].dx();
    out[c].iy = planes[c].dy();
    if (second_order) {
      out[c].ixx = out[c].ix.dx();
      out[c].ixy = out[c].ix.dy();
      out[c].iyy = out[c].iy.dy();
    }
  }
  return out;
}

inline double robust(double s2, double eps) { return std::sqrt(s2 + eps * eps); }
inline double robust_derivative(double s2, double eps) { return 0.5 / std::sqrt(s2 + eps * eps); }

// Squared flow gradient with forward differences (zero across the last
// row/column).
inline double smoothness_arg(const std::vector<double>& u, const std::vector<double>& v, int w, int h, int x, int y) {
  const std::size_t i = static_cast<std::size_t>(y) * w + x;
  double s = 0.0;
  if (x + 1 < w) {
    const double du = u[i + 1] - u[i], dv = v[i + 1] - v[i];
    s += du * du + dv * dv;
  }
  if (y + 1 < h) {
    const double du = u[i + w] - u[i], dv = v[i + w] - v[i];
    s += du * du + dv * dv;
  }
  return s;
}

inline double data_arg(const std::vector<ChannelStack>& f1, const std::vector<ChannelStack>& f2, double gamma, int x,
                       int y, double u, double v) {
  const double tx = x + u, ty = y + v;
  double s = 0.0;
  for (std::size_t c = 0; c < f1.size(); ++c) {
    const double dz = f2[c].i.sample(tx, ty) - f1[c].i(x, y);
    const double dxz = f2[c].ix.sample(tx, ty) - f1[c].ix(x, y);
    const double dyz = f2[c].iy.sample(tx, ty) - f1[c].iy(x, y);
    s += dz * dz + gamma * (dxz * dxz + dyz * dyz);
  }
  return s / static_cast<double>(f1.size());
}

inline double energy_impl(const std::vector<ChannelStack>& f1, const std::vector<ChannelStack>& f2,
                          const std::vector<double>& u, const std::vector<double>& v, const VariationalParams& p,
                          const OptimizationDomainMask& mask) {
  const int w = mask.width, h = mask.height;
  double data = 0.0, smooth = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      if (mask.inside[i]) data += robust(data_arg(f1, f2, p.gamma, x, y, u[i], v[i]), p.robust_epsilon);
      smooth += robust(smoothness_arg(u, v, w, h, x, y), p.robust_epsilon);
    }
  return data + p.alpha * smooth;
}

inline void check_inputs(const Image& img1, const Image& img2, const FlowField& w) {
  if (img1.width() != img2.width() || img1.height() != img2.height() || w.width != img1.width() ||
      w.height != img1.height())
    throw Error(ErrorCode::DimensionMismatch, "images and flow must share dimensions");
}

}  // namespace detail

/// E = sum over masked pixels of Psi(data) + alpha * sum over all pixels of
/// Psi(|grad u|^2 + |grad v|^2), Psi(s2) = sqrt(s2 + eps^2). The data term
/// averages brightness and gamma-weighted gradient constancy over the three
/// CIELab channels (unscaled, Gaussian pre-smoothed), with frame 2 and its
/// central-difference gradients sampled bicubically at x + w. Flow gradients use forward
/// differences.
inline double energy(const Image& img1, const Image& img2, const FlowField& w, const VariationalParams& params,
                     const OptimizationDomainMask& mask) {
  detail::check_inputs(img1, img2, w);
  if (mask.width != w.width || mask.height != w.height)
    throw Error(ErrorCode::DimensionMismatch, "mask does not match flow");
  const auto f1 = detail::derivative_stacks(detail::data_channels(img1, params.presmooth_sigma), false);
  const auto f2 = detail::derivative_stacks(detail::data_channels(img2, params.presmooth_sigma), false);
  const std::vector<double> u(w.u.begin(), w.u.end()), v(w.v.begin(), w.v.end());
  return detail::energy_impl(f1, f2, u, v, params, mask);
}

/// Warping refinement at full resolution. Each outer iteration linearizes
/// both constancy terms around the current flow and solves for the
/// increment with lagged robust weights (fixed point) and red-black SOR.
/// The increment is accepted only if the energy does not rise; otherwise it
/// is halved until it does (or dropped). Masked-out pixels keep w_init and
/// act as fixed neighbors in the smoothness coupling.
inline FlowField refine(const Image& img1, const Image& img2, const FlowField& w_init,
                        const VariationalParams& params) {
  params.validate();
  detail::check_inputs(img1, img2, w_init);
  const int w = w_init.width, h = w_init.height;
  const std::size_t n = w_init.size();
  const OptimizationDomainMask mask = build_mask(w_init, w, h);
  const auto f1 = detail::derivative_stacks(detail::data_channels(img1, params.presmooth_sigma), false);
  const auto f2 = detail::derivative_stacks(detail::data_channels(img2, params.presmooth_sigma), true);
  const double nch = static_cast<double>(f1.size());
  const double eps = params.robust_epsilon;

  std::vector<double> u(w_init.u.begin(), w_init.u.end()), v(w_init.v.begin(), w_init.v.end());
  double current = detail::energy_impl(f1, f2, u, v, params, mask);

  // Per-pixel linearized data coefficients.
  struct Coeffs {
    double xx, xy, yy, xz, yz, zz;  // quadratic form of the brightness part
    double gxx, gxy, gyy, gxz, gyz, gzz;  // gradient part
  };
  std::vector<Coeffs> coef(n);
  std::vector<double> du(n), dv(n), psi_d(n), psi_s(n);

  for (int outer = 0; outer < params.outer_iterations; ++outer) {
    parallel_for(h, params.threads, [&](int y) {
      for (int x = 0; x < w; ++x) {
        const std::size_t i = static_cast<std::size_t>(y) * w + x;
        Coeffs k{};
        if (mask.inside[i]) {
          const double tx = x + u[i], ty = y + v[i];
          for (std::size_t c = 0; c < f1.size(); ++c) {
            const auto& s1 = f1[c];
            const auto& s2 = f2[c];
            const double ix = s2.ix.sample(tx, ty), iy = s2.iy.sample(tx, ty);
            const double iz = s2.i.sample(tx, ty) - s1.i(x, y);
            const double ixx = s2.ixx.sample(tx, ty), ixy = s2.ixy.sample(tx, ty), iyy = s2.iyy.sample(tx, ty);
            const double ixz = ix - s1.ix(x, y), iyz = iy - s1.iy(x, y);
            k.xx += ix * ix;
            k.xy += ix * iy;
            k.yy += iy * iy;
            k.xz += ix * iz;
            k.yz += iy * iz;
            k.zz += iz * iz;
            k.gxx += ixx * ixx + ixy * ixy;
            k.gxy += ixx * ixy + ixy * iyy;
            k.gyy += ixy * ixy + iyy * iyy;
            k.gxz += ixx * ixz + ixy * iyz;
            k.gyz += ixy * ixz + iyy * iyz;
            k.gzz += ixz * ixz + iyz * iyz;
          }
        }
        coef[i] = k;
      }
    });
    std::fill(du.begin(), du.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);

    for (int inner = 0; inner < params.inner_fixed_point_iterations; ++inner) {
      parallel_for(h, params.threads, [&](int y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t i = static_cast<std::size_t>(y) * w + x;
          if (mask.inside[i]) {
            const Coeffs& k = coef[i];
            const double a = du[i], b = dv[i];
            const double bright = k.zz + 2.0 * (k.xz * a + k.yz * b) + k.xx * a * a + 2.0 * k.xy * a * b + k.yy * b * b;
            const double grad =
                k.gzz + 2.0 * (k.gxz * a + k.gyz * b) + k.gxx * a * a + 2.0 * k.gxy * a * b + k.gyy * b * b;
            psi_d[i] = detail::robust_derivative((bright + params.gamma * grad) / nch, eps);
          } else {
            psi_d[i] = 0.0;
          }
          double s = 0.0;
          if (x + 1 < w) {
            const double gu = u[i + 1] + du[i + 1] - u[i] - du[i], gv = v[i + 1] + dv[i + 1] - v[i] - dv[i];
            s += gu * gu + gv * gv;
          }
          if (y + 1 < h) {
            const double gu = u[i + w] + du[i + w] - u[i] - du[i], gv = v[i + w] + dv[i + w] - v[i] - dv[i];
            s += gu * gu + gv * gv;
          }
          psi_s[i] = detail::robust_derivative(s, eps);
        }
      });

      for (int it = 0; it < params.sor_iterations; ++it)
        for (int color = 0; color < 2; ++color)
          parallel_for(h, params.threads, [&](int y) {
            for (int x = (y + color) & 1; x < w; x += 2) {
              const std::size_t i = static_cast<std::size_t>(y) * w + x;
              if (!mask.inside[i]) continue;
              const Coeffs& k = coef[i];
              const double pd = psi_d[i] / nch;
              const double a11 = pd * (k.xx + params.gamma * k.gxx);
              const double a12 = pd * (k.xy + params.gamma * k.gxy);
              const double a22 = pd * (k.yy + params.gamma * k.gyy);
              const double b1 = pd * (k.xz + params.gamma * k.gxz);
              const double b2 = pd * (k.yz + params.gamma * k.gyz);
              double wsum = 0.0, nu = 0.0, nv = 0.0;
              auto couple = [&](std::size_t j, double weight) {
                weight *= params.alpha;
                wsum += weight;
                nu += weight * (u[j] + du[j] - u[i]);
                nv += weight * (v[j] + dv[j] - v[i]);
              };
              if (x + 1 < w) couple(i + 1, psi_s[i]);
              if (x > 0) couple(i - 1, psi_s[i - 1]);
              if (y + 1 < h) couple(i + w, psi_s[i]);
              if (y > 0) couple(i - w, psi_s[i - w]);
              const double d1 = a11 + wsum, d2 = a22 + wsum;
              if (d1 > 0.0) {
                const double target = (nu - b1 - a12 * dv[i]) / d1;
                du[i] += params.sor_omega * (target - du[i]);
              }
              if (d2 > 0.0) {
                const double target = (nv - b2 - a12 * du[i]) / d2;
                dv[i] += params.sor_omega * (target - dv[i]);
              }
            }
          });
    }

    // Safeguarded update.
    std::vector<double> tu(n), tv(n);
    double step = 1.0;
    bool accepted = false;
    for (int attempt = 0; attempt < 10 && !accepted; ++attempt, step *= 0.5) {
      for (std::size_t i = 0; i < n; ++i) {
        tu[i] = u[i] + step * du[i];
        tv[i] = v[i] + step * dv[i];
      }
      const double e = detail::energy_impl(f1, f2, tu, tv, params, mask);
      if (e <= current) {
        current = e;
        u.swap(tu);
        v.swap(tv);
        accepted = true;
      }
    }
    if (!accepted) break;
  }

  FlowField out = w_init;
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask.inside[i]) continue;
    out.u[i] = static_cast<float>(u[i]);
    out.v[i] = static_cast<float>(v[i]);
  }
  return out;
}

}  // namespace denseflow
