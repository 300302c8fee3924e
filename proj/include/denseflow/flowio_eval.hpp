#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "denseflow/error.hpp"
#include "denseflow/image.hpp"

namespace denseflow {

// ---------------------------------------------------------------------------
// Middlebury .flo: float 202021.25, int32 width, int32 height, then (u,v)
// float pairs row-major; all little-endian. Pixels without a valid flow are
// written as 1e10 and read back as invalid (|value| > 1e9).

inline constexpr float kFloMagic = 202021.25f;
inline constexpr float kFloUnknown = 1e10f;

namespace detail {

inline void put_le32(std::ostream& os, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(b, 4);
}

inline bool get_le32(std::istream& is, std::uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  return true;
}

}  // namespace detail

inline void write_flo(std::ostream& os, const FlowField& flow) {
  detail::put_le32(os, std::bit_cast<std::uint32_t>(kFloMagic));
  detail::put_le32(os, static_cast<std::uint32_t>(flow.width));
  detail::put_le32(os, static_cast<std::uint32_t>(flow.height));
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const bool ok = flow.valid[i] != 0;
    detail::put_le32(os, std::bit_cast<std::uint32_t>(ok ? flow.u[i] : kFloUnknown));
    detail::put_le32(os, std::bit_cast<std::uint32_t>(ok ? flow.v[i] : kFloUnknown));
  }
}

inline FlowField read_flo(std::istream& is) {
  std::uint32_t magic = 0, w = 0, h = 0;
  if (!detail::get_le32(is, magic)) throw Error(ErrorCode::Truncated, ".flo header is truncated");
  if (std::bit_cast<float>(magic) != kFloMagic) throw Error(ErrorCode::BadMagic, ".flo magic mismatch");
  if (!detail::get_le32(is, w) || !detail::get_le32(is, h)) throw Error(ErrorCode::Truncated, ".flo header is truncated");
  const auto sw = static_cast<std::int32_t>(w), sh = static_cast<std::int32_t>(h);
  if (sw <= 0 || sh <= 0 || sw > 100000 || sh > 100000)
    throw Error(ErrorCode::Format, ".flo dimensions " + std::to_string(sw) + "x" + std::to_string(sh) + " are invalid");
  FlowField flow(sw, sh);
  for (std::size_t i = 0; i < flow.size(); ++i) {
    std::uint32_t u = 0, v = 0;
    if (!detail::get_le32(is, u) || !detail::get_le32(is, v)) throw Error(ErrorCode::Truncated, ".flo data is truncated");
    flow.u[i] = std::bit_cast<float>(u);
    flow.v[i] = std::bit_cast<float>(v);
    const bool known = std::isfinite(flow.u[i]) && std::isfinite(flow.v[i]) && std::abs(flow.u[i]) <= 1e9f &&
                       std::abs(flow.v[i]) <= 1e9f;
    if (!known) {
      flow.u[i] = flow.v[i] = 0.0f;
      flow.valid[i] = 0;
    }
  }
  return flow;
}

inline void write_flo(const std::string& path, const FlowField& flow) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  write_flo(os, flow);
  if (!os) throw Error(ErrorCode::Io, "failed writing " + path);
}

inline FlowField read_flo(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::FileNotFound, path);
  return read_flo(is);
}

// ---------------------------------------------------------------------------
// PNG rasters (libpng). Samples are kept at their stored bit depth.

struct PngRaster {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 gray, 2 gray+alpha, 3 RGB, 4 RGBA
  int bit_depth = 8;  // 8 or 16
  std::vector<std::uint16_t> samples;

  std::uint16_t at(int x, int y, int c) const {
    return samples[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

struct PngFile {
  std::FILE* f = nullptr;
  explicit PngFile(const std::string& path, const char* mode) : f(std::fopen(path.c_str(), mode)) {}
  ~PngFile() {
    if (f) std::fclose(f);
  }
  PngFile(const PngFile&) = delete;
  PngFile& operator=(const PngFile&) = delete;
};

// The libpng calls are isolated here so that longjmp never crosses frames
// with non-trivial destructors. Returns an empty string on success.
inline const char* png_read_rows(std::FILE* f, PngRaster* out, std::vector<png_byte>* row) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate PNG reader";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return "cannot allocate PNG info";
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return "corrupt or truncated PNG";
  }
  png_init_io(png, f);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out->width = static_cast<int>(png_get_image_width(png, info));
  out->height = static_cast<int>(png_get_image_height(png, info));
  out->channels = png_get_channels(png, info);
  out->bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out->samples.resize(static_cast<std::size_t>(out->width) * out->height * out->channels);
  row->resize(rowbytes);
  const std::size_t per_row = static_cast<std::size_t>(out->width) * out->channels;
  for (int y = 0; y < out->height; ++y) {
    png_bytep bytes = row->data();
    png_read_row(png, bytes, nullptr);
    std::uint16_t* dst = out->samples.data() + static_cast<std::size_t>(y) * per_row;
    for (std::size_t k = 0; k < per_row; ++k)
      dst[k] = out->bit_depth == 16 ? static_cast<std::uint16_t>((bytes[2 * k] << 8) | bytes[2 * k + 1]) : bytes[k];
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return "";
}

inline const char* png_write_rows(std::FILE* f, const PngRaster* in, std::vector<png_byte>* row) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) return "cannot allocate PNG writer";
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return "cannot allocate PNG info";
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return "PNG encoding failed";
  }
  static constexpr int kTypes[5] = {0, PNG_COLOR_TYPE_GRAY, PNG_COLOR_TYPE_GRAY_ALPHA, PNG_COLOR_TYPE_RGB,
                                    PNG_COLOR_TYPE_RGBA};
  png_init_io(png, f);
  png_set_IHDR(png, info, static_cast<png_uint_32>(in->width), static_cast<png_uint_32>(in->height), in->bit_depth,
               kTypes[in->channels], PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t per_row = static_cast<std::size_t>(in->width) * in->channels;
  const std::size_t bytes = in->bit_depth == 16 ? 2 : 1;
  for (int y = 0; y < in->height; ++y) {
    const std::uint16_t* src = in->samples.data() + static_cast<std::size_t>(y) * per_row;
    png_byte* dst = row->data();
    for (std::size_t k = 0; k < per_row; ++k) {
      if (bytes == 2) {
        dst[2 * k] = static_cast<png_byte>(src[k] >> 8);
        dst[2 * k + 1] = static_cast<png_byte>(src[k] & 0xff);
      } else {
        dst[k] = static_cast<png_byte>(src[k]);
      }
    }
    png_write_row(png, dst);
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return "";
}

}  // namespace detail

inline PngRaster read_png(const std::string& path) {
  detail::PngFile file(path, "rb");
  if (!file.f) throw Error(ErrorCode::FileNotFound, path);
  png_byte sig[8];
  const std::size_t got = std::fread(sig, 1, 8, file.f);
  if (got == 0 || png_sig_cmp(sig, 0, got) != 0) throw Error(ErrorCode::BadMagic, path + " is not a PNG file");
  if (got != 8) throw Error(ErrorCode::Truncated, path);
  PngRaster out;
  std::vector<png_byte> row;
  const std::string err = detail::png_read_rows(file.f, &out, &row);
  if (!err.empty()) throw Error(ErrorCode::Format, path + ": " + err);
  return out;
}

inline void write_png(const std::string& path, const PngRaster& raster) {
  if (raster.channels < 1 || raster.channels > 4 || (raster.bit_depth != 8 && raster.bit_depth != 16) ||
      raster.samples.size() != static_cast<std::size_t>(raster.width) * raster.height * raster.channels)
    throw Error(ErrorCode::InvalidInput, "malformed PNG raster");
  detail::PngFile file(path, "wb");
  if (!file.f) throw Error(ErrorCode::Io, "cannot open " + path + " for writing");
  std::vector<png_byte> row(static_cast<std::size_t>(raster.width) * raster.channels * (raster.bit_depth / 8));
  const std::string err = detail::png_write_rows(file.f, &raster, &row);
  if (!err.empty()) throw Error(ErrorCode::Io, path + ": " + err);
}

// ---------------------------------------------------------------------------
// KITTI flow PNG: 16-bit RGB, u = (R - 2^15)/64, v = (G - 2^15)/64, valid = B > 0.

inline std::uint16_t kitti_encode(float value) {
  const double q = std::round(static_cast<double>(value) * 64.0 + 32768.0);
  return static_cast<std::uint16_t>(std::clamp(q, 0.0, 65535.0));
}

inline float kitti_decode(std::uint16_t stored) { return (static_cast<float>(stored) - 32768.0f) / 64.0f; }

inline void write_kitti_png(const std::string& path, const FlowField& flow) {
  PngRaster r{flow.width, flow.height, 3, 16, std::vector<std::uint16_t>(flow.size() * 3)};
  for (std::size_t i = 0; i < flow.size(); ++i) {
    const bool ok = flow.valid[i] != 0;
    r.samples[3 * i] = ok ? kitti_encode(flow.u[i]) : 0;
    r.samples[3 * i + 1] = ok ? kitti_encode(flow.v[i]) : 0;
    r.samples[3 * i + 2] = ok ? 1 : 0;
  }
  write_png(path, r);
}

inline FlowField read_kitti_png(const std::string& path) {
  const PngRaster r = read_png(path);
  if (r.bit_depth != 16 || r.channels != 3)
    throw Error(ErrorCode::Format, path + ": KITTI flow must be a 16-bit 3-channel PNG");
  FlowField flow(r.width, r.height);
  for (std::size_t i = 0; i < flow.size(); ++i) {
    flow.valid[i] = r.samples[3 * i + 2] > 0 ? 1 : 0;
    flow.u[i] = flow.valid[i] ? kitti_decode(r.samples[3 * i]) : 0.0f;
    flow.v[i] = flow.valid[i] ? kitti_decode(r.samples[3 * i + 1]) : 0.0f;
  }
  return flow;
}

/// Reads .flo or KITTI PNG by extension.
inline FlowField read_flow(const std::string& path) {
  const auto dot = path.rfind('.');
  const std::string ext = dot == std::string::npos ? "" : path.substr(dot);
  if (ext == ".png" || ext == ".PNG") return read_kitti_png(path);
  return read_flo(path);
}

// ---------------------------------------------------------------------------
// Images: PNG (8/16-bit gray or color, alpha dropped) and binary PGM/PPM.
// Samples are scaled to [0,1].

namespace detail {

inline Image read_pnm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::FileNotFound, path);
  std::string magic;
  is >> magic;
  if (magic != "P5" && magic != "P6") throw Error(ErrorCode::BadMagic, path + " is not a binary PGM/PPM");
  auto next_int = [&]() {
    int v = -1;
    while (is >> std::ws && is.peek() == '#') is.ignore(std::numeric_limits<std::streamsize>::max(), '\n');
    if (!(is >> v)) throw Error(ErrorCode::Truncated, path);
    return v;
  };
  const int w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) throw Error(ErrorCode::Format, path + ": bad PNM header");
  is.get();
  const int ch = magic == "P6" ? 3 : 1;
  const int bytes = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * ch * bytes);
  if (!is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size())))
    throw Error(ErrorCode::Truncated, path);
  std::vector<float> data(static_cast<std::size_t>(w) * h * ch);
  for (std::size_t k = 0; k < data.size(); ++k) {
    const int v = bytes == 2 ? (raw[2 * k] << 8) | raw[2 * k + 1] : raw[k];
    data[k] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  return Image(w, h, ch == 3 ? ColorSpace::RGB : ColorSpace::Gray, std::move(data));
}

}  // namespace detail

inline Image read_image(const std::string& path) {
  std::ifstream probe(path, std::ios::binary);
  if (!probe) throw Error(ErrorCode::FileNotFound, path);
  char head[2] = {0, 0};
  probe.read(head, 2);
  probe.close();
  if (head[0] == 'P' && (head[1] == '5' || head[1] == '6')) return detail::read_pnm(path);
  const PngRaster r = read_png(path);
  const float scale = r.bit_depth == 16 ? 65535.0f : 255.0f;
  const bool color = r.channels >= 3;
  std::vector<float> data(static_cast<std::size_t>(r.width) * r.height * (color ? 3 : 1));
  std::size_t k = 0;
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < (color ? 3 : 1); ++c) data[k++] = r.at(x, y, c) / scale;
  return Image(r.width, r.height, color ? ColorSpace::RGB : ColorSpace::Gray, std::move(data));
}

/// Writes a Gray or RGB image with samples in [0,1] as an 8-bit PNG.
inline void write_image_png(const std::string& path, const Image& img) {
  if (img.colorspace() == ColorSpace::CIELab) throw Error(ErrorCode::InvalidInput, "convert CIELab before writing");
  PngRaster r{img.width(), img.height(), img.channels(), 8, std::vector<std::uint16_t>(img.data().size())};
  for (std::size_t k = 0; k < r.samples.size(); ++k)
    r.samples[k] = static_cast<std::uint16_t>(std::lround(std::clamp(img.data()[k], 0.0f, 1.0f) * 255.0f));
  write_png(path, r);
}

/// Region mask from a PNG: nonzero first channel = inside.
struct RegionMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> inside;
};

inline RegionMask read_mask_png(const std::string& path) {
  const PngRaster r = read_png(path);
  RegionMask m{r.width, r.height, std::vector<std::uint8_t>(static_cast<std::size_t>(r.width) * r.height)};
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) m.inside[static_cast<std::size_t>(y) * r.width + x] = r.at(x, y, 0) != 0 ? 1 : 0;
  return m;
}

inline void write_mask_png(const std::string& path, const RegionMask& mask) {
  PngRaster r{mask.width, mask.height, 1, 8, std::vector<std::uint16_t>(mask.inside.size())};
  for (std::size_t i = 0; i < mask.inside.size(); ++i) r.samples[i] = mask.inside[i] ? 255 : 0;
  write_png(path, r);
}

// ---------------------------------------------------------------------------
// Metrics.

namespace detail {

inline void check_metric_inputs(const FlowField& est, const FlowField& gt, const RegionMask* mask) {
  if (!est.same_shape(gt)) throw Error(ErrorCode::DimensionMismatch, "estimate and ground truth differ in size");
  if (mask && (mask->width != gt.width || mask->height != gt.height))
    throw Error(ErrorCode::DimensionMismatch, "region mask differs in size");
}

inline double endpoint_error(const FlowField& est, const FlowField& gt, std::size_t i) {
  return std::hypot(static_cast<double>(est.u[i]) - gt.u[i], static_cast<double>(est.v[i]) - gt.v[i]);
}

inline bool is_fl_outlier(const FlowField& est, const FlowField& gt, std::size_t i) {
  const double e = endpoint_error(est, gt, i);
  return e > 3.0 && e > 0.05 * std::hypot(static_cast<double>(gt.u[i]), static_cast<double>(gt.v[i]));
}

}  // namespace detail

/// Mean endpoint error over pixels with valid ground truth (and inside the
/// mask, if given).
inline double epe(const FlowField& est, const FlowField& gt, const RegionMask* mask = nullptr) {
  detail::check_metric_inputs(est, gt, mask);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || (mask && !mask->inside[i])) continue;
    sum += detail::endpoint_error(est, gt, i);
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::UndefinedMetric, "no pixels to evaluate");
  return sum / static_cast<double>(n);
}

/// Percentage of evaluated pixels with endpoint error > 3 px and > 5% of the
/// ground-truth magnitude.
inline double fl_outlier_rate(const FlowField& est, const FlowField& gt, const RegionMask* mask = nullptr) {
  detail::check_metric_inputs(est, gt, mask);
  std::size_t bad = 0, n = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i] || (mask && !mask->inside[i])) continue;
    bad += detail::is_fl_outlier(est, gt, i) ? 1 : 0;
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::UndefinedMetric, "no pixels to evaluate");
  return 100.0 * static_cast<double>(bad) / static_cast<double>(n);
}

/// Split metrics are present only when the corresponding mask was supplied
/// and the category is non-empty.
struct EvalReport {
  double epe_all = 0.0;
  double fl_all = 0.0;
  std::optional<double> epe_matched, epe_unmatched;
  std::optional<double> fl_bg, fl_fg;
  std::size_t n_all = 0;
  std::size_t n_matched = 0, n_unmatched = 0;
  std::size_t n_bg = 0, n_fg = 0;
};

/// `matched` marks pixels visible in both frames; `foreground` marks object
/// pixels.
inline EvalReport evaluate(const FlowField& est, const FlowField& gt, const RegionMask* matched = nullptr,
                           const RegionMask* foreground = nullptr) {
  detail::check_metric_inputs(est, gt, matched);
  detail::check_metric_inputs(est, gt, foreground);
  EvalReport r;
  double e_all = 0.0, e_m = 0.0, e_u = 0.0;
  std::size_t o_all = 0, o_bg = 0, o_fg = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!gt.valid[i]) continue;
    const double e = detail::endpoint_error(est, gt, i);
    const bool outlier = detail::is_fl_outlier(est, gt, i);
    ++r.n_all;
    e_all += e;
    o_all += outlier;
    if (matched) {
      if (matched->inside[i]) {
        ++r.n_matched;
        e_m += e;
      } else {
        ++r.n_unmatched;
        e_u += e;
      }
    }
    if (foreground) {
      if (foreground->inside[i]) {
        ++r.n_fg;
        o_fg += outlier;
      } else {
        ++r.n_bg;
        o_bg += outlier;
      }
    }
  }
  if (r.n_all == 0) throw Error(ErrorCode::UndefinedMetric, "no pixels to evaluate");
  r.epe_all = e_all / static_cast<double>(r.n_all);
  r.fl_all = 100.0 * static_cast<double>(o_all) / static_cast<double>(r.n_all);
  if (r.n_matched) r.epe_matched = e_m / static_cast<double>(r.n_matched);
  if (r.n_unmatched) r.epe_unmatched = e_u / static_cast<double>(r.n_unmatched);
  if (r.n_bg) r.fl_bg = 100.0 * static_cast<double>(o_bg) / static_cast<double>(r.n_bg);
  if (r.n_fg) r.fl_fg = 100.0 * static_cast<double>(o_fg) / static_cast<double>(r.n_fg);
  return r;
}

/// Per-metric mean over frames; an optional metric averages over the frames
/// that report it.
inline EvalReport mean_report(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw Error(ErrorCode::UndefinedMetric, "no frames to aggregate");
  EvalReport m;
  auto mean_opt = [&](std::optional<double> EvalReport::*field) -> std::optional<double> {
    double s = 0.0;
    int n = 0;
    for (const auto& r : reports)
      if ((r.*field).has_value()) {
        s += *(r.*field);
        ++n;
      }
    if (n == 0) return std::nullopt;
    return s / n;
  };
  for (const auto& r : reports) {
    m.epe_all += r.epe_all;
    m.fl_all += r.fl_all;
    m.n_all += r.n_all;
    m.n_matched += r.n_matched;
    m.n_unmatched += r.n_unmatched;
    m.n_bg += r.n_bg;
    m.n_fg += r.n_fg;
  }
  m.epe_all /= static_cast<double>(reports.size());
  m.fl_all /= static_cast<double>(reports.size());
  m.epe_matched = mean_opt(&EvalReport::epe_matched);
  m.epe_unmatched = mean_opt(&EvalReport::epe_unmatched);
  m.fl_bg = mean_opt(&EvalReport::fl_bg);
  m.fl_fg = mean_opt(&EvalReport::fl_fg);
  return m;
}

namespace detail {

inline std::string fmt_metric(const std::optional<double>& v, int precision) {
  if (!v) return "n/a";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << *v;
  return os.str();
}

}  // namespace detail

/// Aligned text table, one row per (name, report).
inline std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t name_w = 5;
  for (const auto& [name, r] : rows) name_w = std::max(name_w, name.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "frame" << std::right;
  for (const char* h : {"EPE-all", "EPE-mat", "EPE-unm", "Fl-all%", "Fl-bg%", "Fl-fg%", "pixels"}) os << std::setw(10) << h;
  os << '\n';
  for (const auto& [name, r] : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << name << std::right;
    os << std::setw(10) << detail::fmt_metric(r.epe_all, 4) << std::setw(10) << detail::fmt_metric(r.epe_matched, 4)
       << std::setw(10) << detail::fmt_metric(r.epe_unmatched, 4) << std::setw(10) << detail::fmt_metric(r.fl_all, 3)
       << std::setw(10) << detail::fmt_metric(r.fl_bg, 3) << std::setw(10) << detail::fmt_metric(r.fl_fg, 3)
       << std::setw(10) << r.n_all << '\n';
  }
  return os.str();
}

/// Machine-readable "prefix.key=value" lines.
inline std::string format_report_kv(const std::string& prefix, const EvalReport& r) {
  std::ostringstream os;
  os << std::setprecision(17);
  auto put = [&](const char* key, const std::optional<double>& v) {
    if (v) os << prefix << '.' << key << '=' << *v << '\n';
  };
  put("epe_all", r.epe_all);
  put("epe_matched", r.epe_matched);
  put("epe_unmatched", r.epe_unmatched);
  put("fl_all", r.fl_all);
  put("fl_bg", r.fl_bg);
  put("fl_fg", r.fl_fg);
  os << prefix << ".n_all=" << r.n_all << '\n';
  os << prefix << ".n_matched=" << r.n_matched << '\n' << prefix << ".n_unmatched=" << r.n_unmatched << '\n';
  os << prefix << ".n_bg=" << r.n_bg << '\n' << prefix << ".n_fg=" << r.n_fg << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// Middlebury color-wheel rendering.

namespace detail {

inline const std::vector<std::array<double, 3>>& color_wheel() {
  static const std::vector<std::array<double, 3>> wheel = [] {
    constexpr int kRY = 15, kYG = 6, kGC = 4, kCB = 11, kBM = 13, kMR = 6;
    std::vector<std::array<double, 3>> w;
    for (int i = 0; i < kRY; ++i) w.push_back({255.0, 255.0 * i / kRY, 0.0});
    for (int i = 0; i < kYG; ++i) w.push_back({255.0 - 255.0 * i / kYG, 255.0, 0.0});
    for (int i = 0; i < kGC; ++i) w.push_back({0.0, 255.0, 255.0 * i / kGC});
    for (int i = 0; i < kCB; ++i) w.push_back({0.0, 255.0 - 255.0 * i / kCB, 255.0});
    for (int i = 0; i < kBM; ++i) w.push_back({255.0 * i / kBM, 0.0, 255.0});
    for (int i = 0; i < kMR; ++i) w.push_back({255.0, 0.0, 255.0 - 255.0 * i / kMR});
    return w;
  }();
  return wheel;
}

}  // namespace detail

/// Position on the color wheel in [0, 1) for a flow direction; opposite
/// directions are half a turn apart.
inline double wheel_position(double u, double v) {
  const double a = std::atan2(-v, -u) / std::numbers::pi;  // (-1, 1]
  const double t = (a + 1.0) / 2.0;
  return t >= 1.0 ? t - 1.0 : t;
}

/// RGB in [0,1] for a flow vector already divided by the maximum magnitude.
inline std::array<double, 3> flow_color(double fu, double fv) {
  const auto& wheel = detail::color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const double rad = std::hypot(fu, fv);
  const double fk = (std::atan2(-fv, -fu) / std::numbers::pi + 1.0) / 2.0 * (ncols - 1);
  const int k0 = static_cast<int>(fk);
  const int k1 = (k0 + 1) % ncols;
  const double f = fk - k0;
  std::array<double, 3> out{};
  for (int c = 0; c < 3; ++c) {
    double col = ((1.0 - f) * wheel[k0][c] + f * wheel[k1][c]) / 255.0;
    col = rad <= 1.0 ? 1.0 - rad * (1.0 - col) : col * 0.75;
    out[c] = col;
  }
  return out;
}

/// Color-coded flow; magnitudes are normalized by `max_magnitude` (default:
/// 99th percentile of valid magnitudes). Invalid pixels are black.
inline Image visualize(const FlowField& flow, std::optional<double> max_magnitude = std::nullopt) {
  double maxmag = 0.0;
  if (max_magnitude) {
    maxmag = *max_magnitude;
  } else {
    std::vector<double> mags;
    for (std::size_t i = 0; i < flow.size(); ++i)
      if (flow.valid[i]) mags.push_back(std::hypot(static_cast<double>(flow.u[i]), static_cast<double>(flow.v[i])));
    if (!mags.empty()) {
      const std::size_t rank = static_cast<std::size_t>(0.99 * static_cast<double>(mags.size() - 1));
      std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(rank), mags.end());
      maxmag = mags[rank];
    }
  }
  if (!(maxmag > 0.0)) maxmag = 1.0;
  Image out(flow.width, flow.height, ColorSpace::RGB);
  for (int y = 0; y < flow.height; ++y)
    for (int x = 0; x < flow.width; ++x) {
      const std::size_t i = flow.index(x, y);
      if (!flow.valid[i]) continue;
      const auto c = flow_color(flow.u[i] / maxmag, flow.v[i] / maxmag);
      for (int k = 0; k < 3; ++k) out.at(x, y, k) = static_cast<float>(c[k]);
    }
  return out;
}

}  // namespace denseflow
