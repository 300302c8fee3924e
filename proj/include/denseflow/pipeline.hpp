#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "denseflow/descriptors.hpp"
#include "denseflow/edge_geodesic.hpp"
#include "denseflow/error.hpp"
#include "denseflow/flowio_eval.hpp"
#include "denseflow/image.hpp"
#include "denseflow/interpolator.hpp"
#include "denseflow/matcher.hpp"
#include "denseflow/outlier_filter.hpp"
#include "denseflow/parallel.hpp"
#include "denseflow/superpixels.hpp"
#include "denseflow/variational.hpp"

namespace denseflow {

struct PipelineConfig {
  std::string preset = "sintel";
  MatchingParams matching;
  FilterParams filter;
  GeodesicParams geodesic;
  SlicParams slic;
  int grid_step = 50;
  InterpParams interp;
  VariationalParams variational;

  void set_seed(std::uint64_t seed) {
    matching.seed = seed;
    interp.seed = seed;
  }
  void set_threads(int threads) {
    if (threads < 1) throw Error(ErrorCode::InvalidInput, "threads must be >= 1");
    matching.threads = interp.threads = variational.threads = threads;
  }
};

/// `kitti`: SIFT, eps 1, s 7, superpixel size 20, neighborhood 150, 2
/// variational iterations. `sintel`: Census, eps 7, s 4, 50, 200, 5.
inline PipelineConfig make_preset(const std::string& name) {
  PipelineConfig c;
  c.preset = name;
  if (name == "kitti") {
    c.matching.descriptor = DescriptorKind::Sift;
    c.matching.patch_radius = kDefaultSiftRadius;
    c.filter.epsilon = 1.0f;
    c.filter.min_matches_s = 7;
    c.grid_step = 20;
    c.interp.neighborhood_size = 150;
    c.variational.outer_iterations = 2;
  } else if (name == "sintel") {
    c.matching.descriptor = DescriptorKind::CensusCIELab;
    c.matching.patch_radius = 3;
    c.filter.epsilon = 7.0f;
    c.filter.min_matches_s = 4;
    c.grid_step = 50;
    c.interp.neighborhood_size = 200;
    c.variational.outer_iterations = 5;
  } else {
    throw Error(ErrorCode::InvalidInput, "unknown preset '" + name + "' (expected kitti or sintel)");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Flat "key = value" configuration. A `preset` key is expanded first; all
// other keys then override it. Blank lines and '#' comments are ignored.

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  std::istringstream is(text);
  T v{};
  if (!(is >> v) || !(is >> std::ws).eof()) throw Error(ErrorCode::Format, "bad value '" + text + "' for " + key);
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw Error(ErrorCode::Format, "bad boolean '" + text + "' for " + key);
}

using Setter = std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

template <typename T, typename Field>
Setter set_field(Field field) {
  return [field](PipelineConfig& c, const std::string& k, const std::string& v) { field(c) = parse_value<T>(k, v); };
}

inline const std::map<std::string, Setter>& config_setters() {
  static const std::map<std::string, Setter> setters = {
      {"descriptor",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         if (v == "sift") {
           c.matching.descriptor = DescriptorKind::Sift;
         } else if (v == "census") {
           c.matching.descriptor = DescriptorKind::CensusCIELab;
         } else {
           throw Error(ErrorCode::Format, "bad value '" + v + "' for " + k + " (sift or census)");
         }
       }},
      {"patch_radius", set_field<int>([](PipelineConfig& c) -> auto& { return c.matching.patch_radius; })},
      {"matching_iterations", set_field<int>([](PipelineConfig& c) -> auto& { return c.matching.iterations; })},
      {"random_search_radius",
       set_field<float>([](PipelineConfig& c) -> auto& { return c.matching.random_search_radius; })},
      {"random_searches_per_iteration",
       set_field<int>([](PipelineConfig& c) -> auto& { return c.matching.random_searches_per_iteration; })},
      {"kd_leaf_budget", set_field<int>([](PipelineConfig& c) -> auto& { return c.matching.kd_leaf_budget; })},
      {"pyramid_min_dimension",
       set_field<int>([](PipelineConfig& c) -> auto& { return c.matching.pyramid.min_dimension; })},
      {"sub_sub_scales",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.matching.pyramid.sub_sub_scales = parse_bool(k, v);
       }},
      {"epsilon", set_field<float>([](PipelineConfig& c) -> auto& { return c.filter.epsilon; })},
      {"min_matches_s", set_field<int>([](PipelineConfig& c) -> auto& { return c.filter.min_matches_s; })},
      {"min_region_area", set_field<int>([](PipelineConfig& c) -> auto& { return c.filter.min_region_area; })},
      {"region_flow_tolerance",
       set_field<float>([](PipelineConfig& c) -> auto& { return c.filter.region_flow_tolerance; })},
      {"geodesic_offset",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.geodesic.euclidean_offset = c.interp.geodesic_offset = parse_value<double>(k, v);
       }},
      {"superpixel_size", set_field<int>([](PipelineConfig& c) -> auto& { return c.grid_step; })},
      {"slic_compactness", set_field<double>([](PipelineConfig& c) -> auto& { return c.slic.compactness; })},
      {"slic_iterations", set_field<int>([](PipelineConfig& c) -> auto& { return c.slic.iterations; })},
      {"neighborhood_size", set_field<int>([](PipelineConfig& c) -> auto& { return c.interp.neighborhood_size; })},
      {"inlier_threshold", set_field<double>([](PipelineConfig& c) -> auto& { return c.interp.inlier_threshold; })},
      {"ransac_iterations", set_field<int>([](PipelineConfig& c) -> auto& { return c.interp.ransac_iterations; })},
      {"propagation_rounds", set_field<int>([](PipelineConfig& c) -> auto& { return c.interp.propagation_rounds; })},
      {"weight_sigma_fraction",
       set_field<double>([](PipelineConfig& c) -> auto& { return c.interp.weight_sigma_fraction; })},
      {"variational_iterations",
       set_field<int>([](PipelineConfig& c) -> auto& { return c.variational.outer_iterations; })},
      {"fixed_point_iterations",
       set_field<int>([](PipelineConfig& c) -> auto& { return c.variational.inner_fixed_point_iterations; })},
      {"sor_iterations", set_field<int>([](PipelineConfig& c) -> auto& { return c.variational.sor_iterations; })},
      {"sor_omega", set_field<double>([](PipelineConfig& c) -> auto& { return c.variational.sor_omega; })},
      {"alpha", set_field<double>([](PipelineConfig& c) -> auto& { return c.variational.alpha; })},
      {"gamma", set_field<double>([](PipelineConfig& c) -> auto& { return c.variational.gamma; })},
      {"robust_epsilon", set_field<double>([](PipelineConfig& c) -> auto& { return c.variational.robust_epsilon; })},
      {"presmooth_sigma", set_field<double>([](PipelineConfig& c) -> auto& { return c.variational.presmooth_sigma; })},
      {"seed",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.set_seed(parse_value<std::uint64_t>(k, v));
       }},
      {"threads",
       [](PipelineConfig& c, const std::string& k, const std::string& v) { c.set_threads(parse_value<int>(k, v)); }},
  };
  return setters;
}

}  // namespace detail

/// Keys accepted by apply_config_entry / parse_config (besides `preset`).
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, s] : detail::config_setters()) keys.push_back(k);
  return keys;
}

inline void apply_config_entry(PipelineConfig& config, const std::string& key, const std::string& value) {
  if (key == "preset") {
    config = make_preset(value);
    return;
  }
  const auto& setters = detail::config_setters();
  const auto it = setters.find(key);
  if (it == setters.end()) throw Error(ErrorCode::Format, "unknown configuration key '" + key + "'");
  it->second(config, key, value);
}

/// Parses key=value text on top of `base`.
inline PipelineConfig parse_config(std::istream& is, PipelineConfig base = make_preset("sintel")) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::string line;
  int line_no = 0;
  std::optional<std::string> preset;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::Format, "line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq)), value = detail::trim(line.substr(eq + 1));
    if (key == "preset") {
      preset = value;
    } else {
      entries.emplace_back(std::move(key), std::move(value));
    }
  }
  if (preset) base = make_preset(*preset);
  for (const auto& [k, v] : entries) apply_config_entry(base, k, v);
  return base;
}

inline PipelineConfig load_config(const std::string& path, PipelineConfig base = make_preset("sintel")) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::FileNotFound, path);
  return parse_config(is, std::move(base));
}

// ---------------------------------------------------------------------------
// Label maps as 16-bit gray PNG.

inline void write_labels_png(const std::string& path, const SuperpixelSegmentation& seg) {
  if (seg.count > 65536) throw Error(ErrorCode::InvalidInput, "too many superpixels for a 16-bit label map");
  PngRaster r{seg.width, seg.height, 1, 16, std::vector<std::uint16_t>(seg.labels.size())};
  for (std::size_t i = 0; i < seg.labels.size(); ++i) r.samples[i] = static_cast<std::uint16_t>(seg.labels[i]);
  write_png(path, r);
}

/// Reads a label map and recomputes the segmentation statistics from `lab`.
inline SuperpixelSegmentation read_labels_png(const std::string& path, const Image& lab) {
  const PngRaster r = read_png(path);
  if (r.channels != 1) throw Error(ErrorCode::Format, path + ": label map must be single-channel");
  if (r.width != lab.width() || r.height != lab.height())
    throw Error(ErrorCode::DimensionMismatch, path + ": label map does not match the image");
  SuperpixelSegmentation seg;
  seg.width = r.width;
  seg.height = r.height;
  seg.labels.assign(r.samples.begin(), r.samples.end());
  seg.count = *std::max_element(seg.labels.begin(), seg.labels.end()) + 1;
  std::vector<std::uint8_t> seen(seg.count, 0);
  for (int l : seg.labels) seen[l] = 1;
  if (std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw Error(ErrorCode::Format, path + ": label map has unused labels");
  finalize_segmentation(seg, lab);
  return seg;
}

// ---------------------------------------------------------------------------
// Pipeline.

struct PipelineResult {
  FlowField flow;
  FlowField interpolated;
  MatchSet matches;
  EdgeMap edges;
  SuperpixelSegmentation segmentation;
};

namespace detail {

template <typename Fn>
auto run_stage(const char* name, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(name, e);
  }
}

inline void check_pair(const Image& img1, const Image& img2) {
  if (img1.width() != img2.width() || img1.height() != img2.height())
    throw Error(ErrorCode::DimensionMismatch, "frames differ in size");
}

inline void dump_path_ready(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::Io, "cannot create " + dir + ": " + ec.message());
}

}  // namespace detail

inline constexpr const char* kMatchesDump = "matches.txt";
inline constexpr const char* kEdgesDump = "edges.edg";
inline constexpr const char* kLabelsDump = "labels.png";
inline constexpr const char* kInterpolatedDump = "interpolated.flo";

/// Interpolation and refinement from precomputed matches, edges and
/// superpixels.
inline PipelineResult finish_pipeline(const PipelineConfig& config, const Image& img1, const Image& img2,
                                      MatchSet matches, EdgeMap edges, SuperpixelSegmentation seg,
                                      const std::string& dump_dir = "") {
  PipelineResult out;
  out.interpolated = detail::run_stage("interpolation", [&] {
    return interpolate(matches, seg, edges, config.interp).flow;
  });
  if (!dump_dir.empty())
    detail::run_stage("dump", [&] { write_flo(dump_dir + "/" + kInterpolatedDump, out.interpolated); });
  out.flow = detail::run_stage("refinement", [&] { return refine(img1, img2, out.interpolated, config.variational); });
  out.matches = std::move(matches);
  out.edges = std::move(edges);
  out.segmentation = std::move(seg);
  return out;
}

/// Full chain: dense matching, two-pass consistency filter, region filter,
/// sparsification, superpixels, robust interpolation and variational
/// refinement. Without `edges`, gradient edges of frame 1 are used. If
/// `dump_dir` is set, stage artifacts are written there.
inline PipelineResult run_pipeline(const PipelineConfig& config, const Image& img1, const Image& img2,
                                   const std::optional<EdgeMap>& edges = std::nullopt,
                                   const std::string& dump_dir = "") {
  detail::run_stage("input", [&] {
    detail::check_pair(img1, img2);
    config.filter.validate();
    config.geodesic.validate();
    config.interp.validate();
    config.variational.validate();
    if (edges && (edges->width != img1.width() || edges->height != img1.height()))
      throw Error(ErrorCode::DimensionMismatch, "edge map does not match the frames");
    if (!dump_dir.empty()) detail::dump_path_ready(dump_dir);
  });
  const FlowField forward = detail::run_stage("matching", [&] { return match_full(img1, img2, config.matching); });
  MatchSet matches = detail::run_stage("filtering", [&] {
    const FilteredFlow checked =
        two_pass_filter(img1, img2, forward, config.matching, alternate_params(config.matching), config.filter);
    const FlowField regions = region_filter(checked.flow, config.filter);
    return sparsify(regions, checked.error, config.filter);
  });
  EdgeMap edge_map = detail::run_stage("edges", [&] { return edges ? *edges : detect_edges(img1); });
  SuperpixelSegmentation seg =
      detail::run_stage("segmentation", [&] { return segment(to_cielab(img1), config.grid_step, config.slic); });
  if (!dump_dir.empty())
    detail::run_stage("dump", [&] {
      save_matches(dump_dir + "/" + kMatchesDump, matches);
      save_edges(dump_dir + "/" + kEdgesDump, edge_map);
      write_labels_png(dump_dir + "/" + kLabelsDump, seg);
    });
  return finish_pipeline(config, img1, img2, std::move(matches), std::move(edge_map), std::move(seg), dump_dir);
}

/// Re-enters the pipeline from artifacts written by run_pipeline.
inline PipelineResult resume_pipeline(const PipelineConfig& config, const Image& img1, const Image& img2,
                                      const std::string& dump_dir) {
  detail::run_stage("input", [&] { detail::check_pair(img1, img2); });
  MatchSet matches = detail::run_stage("resume", [&] { return load_matches(dump_dir + "/" + kMatchesDump); });
  EdgeMap edges = detail::run_stage("resume", [&] {
    return load_edges(dump_dir + "/" + kEdgesDump, img1.width(), img1.height());
  });
  SuperpixelSegmentation seg =
      detail::run_stage("resume", [&] { return read_labels_png(dump_dir + "/" + kLabelsDump, to_cielab(img1)); });
  return finish_pipeline(config, img1, img2, std::move(matches), std::move(edges), std::move(seg));
}

/// Refinement only, from a dumped pre-refinement flow.
inline FlowField resume_refinement(const PipelineConfig& config, const Image& img1, const Image& img2,
                                   const std::string& dump_dir) {
  const FlowField init = detail::run_stage("resume", [&] { return read_flo(dump_dir + "/" + kInterpolatedDump); });
  return detail::run_stage("refinement", [&] { return refine(img1, img2, init, config.variational); });
}

// ---------------------------------------------------------------------------
// Directory evaluation.

struct EvalSummary {
  std::vector<std::pair<std::string, EvalReport>> frames;
  std::optional<EvalReport> mean;
  std::vector<std::string> problems;  // missing or unreadable counterparts

  bool ok() const { return problems.empty() && !frames.empty(); }
};

namespace detail {

// stem -> path for .flo and .png files.
inline std::map<std::string, std::string> flow_files(const std::string& dir) {
  std::map<std::string, std::string> files;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) throw Error(ErrorCode::FileNotFound, dir + " is not a directory");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext != ".flo" && ext != ".png") continue;
    const auto stem = entry.path().stem().string();
    // Prefer .flo when both exist.
    if (!files.count(stem) || ext == ".flo") files[stem] = entry.path().string();
  }
  return files;
}

}  // namespace detail

/// Evaluates every estimate against the ground truth with the same stem.
/// Mask directories, if given, hold "<stem>.png" region masks.
inline EvalSummary run_eval(const std::string& estimate_dir, const std::string& truth_dir,
                            const std::string& matched_mask_dir = "", const std::string& foreground_mask_dir = "",
                            int threads = 1) {
  const auto est = detail::flow_files(estimate_dir);
  const auto gt = detail::flow_files(truth_dir);
  std::set<std::string> stems;
  for (const auto& [s, p] : est) stems.insert(s);
  for (const auto& [s, p] : gt) stems.insert(s);
  EvalSummary summary;
  std::vector<std::string> paired;
  for (const auto& s : stems) {
    if (!est.count(s)) {
      summary.problems.push_back(s + ": no estimate");
    } else if (!gt.count(s)) {
      summary.problems.push_back(s + ": no ground truth");
    } else {
      paired.push_back(s);
    }
  }
  std::vector<std::optional<EvalReport>> reports(paired.size());
  std::vector<std::string> failures(paired.size());
  parallel_for(static_cast<int>(paired.size()), threads, [&](int k) {
    const std::string& s = paired[k];
    try {
      const FlowField e = read_flow(est.at(s));
      const FlowField g = read_flow(gt.at(s));
      std::optional<RegionMask> matched, fg;
      if (!matched_mask_dir.empty()) matched = read_mask_png(matched_mask_dir + "/" + s + ".png");
      if (!foreground_mask_dir.empty()) fg = read_mask_png(foreground_mask_dir + "/" + s + ".png");
      reports[k] = evaluate(e, g, matched ? &*matched : nullptr, fg ? &*fg : nullptr);
    } catch (const Error& err) {
      failures[k] = s + ": " + err.what();
    }
  });
  std::vector<EvalReport> ok;
  for (std::size_t k = 0; k < paired.size(); ++k) {
    if (reports[k]) {
      summary.frames.emplace_back(paired[k], *reports[k]);
      ok.push_back(*reports[k]);
    } else {
      summary.problems.push_back(failures[k]);
    }
  }
  if (!ok.empty()) summary.mean = mean_report(ok);
  return summary;
}

}  // namespace denseflow
