// denseflow command-line driver.
//
//   denseflow compute frame1.png frame2.png --out flow.flo [--preset kitti] ...
//   denseflow eval estimates/ ground_truth/ [--matched-masks DIR] [--fg-masks DIR]
//   denseflow viz flow.flo --out flow.png [--max-flow 20]
//   denseflow edges frame1.png --out edges.edg
//
// Exit codes: 0 success, 1 usage, 2 I/O, 3 pipeline failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "denseflow/pipeline.hpp"

namespace fs = std::filesystem;
using namespace denseflow;

namespace {

enum Exit { kOk = 0, kUsage = 1, kIo = 2, kPipeline = 3 };

struct ComputeOptions {
  std::string frame1, frame2, out, preset = "sintel", config, edges, dump_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  bool kitti_png = false;
  bool no_viz = false;
};

struct EvalOptions {
  std::string estimates, truth, matched_masks, fg_masks;
  int threads = 1;
  bool kv = false;
};

struct VizOptions {
  std::string flow, out;
  std::optional<double> max_flow;
};

struct EdgesOptions {
  std::string image, out;
};

PipelineConfig build_config(const ComputeOptions& o) {
  PipelineConfig c = make_preset(o.preset);
  if (!o.config.empty()) c = load_config(o.config, c);
  if (o.seed) c.set_seed(*o.seed);
  c.set_threads(o.threads);
  return c;
}

// "flow.flo" -> "flow.png"; a KITTI output "flow.png" gets "flow_viz.png".
std::string viz_path(const std::string& out) {
  fs::path p(out);
  if (p.extension() == ".png") return (p.parent_path() / (p.stem().string() + "_viz.png")).string();
  return p.replace_extension(".png").string();
}

int compute(const ComputeOptions& o) {
  const PipelineConfig config = build_config(o);
  const Image img1 = read_image(o.frame1);
  const Image img2 = read_image(o.frame2);
  std::optional<EdgeMap> edges;
  if (!o.edges.empty()) edges = load_edges(o.edges, img1.width(), img1.height());
  if (!o.dump_dir.empty()) fs::create_directories(o.dump_dir);
  const PipelineResult r = run_pipeline(config, img1, img2, edges, o.dump_dir);
  if (o.kitti_png)
    write_kitti_png(o.out, r.flow);
  else
    write_flo(o.out, r.flow);
  if (!o.no_viz) write_image_png(viz_path(o.out), visualize(r.flow));
  std::cerr << "wrote " << o.out << " (" << r.matches.size() << " matches, " << r.segmentation.count
            << " superpixels)\n";
  return kOk;
}

int eval(const EvalOptions& o) {
  const EvalSummary s = run_eval(o.estimates, o.truth, o.matched_masks, o.fg_masks, o.threads);
  for (const auto& p : s.problems) std::cerr << "warning: " << p << "\n";
  if (o.kv) {
    for (const auto& [stem, r] : s.frames) std::cout << format_report_kv(stem + ".", r);
    if (s.mean) std::cout << format_report_kv("mean.", *s.mean);
  } else {
    auto rows = s.frames;
    if (s.mean) rows.emplace_back("mean", *s.mean);
    std::cout << format_report_table(rows);
  }
  return s.ok() ? kOk : kIo;
}

int viz(const VizOptions& o) {
  write_image_png(o.out, visualize(read_flow(o.flow), o.max_flow));
  return kOk;
}

int edges(const EdgesOptions& o) {
  save_edges(o.out, detect_edges(read_image(o.image)));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dense optical flow from a pair of frames."};
  app.require_subcommand(1);

  ComputeOptions co;
  auto* cmd_compute = app.add_subcommand("compute", "Estimate flow from frame 1 to frame 2");
  cmd_compute->add_option("frame1", co.frame1, "First frame (PNG or PNM)")->required();
  cmd_compute->add_option("frame2", co.frame2, "Second frame")->required();
  cmd_compute->add_option("--out,-o", co.out, "Output flow file")->required();
  cmd_compute->add_option("--preset", co.preset, "Parameter preset")
      ->check(CLI::IsMember({"kitti", "sintel"}))
      ->capture_default_str();
  cmd_compute->add_option("--config", co.config, "Key-value config file applied on top of the preset");
  cmd_compute->add_option("--seed", co.seed, "Random seed");
  cmd_compute->add_option("--edges", co.edges, "Edge map (.edg) instead of detected edges");
  cmd_compute->add_option("--dump-stages", co.dump_dir, "Directory for intermediate artifacts");
  cmd_compute->add_option("--threads,-j", co.threads, "Worker threads")->check(CLI::PositiveNumber)->capture_default_str();
  cmd_compute->add_flag("--kitti-png", co.kitti_png, "Write a 16-bit KITTI PNG instead of .flo");
  cmd_compute->add_flag("--no-viz", co.no_viz, "Skip the color visualization next to the output");

  EvalOptions eo;
  auto* cmd_eval = app.add_subcommand("eval", "Compare estimated flows with ground truth by file stem");
  cmd_eval->add_option("estimates", eo.estimates, "Directory of estimates (.flo or KITTI .png)")->required();
  cmd_eval->add_option("truth", eo.truth, "Directory of ground truth")->required();
  cmd_eval->add_option("--matched-masks", eo.matched_masks, "Masks of matched pixels (<stem>.png)");
  cmd_eval->add_option("--fg-masks", eo.fg_masks, "Foreground masks (<stem>.png)");
  cmd_eval->add_option("--threads,-j", eo.threads, "Frames evaluated in parallel")->check(CLI::PositiveNumber);
  cmd_eval->add_flag("--kv", eo.kv, "Print key=value lines instead of a table");

  VizOptions vo;
  auto* cmd_viz = app.add_subcommand("viz", "Render a flow file with the standard color wheel");
  cmd_viz->add_option("flow", vo.flow, "Flow file (.flo or KITTI .png)")->required();
  cmd_viz->add_option("--out,-o", vo.out, "Output PNG")->required();
  cmd_viz->add_option("--max-flow", vo.max_flow, "Magnitude mapped to full saturation (default: largest)")
      ->check(CLI::PositiveNumber);

  EdgesOptions go;
  auto* cmd_edges = app.add_subcommand("edges", "Write the detected edge map of an image");
  cmd_edges->add_option("image", go.image, "Input image")->required();
  cmd_edges->add_option("--out,-o", go.out, "Output .edg file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*cmd_compute) return compute(co);
    if (*cmd_eval) return eval(eo);
    if (*cmd_viz) return viz(vo);
    if (*cmd_edges) return edges(go);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.is_io() ? kIo : kPipeline;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (e.is_io()) return kIo;
    return e.code() == ErrorCode::InvalidInput ? kUsage : kPipeline;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kIo;
  }
  return kUsage;
}
