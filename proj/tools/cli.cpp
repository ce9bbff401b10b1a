// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <random>

#include "panobev/config.hpp"
#include "panobev/distill.hpp"
#include "panobev/fisheye.hpp"
#include "panobev/fusion.hpp"
#include "panobev/gradcheck.hpp"
#include "panobev/gt_rasterizer.hpp"
#include "panobev/io.hpp"
#include "panobev/lidar_image.hpp"
#include "panobev/metrics.hpp"
#include "panobev/parallel.hpp"
#include "panobev/view_transformer.hpp"

namespace panobev::cli {

namespace {

namespace fs = std::filesystem;

constexpr double kDeg = kPi / 180.0;

std::vector<Vec3> positions(const std::vector<LidarPoint>& pts) {
  std::vector<Vec3> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(p.position);
  return out;
}

std::vector<std::uint8_t> threshold_mask(const FeatureMapF& f, std::size_t channel, double threshold) {
  require(channel < f.channels(), ErrorCode::shape_mismatch,
          "channel " + std::to_string(channel) + " out of range for " + to_string(f.shape()));
  std::vector<std::uint8_t> m(f.shape().plane());
  const auto src = f.channel(channel);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = src[i] >= threshold ? 1 : 0;
  return m;
}

std::vector<Box3D> load_boxes(const fs::path& path) {
  std::ifstream f(path);
  require(f.good(), ErrorCode::io, "cannot open boxes file " + path.string());
  return read_boxes(f);
}

FeatureMapF mask_to_map(const std::vector<std::uint8_t>& mask, std::size_t h, std::size_t w) {
  FeatureMapF m(1, h, w);
  for (std::size_t i = 0; i < mask.size(); ++i) m.data()[i] = mask[i];
  return m;
}

struct EncodeArgs {
  std::string in, out, mask;
  std::size_t rows = 0, cols = 0;
  double elev_min = 0, elev_max = 0;
  bool normalize = false;
  LidarNormalization norm{};
};

int cmd_encode(const EncodeArgs& a, std::ostream& out) {
  const AngularGridSpec grid{a.rows, a.cols, a.elev_min * kDeg, a.elev_max * kDeg};
  grid.validate();
  const auto img = encode_pointcloud(io::read_plx(fs::path(a.in)), grid);
  io::write_fmap(fs::path(a.out), a.normalize ? normalize_lidar_image(img, a.norm) : img.channels.cast<float>());
  if (!a.mask.empty()) io::write_fmap(fs::path(a.mask), mask_to_map(img.mask, grid.rows, grid.cols));
  out << "valid_pixels=" << img.valid_count() << "\nskipped_out_of_fov=" << img.skipped_out_of_fov
      << "\nhas_ambient=" << (img.has_ambient ? 1 : 0) << '\n';
  return kExitOk;
}

struct VoxelPullArgs {
  std::string features, cloud, spec, out, occupancy;
};

int cmd_voxel_pull(const VoxelPullArgs& a, std::ostream& out) {
  auto cfg = load_pipeline_config(fs::path(a.spec));
  const auto image = io::read_fmap(fs::path(a.features));
  cfg.angular.rows = image.height();
  cfg.angular.cols = image.width();
  const auto voxels = voxelize(positions(io::read_plx(fs::path(a.cloud))), cfg.voxel);
  const auto vf = voxel_pull(image, voxels, cfg.angular);
  const auto bev = vertical_compress(vf, cfg.compress);
  io::write_fmap(fs::path(a.out), bev.features);
  if (!a.occupancy.empty()) {
    FeatureMapF occ(1, bev.features.height(), bev.features.width());
    std::transform(bev.occupancy.begin(), bev.occupancy.end(), occ.data().begin(),
                   [](std::uint32_t v) { return static_cast<float>(v); });
    io::write_fmap(fs::path(a.occupancy), occ);
  }
  const auto fov = std::count(vf.out_of_fov.begin(), vf.out_of_fov.end(), std::uint8_t{1});
  out << "voxels=" << voxels.size() << "\nout_of_fov=" << fov << "\nbev=" << to_string(bev.features.shape()) << '\n';
  return kExitOk;
}

struct RasterizeArgs {
  std::string boxes, spec = "200x200@100m", out;
  double sigma = 2.0;
};

int cmd_rasterize(const RasterizeArgs& a, std::ostream& out) {
  const auto spec = BevGridSpec::parse(a.spec);
  const auto boxes = load_boxes(fs::path(a.boxes));
  const auto targets = make_bev_targets(boxes, spec, a.sigma);
  io::write_fmap(fs::path(a.out), targets);
  const auto positives = std::count_if(targets.channel(0).begin(), targets.channel(0).end(), [](float v) { return v > 0; });
  out << "boxes=" << boxes.size() << "\npositive_cells=" << positives << '\n';
  return kExitOk;
}

struct FilterArgs {
  std::string boxes, cloud, out;
  std::int64_t frame = 0;
  std::size_t min_points = 1;
  double by_distance = -1.0;
};

int cmd_filter(const FilterArgs& a, std::ostream& out) {
  const auto boxes = load_boxes(fs::path(a.boxes));
  std::vector<Box3D> kept;
  if (a.by_distance >= 0.0) {
    kept = filter_static_boxes_by_distance(boxes, a.frame, a.by_distance);
  } else {
    require(!a.cloud.empty(), ErrorCode::invalid_config, "filter-boxes needs --cloud unless --by-distance is given");
    kept = filter_static_boxes(boxes, positions(io::read_plx(fs::path(a.cloud))), a.frame, {a.min_points});
  }
  if (a.out.empty()) {
    write_boxes(out, kept);
  } else {
    std::ofstream f(a.out);
    require(f.good(), ErrorCode::io, "cannot write " + a.out);
    write_boxes(f, kept);
    out << "kept=" << kept.size() << "\ntotal=" << boxes.size() << '\n';
  }
  return kExitOk;
}

struct FisheyeArgs {
  std::string left, right, calib, out, mask;
  std::size_t rows = 0, cols = 0;
  double elev_min = -90.0, elev_max = 90.0;
};

int cmd_fisheye(const FisheyeArgs& a, std::ostream& out) {
  const auto rig = load_fisheye_rig(fs::path(a.calib));
  const AngularGridSpec grid{a.rows, a.cols, a.elev_min * kDeg, a.elev_max * kDeg};
  const auto eq = fisheye_to_equirect(io::read_ppm(fs::path(a.left)), io::read_ppm(fs::path(a.right)), rig.left,
                                      rig.right, grid, rig.options);
  io::write_ppm(fs::path(a.out), eq.rgb);
  if (!a.mask.empty()) io::write_ppm(fs::path(a.mask), mask_to_map(eq.valid, a.rows, a.cols));
  out << "valid_pixels=" << std::count(eq.valid.begin(), eq.valid.end(), std::uint8_t{1}) << '\n';
  return kExitOk;
}

struct KdArgs {
  std::string teacher, student, aux, grad_dir;
  DistillConfig cfg{};
};

int cmd_kd(const KdArgs& a, std::ostream& out) {
  a.cfg.validate();
  const auto teacher = io::read_fmap(fs::path(a.teacher));
  const auto student = io::read_fmap(fs::path(a.student));
  std::optional<FeatureMapF> aux;
  if (!a.aux.empty()) aux = io::read_fmap(fs::path(a.aux));
  const auto r = kd_loss<float>(teacher, student, aux, a.cfg);
  out << std::setprecision(std::numeric_limits<double>::max_digits10) << "loss=" << r.loss
      << "\nteacher_student=" << r.teacher_student << "\nteacher_auxiliary=" << r.teacher_auxiliary << '\n';
  if (!a.grad_dir.empty()) {
    fs::create_directories(a.grad_dir);
    io::write_fmap(fs::path(a.grad_dir) / "grad_student.fmap", r.grad_student);
    if (r.grad_auxiliary) io::write_fmap(fs::path(a.grad_dir) / "grad_auxiliary.fmap", *r.grad_auxiliary);
  }
  return kExitOk;
}

struct EvalArgs {
  std::string pred, gt;
  double extent = 100.0;
  double threshold = 0.5;
  std::size_t channel = 0;
  std::optional<double> params;
};

int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const auto pred = io::read_fmap(fs::path(a.pred));
  const auto gt = io::read_fmap(fs::path(a.gt));
  require(pred.height() == gt.height() && pred.width() == gt.width(), ErrorCode::shape_mismatch,
          "prediction " + to_string(pred.shape()) + " and ground truth " + to_string(gt.shape()) + " differ in size");
  const BevGridSpec spec{pred.height(), pred.width(), a.extent};
  // Ground truth is read from channel 0 (the seg channel of rasterize-gt output).
  const auto report = evaluate(threshold_mask(pred, a.channel, a.threshold), threshold_mask(gt, 0, 0.5), spec, a.params);
  write_report(out, report);
  return kExitOk;
}

struct BenchArgs {
  std::string op = "voxel-pull";
  std::size_t iters = kDefaultBenchIterations;
  std::size_t warmup = 3;
  std::size_t channels = 8;
  std::size_t rows = 64, cols = 1024;
  std::size_t points = 120000;
  std::uint64_t seed = 7;
};

int cmd_bench(const BenchArgs& a, std::ostream& out) {
  require(a.iters >= 1, ErrorCode::invalid_config, "--iters must be >= 1");
  const PipelineConfig cfg;
  const AngularGridSpec grid{a.rows, a.cols, cfg.angular.elevation_min, cfg.angular.elevation_max};
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<float> unit(0.0f, 1.0f);
  FeatureMapF image(a.channels, a.rows, a.cols);
  for (auto& v : image.data()) v = unit(rng);

  std::vector<LidarPoint> cloud(a.points);
  for (auto& p : cloud) {
    const double az = unit(rng) * kTwoPi - kPi;
    const double el = grid.elevation_min + unit(rng) * grid.elevation_span();
    const double range = 2.0 + 60.0 * unit(rng);
    p.position = spherical_to_cart({az, el, range});
    p.intensity = unit(rng);
  }

  std::function<void()> op;
  std::optional<SparseVoxelSet> voxels;
  if (a.op == "voxel-pull") {
    voxels = voxelize(positions(cloud), cfg.voxel);
    op = [&] { (void)vertical_compress(voxel_pull(image, *voxels, grid), cfg.compress); };
  } else if (a.op == "dense-pull") {
    op = [&] { (void)dense_grid_pull(image, cfg.voxel, grid, cfg.compress); };
  } else if (a.op == "encode-lidar") {
    op = [&] { (void)encode_pointcloud(cloud, grid); };
  } else if (a.op == "sgfm") {
    const GridDims d = cfg.voxel.dims();
    auto params = SgfmParams<float>::zeros(a.channels, a.channels);
    for (auto& w : params.gate_weights) w = unit(rng) - 0.5f;
    for (auto& w : params.refine_weights) w = (unit(rng) - 0.5f) * 0.1f;
    FeatureMapF bev_img(a.channels, d.z, d.x), bev_lidar(a.channels, d.z, d.x);
    for (auto& v : bev_img.data()) v = unit(rng);
    for (auto& v : bev_lidar.data()) v = unit(rng);
    op = [params, bev_img, bev_lidar] { (void)sgfm_forward(bev_img, bev_lidar, params); };
  } else if (a.op == "kd-loss") {
    const GridDims d = cfg.voxel.dims();
    FeatureMapF t(a.channels, d.z, d.x), s(a.channels, d.z, d.x);
    for (auto& v : t.data()) v = unit(rng);
    for (auto& v : s.data()) v = unit(rng);
    op = [t, s, &cfg] { (void)kd_loss<float>(t, s, std::nullopt, cfg.distill); };
  } else {
    fail(ErrorCode::invalid_config,
         "unknown bench op '" + a.op + "' (voxel-pull, dense-pull, encode-lidar, sgfm, kd-loss)");
  }
  const auto r = throughput_bench(op, a.warmup, a.iters);
  out << "op=" << a.op << "\nthreads=" << max_threads() << "\niterations=" << r.iterations << "\nmean_ms=" << r.mean_ms
      << "\nstdev_ms=" << r.stdev_ms << "\nfps=" << r.fps << '\n';
  return kExitOk;
}

struct GradcheckArgs {
  bool all = false;
  std::vector<std::string> ops;
  GradCheckOptions options{};
};

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (a.all == !a.ops.empty()) {
    err << "gradcheck: pass exactly one of --all or --op\n";
    return kExitUsage;
  }
  const auto& names = a.all ? gradcheck_ops() : a.ops;
  bool ok = true;
  for (const auto& name : names) {
    const auto r = gradcheck(name, a.options);
    ok = ok && r.passed();
    out << std::left << std::setw(18) << r.op << " max_rel_err=" << std::scientific << std::setprecision(3)
        << r.max_rel_error << " threshold=" << r.threshold << std::defaultfloat << " instances=" << r.instances
        << " time_s=" << std::fixed << std::setprecision(3) << r.seconds << std::defaultfloat << ' '
        << (r.passed() ? "PASS" : "FAIL") << '\n';
  }
  return ok ? kExitOk : kExitCheckFailed;
}

struct RenderArgs {
  std::string in, out, gt;
  std::size_t channel = 0;
  std::optional<double> threshold;
};

int cmd_render(const RenderArgs& a, std::ostream& out) {
  const auto f = io::read_fmap(fs::path(a.in));
  require(a.channel < f.channels(), ErrorCode::shape_mismatch, "channel out of range for " + to_string(f.shape()));
  FeatureMapF rgb(3, f.height(), f.width());
  const std::size_t plane = f.shape().plane();
  if (!a.gt.empty()) {
    // Overlay: true positives white, false positives red, false negatives blue.
    const auto gt = io::read_fmap(fs::path(a.gt));
    require(gt.height() == f.height() && gt.width() == f.width(), ErrorCode::shape_mismatch, "--gt size differs");
    const auto p = threshold_mask(f, a.channel, a.threshold.value_or(0.5));
    const auto g = threshold_mask(gt, 0, 0.5);
    for (std::size_t i = 0; i < plane; ++i) {
      rgb.data()[i] = p[i] ? 1.0f : 0.0f;
      rgb.data()[plane + i] = p[i] && g[i] ? 1.0f : 0.0f;
      rgb.data()[2 * plane + i] = g[i] ? 1.0f : 0.0f;
    }
  } else {
    const auto src = f.channel(a.channel);
    for (std::size_t i = 0; i < plane; ++i) {
      const float v = a.threshold ? (src[i] >= *a.threshold ? 1.0f : 0.0f) : std::clamp(src[i], 0.0f, 1.0f);
      for (std::size_t c = 0; c < 3; ++c) rgb.data()[c * plane + i] = v;
    }
  }
  io::write_ppm(fs::path(a.out), rgb);
  out << "wrote " << a.out << " (" << f.width() << "x" << f.height() << ")\n";
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Panoramic BEV geometry, fusion and distillation kernels", "panobev"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "OpenMP threads (overrides PANOBEV_THREADS)")->check(CLI::PositiveNumber);

  std::function<int()> action;

  EncodeArgs enc;
  auto* s = app.add_subcommand("encode-lidar", "Point cloud (.plx) to a 3-channel equirectangular LiDAR image");
  s->add_option("--in", enc.in, "input .plx point cloud")->required();
  s->add_option("--rows", enc.rows, "image rows")->required();
  s->add_option("--cols", enc.cols, "image columns")->required();
  s->add_option("--elev-min", enc.elev_min, "lower elevation bound, degrees")->required();
  s->add_option("--elev-max", enc.elev_max, "upper elevation bound, degrees")->required();
  s->add_option("--out", enc.out, "output .fmap (range, intensity, ambient)")->required();
  s->add_option("--mask", enc.mask, "optional 1-channel validity .fmap");
  s->add_flag("--normalize", enc.normalize, "write the normalized network input instead of raw channels");
  s->add_option("--max-range", enc.norm.max_range, "range normalizer, meters");
  s->add_option("--intensity-scale", enc.norm.intensity_scale);
  s->add_option("--ambient-scale", enc.norm.ambient_scale);
  s->callback([&] { action = [&] { return cmd_encode(enc, out); }; });

  VoxelPullArgs vp;
  s = app.add_subcommand("voxel-pull", "Pull panorama features into LiDAR voxels and compress to BEV");
  s->add_option("--features", vp.features, "input .fmap (C x rows x cols)")->required();
  s->add_option("--cloud", vp.cloud, "input .plx point cloud")->required();
  s->add_option("--spec", vp.spec, "pipeline config with [voxel] and [angular] sections")->required();
  s->add_option("--out", vp.out, "output BEV .fmap (C x Z x X)")->required();
  s->add_option("--occupancy", vp.occupancy, "optional per-column occupancy .fmap");
  s->callback([&] { action = [&] { return cmd_voxel_pull(vp, out); }; });

  RasterizeArgs rg;
  s = app.add_subcommand("rasterize-gt", "Boxes to stacked BEV targets (seg, centerness, offset x/y, valid)");
  s->add_option("--boxes", rg.boxes, "boxes text file")->required();
  s->add_option("--spec", rg.spec, "BEV grid, e.g. 200x200@100m")->capture_default_str();
  s->add_option("--out", rg.out, "output .fmap (5 x rows x cols)")->required();
  s->add_option("--sigma", rg.sigma, "centerness Gaussian sigma, cells")->capture_default_str();
  s->callback([&] { action = [&] { return cmd_rasterize(rg, out); }; });

  FilterArgs fb;
  s = app.add_subcommand("filter-boxes", "Keep the boxes that apply to one frame");
  s->add_option("--boxes", fb.boxes, "boxes text file")->required();
  s->add_option("--cloud", fb.cloud, "frame point cloud .plx");
  s->add_option("--frame", fb.frame, "frame id")->required();
  s->add_option("--min-points", fb.min_points, "points required inside a static box")->capture_default_str();
  s->add_option("--by-distance", fb.by_distance, "use the distance-only strategy with this radius (comparison only)");
  s->add_option("--out", fb.out, "output boxes file (default: stdout)");
  s->callback([&] { action = [&] { return cmd_filter(fb, out); }; });

  FisheyeArgs fe;
  s = app.add_subcommand("fisheye-convert", "Dual fisheye PPM pair to an equirectangular PPM");
  s->add_option("--left", fe.left, "left fisheye .ppm")->required();
  s->add_option("--right", fe.right, "right fisheye .ppm")->required();
  s->add_option("--calib", fe.calib, "calibration file with [left], [right], [blend]")->required();
  s->add_option("--rows", fe.rows, "output rows")->required();
  s->add_option("--cols", fe.cols, "output columns")->required();
  s->add_option("--elev-min", fe.elev_min, "degrees")->capture_default_str();
  s->add_option("--elev-max", fe.elev_max, "degrees")->capture_default_str();
  s->add_option("--out", fe.out, "output .ppm")->required();
  s->add_option("--mask", fe.mask, "optional validity .ppm");
  s->callback([&] { action = [&] { return cmd_fisheye(fe, out); }; });

  KdArgs kd;
  s = app.add_subcommand("kd-loss", "Channel-wise distillation loss and gradients");
  s->add_option("--teacher", kd.teacher, "teacher BEV .fmap")->required();
  s->add_option("--student", kd.student, "student BEV .fmap")->required();
  s->add_option("--aux", kd.aux, "auxiliary fusion output .fmap");
  s->add_option("--temp", kd.cfg.temperature, "softmax temperature")->capture_default_str();
  s->add_option("--a1", kd.cfg.alpha1, "teacher->student weight")->capture_default_str();
  s->add_option("--a2", kd.cfg.alpha2, "teacher->auxiliary weight")->capture_default_str();
  s->add_option("--grad-dir", kd.grad_dir, "write grad_student.fmap / grad_auxiliary.fmap here");
  s->callback([&] { action = [&] { return cmd_kd(kd, out); }; });

  EvalArgs ev;
  s = app.add_subcommand("eval-iou", "IoU at 100/50/20 m crops, plus ER when --params is given");
  s->add_option("--pred", ev.pred, "prediction .fmap")->required();
  s->add_option("--gt", ev.gt, "ground truth .fmap (channel 0 is read)")->required();
  s->add_option("--extent", ev.extent, "map side, meters")->capture_default_str();
  s->add_option("--threshold", ev.threshold, "prediction threshold")->capture_default_str();
  s->add_option("--channel", ev.channel, "prediction channel")->capture_default_str();
  s->add_option("--params", ev.params, "parameter count for the efficiency ratio");
  s->callback([&] { action = [&] { return cmd_eval(ev, out); }; });

  BenchArgs bn;
  s = app.add_subcommand("bench", "Time a kernel on synthetic inputs");
  s->add_option("--op", bn.op, "voxel-pull, dense-pull, encode-lidar, sgfm, kd-loss")->capture_default_str();
  s->add_option("--iters", bn.iters)->capture_default_str();
  s->add_option("--warmup", bn.warmup)->capture_default_str();
  s->add_option("--channels", bn.channels)->capture_default_str();
  s->add_option("--rows", bn.rows)->capture_default_str();
  s->add_option("--cols", bn.cols)->capture_default_str();
  s->add_option("--points", bn.points)->capture_default_str();
  s->add_option("--seed", bn.seed)->capture_default_str();
  s->callback([&] { action = [&] { return cmd_bench(bn, out); }; });

  GradcheckArgs gc;
  s = app.add_subcommand("gradcheck", "Finite-difference checks of every backward op");
  s->add_flag("--all", gc.all, "check every op");
  s->add_option("--op", gc.ops, "check one op (repeatable)");
  s->add_option("--seed", gc.options.seed)->capture_default_str();
  s->add_option("--instances", gc.options.instances, "random instances per op")->capture_default_str();
  s->callback([&] { action = [&] { return cmd_gradcheck(gc, out, err); }; });

  RenderArgs rd;
  s = app.add_subcommand("render", "Write one BEV channel (or a prediction/GT overlay) as a PPM image");
  s->add_option("--in", rd.in, "input .fmap")->required();
  s->add_option("--out", rd.out, "output .ppm")->required();
  s->add_option("--channel", rd.channel)->capture_default_str();
  s->add_option("--threshold", rd.threshold, "binarize at this value");
  s->add_option("--gt", rd.gt, "ground truth .fmap for an overlay");
  s->callback([&] { action = [&] { return cmd_render(rd, out); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "panobev: " << e.what() << "\n\n" << app.help();
    return kExitUsage;
  }

  if (threads > 0) {
    set_num_threads(threads);
  } else {
    apply_thread_env();
  }

  try {
    return action();
  } catch (const Error& e) {
    err << "panobev: error: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "panobev: error: " << e.what() << '\n';
    return kExitFailure;
  }
}

}  // namespace panobev::cli
