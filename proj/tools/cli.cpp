#include "cli.hpp"

#include "unirig/animation.hpp"
#include "unirig/asset_io.hpp"
#include "unirig/error.hpp"
#include "unirig/metrics.hpp"
#include "unirig/parallel.hpp"
#include "unirig/pose_inversion.hpp"
#include "unirig/rotation.hpp"
#include "unirig/skeleton_fit.hpp"
#include "unirig/synth.hpp"
#include "unirig/topo_transfer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <memory>
#include <numeric>
#include <sstream>

#ifndef UNIRIG_VERSION
#define UNIRIG_VERSION "0.0.0"
#endif

namespace unirig::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr int kReportSchema = 1;

std::uint64_t fnv1a(const void* data, size_t size, std::uint64_t h = 1469598103934665603ULL) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t hash_points(std::span<const Points> frames) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& f : frames) {
    h = fnv1a(f.data(), sizeof(double) * static_cast<size_t>(f.size()), h);
  }
  return h;
}

std::uint64_t hash_motion(const MotionSequence& motion) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& f : motion.frames) {
    h = fnv1a(f.rotations.data(), sizeof(double) * static_cast<size_t>(f.rotations.size()), h);
    h = fnv1a(f.root_translation.data(), sizeof(double) * 3, h);
  }
  return h;
}

class Stopwatch {
 public:
  void lap(json& timings, const std::string& name) {
    const auto now = std::chrono::steady_clock::now();
    timings[name] = std::chrono::duration<double>(now - last_).count();
    last_ = now;
  }

 private:
  std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

json stats_json(const ErrorStats& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"p95", s.p95}, {"max", s.max}, {"count", s.count}};
}

// Either a single OBJ frame or a vertex animation.
VertexAnimation load_frames(const fs::path& path) {
  if (path.extension() == ".obj") {
    VertexAnimation anim;
    anim.frames.push_back(load_obj(path).vertices);
    return anim;
  }
  return load_vertex_animation(path);
}

Points load_rest(const RigAsset& rig, const std::string& path) {
  if (path.empty()) {
    return rig.mesh.vertices;
  }
  Points rest = load_obj(path).vertices;
  check(rest.rows() == rig.vertex_count(), ErrorCode::SizeMismatch, "rest shape vertex count does not match the rig");
  return rest;
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path());
  }
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stoi(item, &used));
      check(used == item.size(), ErrorCode::InvalidConfig, "bad integer '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidConfig, "bad integer '" + item + "'");
    }
  }
  check(!out.empty(), ErrorCode::InvalidConfig, "empty list");
  return out;
}

std::array<double, kRegionCount> parse_region_weights(const std::string& text) {
  std::array<double, kRegionCount> w{1.0, 1.0, 1.0, 1.0};
  if (text.empty()) {
    return w;
  }
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    check(colon != std::string::npos, ErrorCode::InvalidConfig, "region weight '" + item + "' is not region:weight");
    const std::string key = item.substr(0, colon);
    double value = 0.0;
    try {
      value = std::stod(item.substr(colon + 1));
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidConfig, "bad region weight in '" + item + "'");
    }
    check(value > 0.0, ErrorCode::InvalidConfig, "region weights must be positive");
    bool found = false;
    for (int r = 0; r < kRegionCount; ++r) {
      if (region_name(static_cast<Region>(r)) == key) {
        w[static_cast<size_t>(r)] = value;
        found = true;
      }
    }
    check(found, ErrorCode::InvalidConfig, "unknown region '" + key + "'");
  }
  return w;
}

// Random axis-angle poses for benchmarking arbitrary rigs.
std::vector<PoseFrame> random_poses(int joints, int count, std::uint64_t seed, double max_deg) {
  SynthRandom rng(seed);
  std::vector<PoseFrame> out;
  for (int i = 0; i < count; ++i) {
    PoseFrame f = PoseFrame::identity(joints);
    for (int k = 0; k < joints; ++k) {
      f.rotations.row(k) = (rng.unit_vector() * rng.uniform(0.0, max_deg * M_PI / 180.0)).transpose();
    }
    out.push_back(std::move(f));
  }
  return out;
}

// Every option of the app and of the selected subcommand, with its value or default.
json resolved_config(const CLI::App& app, const CLI::App& sub) {
  json cfg;
  auto add = [&](const CLI::App& a) {
    for (const CLI::Option* opt : a.get_options()) {
      const std::string name = opt->get_single_name();
      if (name == "help" || name == "config" || name == "version" || name.empty()) {
        continue;
      }
      if (opt->get_expected_min() == 0) {
        cfg[name] = opt->count() > 0;
        continue;
      }
      const std::string value = opt->count() > 0 ? opt->as<std::string>() : opt->get_default_str();
      // Numbers stay numbers so the hash does not depend on spelling.
      const json parsed = json::parse(value, nullptr, false);
      cfg[name] = !value.empty() && parsed.is_number() ? parsed : json(value);
    }
  };
  add(app);
  add(sub);
  return cfg;
}

// Scalars as "key value" lines; arrays of objects as aligned tables.
void print_table(const json& node, std::ostream& out, const std::string& prefix = "") {
  std::vector<std::pair<std::string, const json*>> tables;
  for (const auto& [key, value] : node.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object()) {
      print_table(value, out, name);
    } else if (value.is_array() && !value.empty() && value.front().is_object()) {
      tables.emplace_back(name, &value);
    } else if (value.is_array()) {
      out << std::left << std::setw(32) << name << " [" << value.size() << " values]\n";
    } else {
      out << std::left << std::setw(32) << name << ' '
          << (value.is_string() ? value.get<std::string>() : value.dump()) << '\n';
    }
  }
  for (const auto& [name, rows] : tables) {
    std::vector<std::string> cols;
    for (const auto& [k, v] : rows->front().items()) {
      if (!v.is_structured()) {
        cols.push_back(k);
      }
    }
    std::vector<std::vector<std::string>> cells;
    std::vector<size_t> width;
    for (const auto& c : cols) {
      width.push_back(c.size());
    }
    for (const auto& row : *rows) {
      std::vector<std::string> line;
      for (size_t c = 0; c < cols.size(); ++c) {
        std::string s;
        if (row.contains(cols[c])) {
          const auto& v = row.at(cols[c]);
          if (v.is_number_float()) {
            std::ostringstream os;
            os << std::setprecision(6) << v.get<double>();
            s = os.str();
          } else {
            s = v.is_string() ? v.get<std::string>() : v.dump();
          }
        }
        width[c] = std::max(width[c], s.size());
        line.push_back(std::move(s));
      }
      cells.push_back(std::move(line));
    }
    out << '\n' << name << '\n';
    for (size_t c = 0; c < cols.size(); ++c) {
      out << std::right << std::setw(static_cast<int>(width[c]) + 2) << cols[c];
    }
    out << '\n';
    for (const auto& line : cells) {
      for (size_t c = 0; c < cols.size(); ++c) {
        out << std::right << std::setw(static_cast<int>(width[c]) + 2) << line[c];
      }
      out << '\n';
    }
  }
}

struct Common {
  std::string format = "json";
  int threads = 0;
  std::uint64_t seed = 7;
  std::string report;
};

// ---- subcommands ----

struct SynthArgs {
  std::string out;
  int torso = 2;
  bool no_head = false;
  bool no_arms = false;
  bool no_legs = false;
  int fingers = 0;
  bool dense = false;
  double scale = 1.0;
  int radial = 12;
  int axial = 8;
  int frames = 60;
  double smoothness = 0.9;
  double max_angle = 45.0;
  bool identity = false;
  std::string remesh = "none";
  bool correctives = false;
};

json cmd_synth(const SynthArgs& a, const Common& c, json& timings) {
  Stopwatch sw;
  SynthConfig cfg;
  cfg.seed = c.seed;
  cfg.torso_segments = a.torso;
  cfg.head = !a.no_head;
  cfg.arms = !a.no_arms;
  cfg.legs = !a.no_legs;
  cfg.fingers_per_hand = a.fingers;
  cfg.dense = a.dense;
  cfg.size_scale = a.scale;
  cfg.radial_segments = a.radial;
  cfg.axial_segments = a.axial;
  cfg.max_angle_deg = a.max_angle;
  cfg.validate();
  check(a.frames >= 1, ErrorCode::InvalidConfig, "--frames must be >= 1");
  check(a.remesh == "none" || a.remesh == "subdivide" || a.remesh == "decimate", ErrorCode::InvalidConfig,
        "--remesh must be none, subdivide or decimate");

  SynthRig synth = make_rig(cfg);
  if (a.correctives) {
    synth.rig.correctives = fit_correctives_fixture(synth, CorrectivesFixture{}, c.seed);
  }
  sw.lap(timings, "generate");

  const fs::path dir = a.out;
  fs::create_directories(dir);
  json result;
  if (a.remesh != "none") {
    const auto mode = a.remesh == "subdivide" ? RemeshMode::Subdivide : RemeshMode::DecimateLite;
    const RemeshResult rm = remesh_variant(synth, mode);
    CorrespondenceOptions opts;
    opts.source_id = a.remesh;
    synth.rig.correspondences[a.remesh] = precompute_correspondence(rm.source, rm.wrap, opts);
    save_obj(rm.source.vertices, rm.source.faces, dir / "source.obj");
    save_obj(rm.wrap.vertices, rm.wrap.faces, dir / "wrap.obj");
    result["source_topology"] = a.remesh;
    result["source_vertices"] = rm.source.vertex_count();
    sw.lap(timings, "remesh");
  }

  Points rest = synth.rig.mesh.vertices;
  if (a.identity) {
    rest = make_identity_variant(synth, random_identity(synth, c.seed)).rest_vertices;
  }
  const MotionSequence motion = sample_motion(synth, c.seed, a.frames, a.smoothness, PoseLimits::from(cfg));
  MeshPoser poser(synth.rig);
  VertexAnimation posed;
  posed.fps = motion.fps;
  posed.frames = poser.pose_batch(rest, motion.frames, PoseOptions{.correctives = true});
  sw.lap(timings, "pose");

  save_rig(synth.rig, dir / "rig.json");
  save_motion(motion, dir / "motion.json");
  save_obj(rest, synth.rig.mesh.faces, dir / "rest.obj");
  save_vertex_animation(posed, dir / "posed.json");
  json fixture;
  fixture["synth_config_hash"] = hex(cfg.hash());
  fixture["seed"] = cfg.seed;
  fixture["joints"] = synth.rig.joint_count();
  fixture["vertices"] = synth.rig.vertex_count();
  fixture["faces"] = synth.rig.mesh.faces.rows();
  fixture["frames"] = a.frames;
  {
    std::ofstream f(dir / "fixture.json");
    f << fixture.dump(2) << '\n';
    check(static_cast<bool>(f), ErrorCode::IoFailure, "cannot write fixture.json");
  }
  sw.lap(timings, "write");
  result.update(fixture);
  result["posed_hash"] = hex(hash_points(posed.frames));
  result["motion_hash"] = hex(hash_motion(motion));
  return result;
}

struct PrecomputeArgs {
  std::string rig;
  std::string source;
  std::string wrap;
  std::string id;
  double normal_agreement = -2.0;
  std::string out;
  std::string export_corr;
};

json cmd_precompute(const PrecomputeArgs& a, json& timings) {
  Stopwatch sw;
  RigAsset rig = load_rig(a.rig);
  const Mesh source = load_obj(a.source);
  const Mesh wrap = load_obj(a.wrap);
  check(wrap.vertex_count() == rig.vertex_count(), ErrorCode::SizeMismatch,
        "wrap mesh must have the canonical vertex count");
  sw.lap(timings, "load");
  CorrespondenceOptions opts;
  opts.source_id = a.id;
  if (a.normal_agreement > -1.0) {
    opts.normal_agreement = a.normal_agreement;
  }
  Correspondence corr = precompute_correspondence(source, wrap, opts);
  sw.lap(timings, "precompute");
  const Points rec = apply_correspondence(corr, source.vertices);
  const ErrorStats recon = vertex_error_stats(rec, wrap.vertices);
  const ErrorStats surf = closest_point_error(wrap.vertices, source);
  sw.lap(timings, "verify");
  if (!a.export_corr.empty()) {
    ensure_parent(a.export_corr);
    save_correspondence(corr, a.export_corr);
  }
  rig.correspondences[a.id] = std::move(corr);
  const fs::path out = a.out.empty() ? fs::path(a.rig) : fs::path(a.out);
  ensure_parent(out);
  save_rig(rig, out);
  sw.lap(timings, "write");
  return {{"source_id", a.id},
          {"source_vertices", source.vertex_count()},
          {"source_faces", source.faces.rows()},
          {"wrap_reconstruction_m", stats_json(recon)},
          {"wrap_to_source_surface_m", stats_json(surf)}};
}

struct TransferArgs {
  std::string rig;
  std::string topology;
  std::string input;
  std::string out;
};

json cmd_transfer(const TransferArgs& a, json& timings) {
  Stopwatch sw;
  const RigAsset rig = load_rig(a.rig);
  const Correspondence& corr = find_correspondence(rig, a.topology);
  const VertexAnimation in = load_frames(a.input);
  sw.lap(timings, "load");
  VertexAnimation mapped;
  mapped.fps = in.fps;
  for (const auto& f : in.frames) {
    mapped.frames.push_back(apply_correspondence(corr, f));
  }
  sw.lap(timings, "transfer");
  ensure_parent(a.out);
  if (fs::path(a.out).extension() == ".obj") {
    check(mapped.frames.size() == 1, ErrorCode::ValidationFailure, "OBJ output holds exactly one frame");
    save_obj(mapped.frames.front(), rig.mesh.faces, a.out);
  } else {
    save_vertex_animation(mapped, a.out);
  }
  sw.lap(timings, "write");
  return {{"frames", mapped.frames.size()}, {"output_hash", hex(hash_points(mapped.frames))}};
}

struct FitArgs {
  std::string rig;
  std::string rest;
  std::string out;
};

json cmd_fit(const FitArgs& a, json& timings) {
  Stopwatch sw;
  const RigAsset rig = load_rig(a.rig);
  const Points rest = load_rest(rig, a.rest);
  sw.lap(timings, "load");
  FitDiagnostics diag;
  const SkeletonFitter fitter(rig);
  const SkeletonState state = fitter.fit(rest, &diag);
  sw.lap(timings, "fit");
  json skel;
  skel["names"] = rig.skeleton.names;
  skel["rotations"] = json::array();
  skel["positions"] = json::array();
  for (int k = 0; k < state.joint_count(); ++k) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) {
      r.push_back({state.rotations[k](i, 0), state.rotations[k](i, 1), state.rotations[k](i, 2)});
    }
    skel["rotations"].push_back(r);
    skel["positions"].push_back({state.positions(k, 0), state.positions(k, 1), state.positions(k, 2)});
  }
  if (!a.out.empty()) {
    ensure_parent(a.out);
    std::ofstream f(a.out);
    f << std::setprecision(17) << skel.dump(2) << '\n';
    check(static_cast<bool>(f), ErrorCode::IoFailure, "cannot write " + a.out);
  }
  sw.lap(timings, "write");
  json result;
  result["joints"] = state.joint_count();
  result["procrustes_solves"] = diag.procrustes_solves;
  result["warnings"] = diag.warnings;
  if (a.out.empty()) {
    result["skeleton"] = skel;
  }
  return result;
}

struct PoseArgs {
  std::string rig;
  std::string motion;
  std::string rest;
  std::string out;
  bool no_correctives = false;
  std::string joint_orient;
};

json cmd_pose(const PoseArgs& a, json& timings) {
  Stopwatch sw;
  const RigAsset rig = load_rig(a.rig);
  MotionSequence motion = load_motion(a.motion, rig.joint_count());
  const Points rest = load_rest(rig, a.rest);
  check(a.joint_orient.empty() || a.joint_orient == "on" || a.joint_orient == "off", ErrorCode::InvalidConfig,
        "--joint-orient must be on or off");
  if (!a.joint_orient.empty()) {
    for (auto& f : motion.frames) {
      f.joint_orient = a.joint_orient == "on";
    }
  }
  sw.lap(timings, "load");
  const MeshPoser poser(rig);
  VertexAnimation anim;
  anim.fps = motion.fps;
  anim.frames = poser.pose_batch(rest, motion.frames, PoseOptions{.correctives = !a.no_correctives});
  sw.lap(timings, "pose");
  const fs::path out(a.out);
  if (out.extension() == ".json") {
    ensure_parent(out);
    save_vertex_animation(anim, out);
  } else {
    // A directory of per-frame OBJ files.
    fs::create_directories(out);
    for (size_t f = 0; f < anim.frames.size(); ++f) {
      std::ostringstream name;
      name << "frame_" << std::setw(5) << std::setfill('0') << f << ".obj";
      save_obj(anim.frames[f], rig.mesh.faces, out / name.str());
    }
  }
  sw.lap(timings, "write");
  return {{"frames", anim.frames.size()},
          {"correctives", !a.no_correctives && rig.correctives.has_value()},
          {"output_hash", hex(hash_points(anim.frames))}};
}

struct InvertArgs {
  std::string rig;
  std::string input;
  std::string rest;
  std::string out;
  std::string mode = "analytical";
  std::string schedule = "body:2,finger:1,global:1";
  double tau = 0.5;
  int iters = 100;
  double lr = 1e-2;
  std::string region_weights;
  std::string topology;
  bool correctives = false;
  bool allow_cold_start = false;
  std::string encoding = "axis_angle";
};

json cmd_invert(const InvertArgs& a, json& timings) {
  Stopwatch sw;
  InversionConfig cfg;
  cfg.mode = parse_mode(a.mode);
  cfg.schedule = SweepSchedule::parse(a.schedule);
  cfg.tau = a.tau;
  cfg.autograd_iterations = a.iters;
  cfg.step_size = a.lr;
  cfg.region_weights = parse_region_weights(a.region_weights);
  cfg.correctives = a.correctives;
  cfg.allow_cold_start = a.allow_cold_start;
  cfg.output_encoding = parse_encoding(a.encoding);
  cfg.validate();

  const RigAsset rig = load_rig(a.rig);
  VertexAnimation in = load_frames(a.input);
  check(!in.frames.empty(), ErrorCode::ValidationFailure, "no frames to invert");
  if (!a.topology.empty()) {
    const Correspondence& corr = find_correspondence(rig, a.topology);
    for (auto& f : in.frames) {
      f = apply_correspondence(corr, f);
    }
  }
  const Points rest = load_rest(rig, a.rest);
  sw.lap(timings, "load");

  const PoseInverter inverter(rig, rest, cfg);
  MotionSequence motion;
  motion.fps = in.fps;
  json frames = json::array();
  std::vector<double> errors;
  for (size_t f = 0; f < in.frames.size(); ++f) {
    InversionResult r = inverter.run(in.frames[f]);
    r.pose.timestamp = static_cast<double>(f) / in.fps;
    json row;
    row["frame"] = f;
    row["mean_error_mm"] = r.mean_error * 1e3;
    row["passes"] = r.passes_run;
    row["ns_iterations"] = std::accumulate(r.ns_iterations.begin(), r.ns_iterations.end(), 0);
    row["autograd_iterations"] = r.autograd_iterations_run;
    row["flags"] = r.flags;
    json joints = json::array();
    for (size_t k = 0; k < r.joint_residuals.size(); ++k) {
      const auto& jr = r.joint_residuals[k];
      joints.push_back({{"mean_mm", jr.mean * 1e3},
                        {"max_mm", jr.max * 1e3},
                        {"count", jr.count},
                        {"ns_iterations", k < r.ns_iterations.size() ? r.ns_iterations[k] : 0}});
    }
    row["joint_residuals"] = joints;
    frames.push_back(row);
    errors.push_back(r.mean_error);
    motion.frames.push_back(std::move(r.pose));
  }
  sw.lap(timings, "invert");
  if (!a.out.empty()) {
    ensure_parent(a.out);
    save_motion(motion, a.out);
  }
  sw.lap(timings, "write");
  return {{"mode", std::string(mode_name(cfg.mode))},
          {"schedule", cfg.schedule.to_string()},
          {"frames", frames.size()},
          {"mean_error_mm", to_millimeters(error_stats(errors)).mean},
          {"error_mm", stats_json(to_millimeters(error_stats(errors)))},
          {"motion_hash", hex(hash_motion(motion))},
          {"per_frame", frames}};
}

struct MetricsArgs {
  std::string rig;
  std::string predicted;
  std::string reference;
};

json cmd_metrics(const MetricsArgs& a, json& timings) {
  Stopwatch sw;
  const VertexAnimation pred = load_frames(a.predicted);
  const VertexAnimation ref = load_frames(a.reference);
  check(pred.frames.size() == ref.frames.size(), ErrorCode::SizeMismatch, "frame counts differ");
  std::vector<Region> regions;
  if (!a.rig.empty()) {
    regions = load_rig(a.rig).mesh.regions;
  }
  sw.lap(timings, "load");

  std::vector<double> all;
  json per_frame = json::array();
  for (size_t f = 0; f < pred.frames.size(); ++f) {
    check(pred.frames[f].rows() == ref.frames[f].rows(), ErrorCode::SizeMismatch, "vertex counts differ");
    const Eigen::VectorXd d = (pred.frames[f] - ref.frames[f]).rowwise().norm();
    all.insert(all.end(), d.data(), d.data() + d.size());
    per_frame.push_back({{"frame", f}, {"mean_mm", d.mean() * 1e3}});
  }
  json table = json::array();
  table.push_back({{"region", "all"}, {"count", all.size()}});
  {
    const ErrorStats s = to_millimeters(error_stats(all));
    table.back().update(stats_json(s));
  }
  if (!regions.empty()) {
    std::array<std::vector<double>, kRegionCount> by_region;
    for (size_t f = 0; f < pred.frames.size(); ++f) {
      const Eigen::VectorXd d = (pred.frames[f] - ref.frames[f]).rowwise().norm();
      for (Eigen::Index i = 0; i < d.size(); ++i) {
        by_region[static_cast<size_t>(regions[static_cast<size_t>(i)])].push_back(d[i]);
      }
    }
    for (int r = 0; r < kRegionCount; ++r) {
      if (by_region[static_cast<size_t>(r)].empty()) {
        continue;
      }
      json row{{"region", std::string(region_name(static_cast<Region>(r)))}};
      row.update(stats_json(to_millimeters(error_stats(by_region[static_cast<size_t>(r)]))));
      table.push_back(row);
    }
  }
  json result;
  result["frames"] = pred.frames.size();
  result["error_mm"] = table;
  if (pred.frames.size() >= 2) {
    const Stability st = temporal_stability(pred.frames, ref.frames);
    result["temporal_stability_mm"] = {{"max_delta", st.max_delta * 1e3}, {"mean_delta", st.mean_delta * 1e3}};
  }
  result["per_frame"] = per_frame;
  sw.lap(timings, "metrics");
  return result;
}

struct Output {
  std::vector<Points> points;
  MotionSequence motion;

  std::uint64_t hash() const {
    return hash_points(points) ^ hash_motion(motion);
  }
};

struct BenchArgs {
  std::string rig;
  std::string rest;
  std::string stages = "pose,init,analytical";
  std::string batches = "1,32";
  int reps = 11;
  int warmup = 1;
  bool correctives = false;
};

json cmd_bench(const BenchArgs& a, const Common& c, json& timings) {
  Stopwatch sw;
  check(a.reps >= 1 && a.warmup >= 0, ErrorCode::InvalidConfig, "--reps must be >= 1 and --warmup >= 0");
  const RigAsset rig = load_rig(a.rig);
  const Points rest = load_rest(rig, a.rest);
  const std::vector<int> batches = parse_int_list(a.batches);
  for (int b : batches) {
    check(b >= 1, ErrorCode::InvalidConfig, "batch sizes must be >= 1");
  }
  const int max_batch = *std::max_element(batches.begin(), batches.end());
  const auto poses = random_poses(rig.joint_count(), max_batch, c.seed, 30.0);
  const MeshPoser poser(rig);
  const PoseOptions opts{.correctives = a.correctives};
  const auto posed = poser.pose_batch(rest, poses, opts);
  sw.lap(timings, "setup");

  std::stringstream ss(a.stages);
  std::string stage;
  json tables = json::array();
  while (std::getline(ss, stage, ',')) {
    // Outputs of the timed runs are kept and compared with an untimed run afterwards.
    std::function<Output(int)> work;
    if (stage == "pose") {
      work = [&](int b) { return Output{poser.pose_batch(rest, std::span(poses).first(b), opts), {}}; };
    } else if (stage == "init" || stage == "analytical" || stage == "autograd") {
      InversionConfig cfg;
      cfg.mode = parse_mode(stage);
      auto inverter = std::make_shared<PoseInverter>(rig, rest, cfg);
      work = [inverter, &posed](int b) {
        Output o;
        for (int i = 0; i < b; ++i) {
          o.motion.frames.push_back(inverter->run(posed[static_cast<size_t>(i)]).pose);
        }
        return o;
      };
    } else {
      fail(ErrorCode::InvalidConfig, "unknown bench stage '" + stage + "'");
    }
    std::vector<Output> timed(batches.size());
    std::vector<bool> identical(batches.size(), true);
    const BenchTable table = throughput_bench(
        stage,
        [&](int b) {
          const auto at = static_cast<size_t>(std::find(batches.begin(), batches.end(), b) - batches.begin());
          timed[at] = work(b);
        },
        batches, a.reps, a.warmup);
    for (size_t i = 0; i < batches.size(); ++i) {
      identical[i] = timed[i].hash() == work(batches[i]).hash();
    }
    for (size_t i = 0; i < table.rows.size(); ++i) {
      const auto& row = table.rows[i];
      tables.push_back({{"stage", stage},
                        {"batch", row.batch},
                        {"ms_per_call", row.ms_per_call},
                        {"items_per_sec", row.items_per_sec},
                        {"repetitions", row.repetitions},
                        {"low_confidence", row.low_confidence},
                        {"bit_identical", static_cast<bool>(identical[i])}});
    }
    sw.lap(timings, "bench_" + stage);
  }
  const MachineInfo m = machine_info();
  return {{"machine", {{"cpu", m.cpu}, {"hardware_threads", m.hardware_threads}, {"threads", m.threads}}},
          {"throughput", tables}};
}

int exit_code_for(const Error& e) {
  return is_numeric_failure(e.code()) ? kExitNumeric : kExitValidation;
}

} // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"unirig: rig transfer, posing and pose inversion on a canonical mesh", "unirig"};
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "", "TOML/INI file overriding defaults ([subcommand] sections)");
  app.set_version_flag("--version", UNIRIG_VERSION);

  Common common;
  app.add_option("--format", common.format, "Report format")->check(CLI::IsMember({"json", "table"}));
  app.add_option("--threads", common.threads, "Worker cap, 0 = all cores")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", common.seed, "Seed for every random choice");
  app.add_option("--report", common.report, "Also write the JSON report to this file");

  SynthArgs synth;
  auto* s = app.add_subcommand("synth", "Generate a synthetic rig, motion and posed fixtures");
  s->add_option("--out", synth.out, "Output directory")->required();
  s->add_option("--torso", synth.torso, "Torso segments above the pelvis");
  s->add_flag("--no-head", synth.no_head);
  s->add_flag("--no-arms", synth.no_arms);
  s->add_flag("--no-legs", synth.no_legs);
  s->add_option("--fingers", synth.fingers, "Fingers per hand");
  s->add_flag("--dense", synth.dense, "Root plus a 77-joint chain");
  s->add_option("--scale", synth.scale, "Size scale");
  s->add_option("--radial", synth.radial, "Radial segments per capsule");
  s->add_option("--axial", synth.axial, "Axial segments per capsule");
  s->add_option("--frames", synth.frames, "Motion frames");
  s->add_option("--smoothness", synth.smoothness, "Motion smoothness in [0, 1)");
  s->add_option("--max-angle", synth.max_angle, "Max joint angle, degrees");
  s->add_flag("--identity", synth.identity, "Write a random identity variant as the rest shape");
  s->add_option("--remesh", synth.remesh, "Register a source topology: none|subdivide|decimate");
  s->add_flag("--correctives", synth.correctives, "Attach a fitted correctives net");

  PrecomputeArgs pre;
  auto* p = app.add_subcommand("precompute", "Register a source topology against the canonical mesh");
  p->add_option("--rig", pre.rig)->required()->check(CLI::ExistingFile);
  p->add_option("--source", pre.source, "Source mesh (OBJ)")->required()->check(CLI::ExistingFile);
  p->add_option("--wrap", pre.wrap, "Canonical mesh registered onto the source (OBJ)")
      ->required()
      ->check(CLI::ExistingFile);
  p->add_option("--source-id", pre.id)->required();
  p->add_option("--normal-agreement", pre.normal_agreement, "Min normal cosine, below -1 disables");
  p->add_option("--out", pre.out, "Rig output path, default overwrites --rig");
  p->add_option("--export", pre.export_corr, "Standalone correspondence file");

  TransferArgs tr;
  auto* t = app.add_subcommand("transfer", "Map source-topology vertices onto the canonical mesh");
  t->add_option("--rig", tr.rig)->required()->check(CLI::ExistingFile);
  t->add_option("--source-topology", tr.topology)->required();
  t->add_option("--input", tr.input, "OBJ or vertex animation")->required()->check(CLI::ExistingFile);
  t->add_option("--out", tr.out, "OBJ or vertex animation")->required();

  FitArgs fit;
  auto* f = app.add_subcommand("fit-skel", "Fit the skeleton to a rest shape");
  f->add_option("--rig", fit.rig)->required()->check(CLI::ExistingFile);
  f->add_option("--rest", fit.rest, "Rest shape OBJ, default bind mesh")->check(CLI::ExistingFile);
  f->add_option("--out", fit.out, "Skeleton JSON");

  PoseArgs pose;
  auto* po = app.add_subcommand("pose", "Pose a rest shape with a motion");
  po->add_option("--rig", pose.rig)->required()->check(CLI::ExistingFile);
  po->add_option("--motion", pose.motion)->required()->check(CLI::ExistingFile);
  po->add_option("--rest", pose.rest, "Rest shape OBJ, default bind mesh")->check(CLI::ExistingFile);
  po->add_option("--out", pose.out, "Vertex animation (.json) or OBJ directory")->required();
  po->add_flag("--no-correctives", pose.no_correctives);
  po->add_option("--joint-orient", pose.joint_orient, "on|off, default from the motion file");

  InvertArgs inv;
  auto* in = app.add_subcommand("invert", "Recover a motion from posed meshes");
  in->add_option("--rig", inv.rig)->required()->check(CLI::ExistingFile);
  in->add_option("--input", inv.input, "OBJ or vertex animation")->required()->check(CLI::ExistingFile);
  in->add_option("--rest", inv.rest, "Rest shape OBJ, default bind mesh")->check(CLI::ExistingFile);
  in->add_option("--out", inv.out, "Motion file");
  in->add_option("--mode", inv.mode, "init|analytical|autograd");
  in->add_option("--schedule", inv.schedule, "Sweep schedule");
  in->add_option("--tau", inv.tau, "Subtree weight threshold");
  in->add_option("--iters", inv.iters, "Autograd iterations");
  in->add_option("--lr", inv.lr, "Autograd step size");
  in->add_option("--region-weights", inv.region_weights, "e.g. hands:5,feet:2");
  in->add_option("--source-topology", inv.topology, "Registered source topology of the input");
  in->add_flag("--correctives", inv.correctives, "Model correctives while inverting");
  in->add_flag("--allow-cold-start", inv.allow_cold_start, "Autograd without an initial estimate");
  in->add_option("--encoding", inv.encoding, "axis_angle|matrix|6d");

  MetricsArgs met;
  auto* m = app.add_subcommand("metrics", "Vertex error statistics between two sequences");
  m->add_option("--rig", met.rig, "Rig for region labels")->check(CLI::ExistingFile);
  m->add_option("--predicted", met.predicted)->required()->check(CLI::ExistingFile);
  m->add_option("--reference", met.reference)->required()->check(CLI::ExistingFile);

  BenchArgs bench;
  auto* b = app.add_subcommand("bench", "Throughput per stage and batch size");
  b->add_option("--rig", bench.rig)->required()->check(CLI::ExistingFile);
  b->add_option("--rest", bench.rest)->check(CLI::ExistingFile);
  b->add_option("--stages", bench.stages, "pose,init,analytical,autograd");
  b->add_option("--batches", bench.batches, "Comma separated batch sizes");
  b->add_option("--reps", bench.reps);
  b->add_option("--warmup", bench.warmup);
  b->add_flag("--correctives", bench.correctives);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  const CLI::App* sub = app.get_subcommands().front();
  json report;
  report["schema"] = "unirig-report";
  report["schema_version"] = kReportSchema;
  report["version"] = UNIRIG_VERSION;
  report["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                    std::to_string(EIGEN_MINOR_VERSION);
  report["compiler"] = machine_info().compiler;
  report["command"] = sub->get_name();
  const json config = resolved_config(app, *sub);
  report["config"] = config;
  const std::string dumped = config.dump();
  report["config_hash"] = hex(fnv1a(dumped.data(), dumped.size()));
  json timings = json::object();

  try {
    set_thread_count(common.threads);
    const auto start = std::chrono::steady_clock::now();
    json result;
    const std::string name = sub->get_name();
    if (name == "synth") {
      result = cmd_synth(synth, common, timings);
    } else if (name == "precompute") {
      result = cmd_precompute(pre, timings);
    } else if (name == "transfer") {
      result = cmd_transfer(tr, timings);
    } else if (name == "fit-skel") {
      result = cmd_fit(fit, timings);
    } else if (name == "pose") {
      result = cmd_pose(pose, timings);
    } else if (name == "invert") {
      result = cmd_invert(inv, timings);
    } else if (name == "metrics") {
      result = cmd_metrics(met, timings);
    } else {
      result = cmd_bench(bench, common, timings);
    }
    timings["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    report["timings_s"] = timings;
    report["result"] = result;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const fs::filesystem_error& e) {
    err << "error [IoFailure]: " << e.what() << '\n';
    return kExitValidation;
  }

  if (!common.report.empty()) {
    std::ofstream f(common.report);
    f << report.dump(2) << '\n';
    if (!f) {
      err << "error [IoFailure]: cannot write " << common.report << '\n';
      return kExitValidation;
    }
  }
  if (common.format == "table") {
    print_table(report, out);
  } else {
    out << report.dump(2) << '\n';
  }
  return kExitOk;
}

} // namespace unirig::cli
