#include "unirig/pose_inversion.hpp"

#include "unirig/error.hpp"
#include "unirig/parallel.hpp"
#include "unirig/rotation.hpp"
#include "unirig/topo_transfer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace unirig {

namespace {

double inf_norm(const Mat3& m) {
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

// Orient-on chain: pre_k is the bind local rotation, offset_k the bind local translation.
struct Link {
  Mat3 pre;
  Vec3 offset;
};

std::vector<Link> orient_links(const Skeleton& skeleton, std::span<const RigidTransform> bind) {
  std::vector<Link> links(static_cast<size_t>(skeleton.joint_count()));
  for (int k = 0; k < skeleton.joint_count(); ++k) {
    const int p = skeleton.parents[k];
    const RigidTransform local = p == kNoParent ? bind[k] : bind[p].inverse() * bind[k];
    links[k] = {local.rotation, local.translation};
  }
  return links;
}

} // namespace

SweepSchedule SweepSchedule::parse(const std::string& text) {
  SweepSchedule out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) {
      continue;
    }
    const auto colon = item.find(':');
    check(colon != std::string::npos, ErrorCode::InvalidConfig, "schedule entry '" + item + "' is not key:count");
    const std::string key = item.substr(0, colon);
    int value = 0;
    try {
      size_t used = 0;
      value = std::stoi(item.substr(colon + 1), &used);
      check(used == item.size() - colon - 1, ErrorCode::InvalidConfig, "bad schedule count in '" + item + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidConfig, "bad schedule count in '" + item + "'");
    }
    check(value >= 0, ErrorCode::InvalidConfig, "schedule counts must be >= 0");
    if (key == "body") {
      out.body = value;
    } else if (key == "finger") {
      out.finger = value;
    } else if (key == "global" || key == "full") {
      out.global = value;
    } else {
      fail(ErrorCode::InvalidConfig, "unknown schedule key '" + key + "'");
    }
  }
  return out;
}

std::string SweepSchedule::to_string() const {
  return "body:" + std::to_string(body) + ",finger:" + std::to_string(finger) + ",global:" + std::to_string(global);
}

std::string_view mode_name(InversionMode mode) {
  switch (mode) {
    case InversionMode::InitOnly:
      return "init";
    case InversionMode::Analytical:
      return "analytical";
    case InversionMode::Autograd:
      return "autograd";
  }
  return "?";
}

InversionMode parse_mode(std::string_view name) {
  if (name == "init") {
    return InversionMode::InitOnly;
  }
  if (name == "analytical") {
    return InversionMode::Analytical;
  }
  if (name == "autograd") {
    return InversionMode::Autograd;
  }
  fail(ErrorCode::InvalidConfig, "unknown inversion mode '" + std::string(name) + "'");
}

void InversionConfig::validate() const {
  check(schedule.body >= 0 && schedule.finger >= 0 && schedule.global >= 0, ErrorCode::InvalidConfig,
        "sweep counts must be >= 0");
  check(tau > 0.0 && tau < 1.0, ErrorCode::InvalidConfig, "tau must lie in (0, 1)");
  check(ns_tolerance > 0.0 && ns_tolerance < 1.0, ErrorCode::InvalidConfig, "NS tolerance must lie in (0, 1)");
  check(ns_max_iterations >= 1, ErrorCode::InvalidConfig, "NS iteration cap must be >= 1");
  check(autograd_iterations >= 0, ErrorCode::InvalidConfig, "autograd iterations must be >= 0");
  check(step_size > 0.0 && std::isfinite(step_size), ErrorCode::InvalidConfig, "step size must be positive");
  check(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0, ErrorCode::InvalidConfig,
        "moment decays must lie in (0, 1)");
  for (const double w : region_weights) {
    check(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidConfig, "region weights must be non-negative");
  }
}

PolarResult newton_schulz_polar(const Mat3& h, const Mat3& r_current, int max_iterations, double tolerance) {
  check(h.allFinite(), ErrorCode::ValidationFailure, "covariance is not finite");
  PolarResult out;
  out.rotation = r_current;
  if (inf_norm(h) < 1e-12) {
    out.flag = "ZeroCovariance";
    return out;
  }
  const Mat3 dh = r_current.transpose() * h;
  if (dh.determinant() < 0.0) {
    out.flag = "ImproperCovariance";
    return out;
  }
  Mat3 r = dh / inf_norm(dh);
  const Mat3 eye = Mat3::Identity();
  for (int it = 0; it < max_iterations; ++it) {
    if ((r.transpose() * r - eye).norm() < tolerance) {
      out.converged = true;
      break;
    }
    r = 0.5 * r * (3.0 * eye - r.transpose() * r);
    out.iterations = it + 1;
  }
  if (!out.converged && (r.transpose() * r - eye).norm() < tolerance) {
    out.converged = true;
  }
  if (!out.converged) {
    out.flag = "NotConverged";
    return out;
  }
  // Converged to within tolerance; the final projection only removes the residual.
  out.rotation = project_to_rotation(r_current * r);
  return out;
}

PoseInverter::PoseInverter(const RigAsset& rig, const InversionConfig& config)
    : PoseInverter(rig, rig.mesh.vertices, config) {}

PoseInverter::PoseInverter(const RigAsset& rig, const Points& rest_vertices, const InversionConfig& config)
    : rig_(&rig), config_(config), rest_(rest_vertices), poser_(rig) {
  config_.validate();
  rest_skeleton_ = poser_.fit(rest_);
  rest_inverse_ = bind_inverses(rest_skeleton_.transforms());

  const int j = rig.joint_count();
  const int n = rig.vertex_count();
  subtrees_.resize(static_cast<size_t>(j));
  selections_.resize(static_cast<size_t>(j));
  masses_.resize(static_cast<size_t>(j));
  own_.resize(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    subtrees_[k] = rig.skeleton.subtree_mask(k);
  }
  for (int i = 0; i < n; ++i) {
    const auto js = rig.weights.row_joints(i);
    const auto ws = rig.weights.row_values(i);
    for (int k = 0; k < j; ++k) {
      double mass = 0.0;
      for (size_t e = 0; e < js.size(); ++e) {
        if (subtrees_[k][js[e]]) {
          mass += ws[e];
        }
      }
      if (mass >= config_.tau) {
        selections_[k].push_back(i);
        masses_[k].push_back(mass);
        own_[k].push_back(rig.weights.weight(i, k));
      }
    }
  }

  vertex_loss_weights_.assign(static_cast<size_t>(n), 1.0);
  if (!rig.mesh.regions.empty()) {
    for (int i = 0; i < n; ++i) {
      vertex_loss_weights_[i] = config_.region_weights[static_cast<size_t>(rig.mesh.regions[i])];
    }
  }
}

PoseFrame PoseInverter::local_from_world(const SkeletonState& world) const {
  const auto bind = rest_skeleton_.transforms();
  const auto links = orient_links(rig_->skeleton, bind);
  const int j = rig_->joint_count();
  std::vector<Mat3> local(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    const int p = rig_->skeleton.parents[k];
    const Mat3 frame = p == kNoParent ? links[k].pre : Mat3(world.rotations[p] * links[k].pre);
    local[k] = project_to_rotation(frame.transpose() * world.rotations[k]);
  }
  const Vec3 root = world.positions.row(0).transpose() - rest_skeleton_.positions.row(0).transpose();
  return PoseFrame::from_matrices(local, root, RotationEncoding::Matrix);
}

InitEstimate PoseInverter::init(const Points& posed) const {
  check(posed.rows() == rig_->vertex_count(), ErrorCode::SizeMismatch,
        "posed vertex count does not match the canonical topology");
  InitEstimate out;
  out.posed_skeleton = poser_.fit(posed);
  out.posed_skeleton.source = SkeletonState::Source::Posed;
  out.pose = local_from_world(out.posed_skeleton);
  return out;
}

Points PoseInverter::repose(const PoseFrame& pose) const {
  return poser_.pose(rest_, rest_skeleton_, pose, {.correctives = config_.correctives});
}

double PoseInverter::mean_error(const PoseFrame& pose, const Points& posed) const {
  return (repose(pose) - posed).rowwise().norm().mean();
}

void PoseInverter::finish(InversionResult& result, const Points& posed) const {
  const Points reposed = repose(result.pose);
  const Eigen::VectorXd err = (reposed - posed).rowwise().norm();
  result.mean_error = err.mean();
  const int j = rig_->joint_count();
  result.joint_residuals.assign(static_cast<size_t>(j), {});
  for (int k = 0; k < j; ++k) {
    auto& r = result.joint_residuals[k];
    for (const int i : selections_[k]) {
      r.mean += err[i];
      r.max = std::max(r.max, err[i]);
    }
    r.count = static_cast<int>(selections_[k].size());
    if (r.count > 0) {
      r.mean /= r.count;
    }
  }
  result.ns_iterations.resize(static_cast<size_t>(j), 0);
  if (result.pose.encoding != config_.output_encoding) {
    result.pose = PoseFrame::from_matrices(result.pose.matrices(), result.pose.root_translation,
                                           config_.output_encoding);
  }
}

InversionResult PoseInverter::analytical(const Points& posed) const {
  return analytical(posed, init(posed).pose);
}

InversionResult PoseInverter::analytical(const Points& posed, const PoseFrame& start) const {
  const RigAsset& rig = *rig_;
  const int j = rig.joint_count();
  check(posed.rows() == rig.vertex_count(), ErrorCode::SizeMismatch,
        "posed vertex count does not match the canonical topology");
  check(start.joint_count() == j, ErrorCode::SizeMismatch, "start pose joint count does not match the rig");

  const auto bind = rest_skeleton_.transforms();
  const auto links = orient_links(rig.skeleton, bind);
  const auto& parents = rig.skeleton.parents;

  std::vector<Mat3> local = corrective_inputs(rig.skeleton, bind, start);
  Vec3 root = start.root_translation;

  InversionResult result;
  result.ns_iterations.assign(static_cast<size_t>(j), 0);
  std::vector<bool> flagged_empty(static_cast<size_t>(j), false);

  std::vector<int> body;
  std::vector<int> finger;
  std::vector<int> all(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    all[k] = k;
    (rig.skeleton.is_finger(k) ? finger : body).push_back(k);
  }
  std::vector<const std::vector<int>*> passes;
  for (int p = 0; p < config_.schedule.body; ++p) {
    passes.push_back(&body);
  }
  for (int p = 0; p < config_.schedule.finger; ++p) {
    passes.push_back(&finger);
  }
  for (int p = 0; p < config_.schedule.global; ++p) {
    passes.push_back(&all);
  }

  Points shaped = rest_;
  std::vector<RigidTransform> skin(static_cast<size_t>(j));
  for (const auto* pass : passes) {
    if (config_.correctives && rig.correctives) {
      const auto frame = PoseFrame::from_matrices(local, root, RotationEncoding::Matrix);
      shaped = rest_ + rig.correctives->evaluate(corrective_inputs(rig.skeleton, bind, frame));
    }
    for (const int k : *pass) {
      const auto& sel = selections_[k];
      if (sel.empty()) {
        if (!flagged_empty[k]) {
          result.flags.push_back("EmptySelection: joint " + rig.skeleton.names[k] + " skipped");
          flagged_empty[k] = true;
        }
        continue;
      }
      const auto globals = forward_kinematics(parents, bind, local, root, true);
      for (int q = 0; q < j; ++q) {
        skin[q] = globals.transforms[q] * rest_inverse_[q];
      }
      const auto& subtree = subtrees_[k];
      const auto& mass = masses_[k];
      const auto& own = own_[k];

      // Subtree contribution (predicted) and observation minus ancestor contribution.
      Points pred(static_cast<Eigen::Index>(sel.size()), 3);
      Points obs(static_cast<Eigen::Index>(sel.size()), 3);
      for (size_t e = 0; e < sel.size(); ++e) {
        const int i = sel[e];
        const Vec3 v = shaped.row(i).transpose();
        Vec3 sub = Vec3::Zero();
        Vec3 anc = Vec3::Zero();
        const auto js = rig.weights.row_joints(i);
        const auto ws = rig.weights.row_values(i);
        for (size_t c = 0; c < js.size(); ++c) {
          const auto& m = skin[js[c]];
          (subtree[js[c]] ? sub : anc) += ws[c] * (m.rotation * v + m.translation);
        }
        pred.row(static_cast<Eigen::Index>(e)) = sub.transpose();
        obs.row(static_cast<Eigen::Index>(e)) = (posed.row(i).transpose() - anc).transpose();
      }

      const auto& g = globals.transforms[k];
      const bool is_root = parents[k] == kNoParent;
      Vec3 pivot_src = Vec3::Zero();
      Vec3 pivot_dst = Vec3::Zero();
      if (is_root) {
        double total = 0.0;
        for (size_t e = 0; e < sel.size(); ++e) {
          pivot_src += own[e] * pred.row(static_cast<Eigen::Index>(e)).transpose();
          pivot_dst += own[e] * obs.row(static_cast<Eigen::Index>(e)).transpose();
          total += own[e];
        }
        pivot_src /= total;
        pivot_dst /= total;
      }
      Mat3 h = Mat3::Zero();
      for (size_t e = 0; e < sel.size(); ++e) {
        const auto row = static_cast<Eigen::Index>(e);
        Vec3 src;
        Vec3 dst;
        if (is_root) {
          src = pred.row(row).transpose() - pivot_src;
          dst = obs.row(row).transpose() - pivot_dst;
        } else {
          src = pred.row(row).transpose() - mass[e] * g.translation;
          dst = obs.row(row).transpose() - mass[e] * g.translation;
        }
        h += own[e] * dst * (g.rotation.transpose() * src).transpose();
      }
      const PolarResult polar =
          newton_schulz_polar(h, g.rotation, config_.ns_max_iterations, config_.ns_tolerance);
      result.ns_iterations[k] += polar.iterations;
      if (!polar.flag.empty()) {
        result.flags.push_back(polar.flag + ": joint " + rig.skeleton.names[k]);
        continue;
      }
      const Mat3& r_new = polar.rotation;
      if (is_root) {
        const Mat3 delta = r_new * g.rotation.transpose();
        const Vec3 t_new = delta * (g.translation - pivot_src) + pivot_dst;
        local[k] = project_to_rotation(links[k].pre.transpose() * r_new);
        root = t_new - links[k].offset;
      } else {
        const Mat3 frame = globals.transforms[parents[k]].rotation * links[k].pre;
        local[k] = project_to_rotation(frame.transpose() * r_new);
      }
    }
    ++result.passes_run;
  }

  result.pose = PoseFrame::from_matrices(local, root, RotationEncoding::Matrix);
  finish(result, posed);
  return result;
}

InversionResult PoseInverter::autograd(const Points& posed, const std::optional<PoseFrame>& init) const {
  const RigAsset& rig = *rig_;
  const int j = rig.joint_count();
  const int n = rig.vertex_count();
  check(posed.rows() == n, ErrorCode::SizeMismatch, "posed vertex count does not match the canonical topology");
  if (!init.has_value()) {
    check(config_.allow_cold_start, ErrorCode::MissingInit,
          "autograd refinement needs a warm start (pass an init pose or allow cold starts explicitly)");
  }
  const auto bind = rest_skeleton_.transforms();
  const PoseFrame start = init.value_or(PoseFrame::identity(j));
  check(start.joint_count() == j, ErrorCode::SizeMismatch, "init pose joint count does not match the rig");

  PoseFrame params =
      PoseFrame::from_matrices(corrective_inputs(rig.skeleton, bind, start), start.root_translation,
                               RotationEncoding::SixD);
  double weight_sum = 0.0;
  for (const double w : vertex_loss_weights_) {
    weight_sum += w;
  }
  check(weight_sum > 0.0, ErrorCode::InvalidConfig, "region weights select no vertices");

  const PoseOptions options{.correctives = config_.correctives};
  RowMatrix m_rot = RowMatrix::Zero(j, 6);
  RowMatrix v_rot = RowMatrix::Zero(j, 6);
  Vec3 m_t = Vec3::Zero();
  Vec3 v_t = Vec3::Zero();

  InversionResult result;
  PoseFrame best = params;
  double best_metric = std::numeric_limits<double>::infinity();
  double best_loss = 0.0;
  const double eps = 1e-8;
  double last_loss = 0.0;
  double initial_metric = 0.0;
  for (int it = 0; it <= config_.autograd_iterations; ++it) {
    const Points reposed = poser_.pose(rest_, rest_skeleton_, params, options);
    const Points diff = reposed - posed;
    double loss = 0.0;
    double metric = 0.0;
    Points grad(n, 3);
    for (int i = 0; i < n; ++i) {
      const double w = vertex_loss_weights_[i];
      const double d2 = diff.row(i).squaredNorm();
      loss += w * d2;
      metric += w * std::sqrt(d2);
      grad.row(i) = (2.0 * w / weight_sum) * diff.row(i);
    }
    loss /= weight_sum;
    metric /= weight_sum;
    check(std::isfinite(loss), ErrorCode::Diverged, "autograd loss is not finite");
    if (it == 0) {
      result.initial_loss = loss;
      initial_metric = metric;
    }
    last_loss = loss;
    if (metric < best_metric) {
      best_metric = metric;
      best_loss = loss;
      best = params;
    }
    if (it == config_.autograd_iterations) {
      break;
    }
    const PoseGradient g = pose_vjp(rig, rest_skeleton_, rest_, params, grad, options);
    const double step = it + 1;
    const double c1 = 1.0 - std::pow(config_.beta1, step);
    const double c2 = 1.0 - std::pow(config_.beta2, step);
    m_rot = config_.beta1 * m_rot + (1.0 - config_.beta1) * g.rotations;
    v_rot = config_.beta2 * v_rot + (1.0 - config_.beta2) * g.rotations.cwiseAbs2();
    m_t = config_.beta1 * m_t + (1.0 - config_.beta1) * g.root_translation;
    v_t = config_.beta2 * v_t + (1.0 - config_.beta2) * g.root_translation.cwiseAbs2();
    params.rotations.array() -=
        config_.step_size * (m_rot.array() / c1) / ((v_rot.array() / c2).sqrt() + eps);
    params.root_translation.array() -= config_.step_size * (m_t.array() / c1) / ((v_t.array() / c2).sqrt() + eps);
    ++result.autograd_iterations_run;
  }
  // Adaptive moments overshoot from a near-converged start; that only counts
  // as divergence when no iterate beat the start. Ratios are taken against at
  // least (1 mm)^2: at an exact optimum Adam still jitters at about that scale.
  constexpr double kLossFloor = 1e-6;
  if (last_loss > 10.0 * std::max(result.initial_loss, kLossFloor)) {
    if (!(best_metric < initial_metric)) {
      std::ostringstream msg;
      msg << "autograd loss rose from " << result.initial_loss << " to " << last_loss << " m^2";
      fail(ErrorCode::Diverged, msg.str());
    }
    result.flags.push_back("FinalIterateOvershoot");
  }
  result.final_loss = best_loss;
  result.pose = PoseFrame::from_matrices(best.matrices(), best.root_translation, RotationEncoding::Matrix);
  finish(result, posed);
  return result;
}

InversionResult PoseInverter::run(const Points& posed) const {
  const InitEstimate start = init(posed);
  if (config_.mode == InversionMode::InitOnly) {
    InversionResult result;
    result.pose = start.pose;
    finish(result, posed);
    return result;
  }
  InversionResult analytic = analytical(posed, start.pose);
  if (config_.mode == InversionMode::Analytical) {
    return analytic;
  }
  InversionResult refined = autograd(posed, analytic.pose);
  refined.passes_run = analytic.passes_run;
  refined.ns_iterations = analytic.ns_iterations;
  refined.flags.insert(refined.flags.begin(), analytic.flags.begin(), analytic.flags.end());
  return refined;
}

InitEstimate invert_init(const RigAsset& rig, const Points& posed) {
  return PoseInverter(rig).init(posed);
}

InversionResult invert_analytical(const RigAsset& rig, const Points& posed, const InversionConfig& config) {
  return PoseInverter(rig, config).analytical(posed);
}

InversionResult invert_autograd(const RigAsset& rig, const Points& posed, const std::optional<PoseFrame>& init,
                                const InversionConfig& config) {
  return PoseInverter(rig, config).autograd(posed, init);
}

InversionResult invert(const RigAsset& rig, const Points& posed, const std::optional<std::string>& source_topology,
                       const InversionConfig& config) {
  if (source_topology.has_value()) {
    const Correspondence& corr = find_correspondence(rig, *source_topology);
    return PoseInverter(rig, config).run(apply_correspondence(corr, posed));
  }
  return PoseInverter(rig, config).run(posed);
}

} // namespace unirig
