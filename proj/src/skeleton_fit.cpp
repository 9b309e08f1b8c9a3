#include "unirig/skeleton_fit.hpp"

#include "unirig/error.hpp"
#include "unirig/rotation.hpp"

#include <Eigen/LU>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <optional>

namespace unirig {

namespace {

constexpr double kNegligibleWeight = 1e-12;
constexpr double kRankTolerance = 1e-10;

// Returns nullopt when the covariance has rank < 2.
std::optional<Mat3> polar_rotation(const Mat3& covariance) {
  const Eigen::JacobiSVD<Mat3> svd(covariance, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sigma = svd.singularValues();
  if (!(sigma[0] > 0.0) || sigma[1] <= kRankTolerance * sigma[0]) {
    return std::nullopt;
  }
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return svd.matrixU() * d * svd.matrixV().transpose();
}

} // namespace

JointRegressor build_joint_regressor(const RigAsset& rig, const FitConfig& config) {
  const int n = rig.vertex_count();
  const int j = rig.joint_count();
  const auto& skel = rig.skeleton;

  std::vector<std::vector<int>> support(static_cast<size_t>(j));
  for (int i = 0; i < n; ++i) {
    std::vector<bool> seen(static_cast<size_t>(j), false);
    for (const auto k : rig.weights.row_joints(i)) {
      if (rig.weights.weight(i, k) <= 0.0) {
        continue;
      }
      // Vertex i supports joint k and every child of k (k is their parent).
      if (!seen[k]) {
        seen[k] = true;
        support[k].push_back(i);
      }
    }
  }
  const auto children = skel.children();
  for (int k = 0; k < j; ++k) {
    for (const int c : children[k]) {
      for (const int i : support[k]) {
        if (rig.weights.weight(i, k) > 0.0 && rig.weights.weight(i, c) <= 0.0) {
          support[c].push_back(i);
        }
      }
    }
  }
  for (auto& s : support) {
    std::sort(s.begin(), s.end());
    s.erase(std::unique(s.begin(), s.end()), s.end());
  }

  std::vector<Eigen::Triplet<double>> triplets;
  for (int k = 0; k < j; ++k) {
    const auto& sk = support[k];
    check(!sk.empty(), ErrorCode::EmptySupport, "joint " + skel.names[k] + " influences no vertices");
    const Vec3 joint = skel.bind[k].translation;
    const auto count = static_cast<double>(sk.size());

    double scale = 0.0;
    for (const int i : sk) {
      scale += (rig.mesh.vertices.row(i).transpose() - joint).squaredNorm();
    }
    scale = std::sqrt(scale / count);
    if (scale <= 0.0) {
      scale = 1.0;
    }

    // Minimise |sum w p|^2 + ridge * sum c_i w_i^2 subject to sum w = 1, with
    // p = (v - j) / scale and c_i = |p_i|^locality penalising far vertices.
    // With d_i = 1 / c_i the minimiser is w_i = d_i (1 - p_i . u) / (sum d - s . u),
    // u = (ridge I + sum d p p^T)^-1 s, s = sum d p.
    std::vector<double> d(sk.size());
    Mat3 m = Mat3::Zero();
    Vec3 s = Vec3::Zero();
    double d_sum = 0.0;
    for (size_t e = 0; e < sk.size(); ++e) {
      const Vec3 p = (rig.mesh.vertices.row(sk[e]).transpose() - joint) / scale;
      d[e] = 1.0 / std::max(std::pow(p.norm(), config.locality), 1e-6);
      m += d[e] * p * p.transpose();
      s += d[e] * p;
      d_sum += d[e];
    }
    const Vec3 u = (config.ridge * Mat3::Identity() + m).partialPivLu().solve(s);
    const double denom = d_sum - s.dot(u);
    check(std::isfinite(denom) && denom > 1e-12 * d_sum && u.allFinite(), ErrorCode::SingularSystem,
          "regressor system for joint " + skel.names[k] + " is singular");

    std::vector<double> w(sk.size());
    double total = 0.0;
    for (size_t e = 0; e < sk.size(); ++e) {
      const Vec3 p = (rig.mesh.vertices.row(sk[e]).transpose() - joint) / scale;
      w[e] = d[e] * (1.0 - p.dot(u)) / denom;
      if (std::abs(w[e]) < config.sparsify) {
        w[e] = 0.0;
      }
      total += w[e];
    }
    check(std::abs(total) > 1e-12, ErrorCode::SingularSystem,
          "regressor row for joint " + skel.names[k] + " vanished after sparsification");
    for (size_t e = 0; e < sk.size(); ++e) {
      if (w[e] != 0.0) {
        triplets.emplace_back(k, sk[e], w[e] / total);
      }
    }
  }

  JointRegressor out;
  out.matrix.resize(j, n);
  out.matrix.setFromTriplets(triplets.begin(), triplets.end());
  out.matrix.makeCompressed();
  out.support = std::move(support);
  return out;
}

Points regress_joints(const JointRegressor& regressor, const Points& rest_vertices) {
  check(rest_vertices.rows() == regressor.vertex_count(), ErrorCode::SizeMismatch,
        "regressor expects " + std::to_string(regressor.vertex_count()) + " vertices, got " +
            std::to_string(rest_vertices.rows()));
  return regressor.matrix * rest_vertices;
}

Mat3 kabsch_rotation(const Points& src, const Points& dst, std::span<const double> weights) {
  check(src.rows() == dst.rows() && static_cast<size_t>(src.rows()) == weights.size(), ErrorCode::SizeMismatch,
        "Procrustes inputs differ in length");
  Mat3 h = Mat3::Zero();
  int used = 0;
  double total = 0.0;
  for (Eigen::Index i = 0; i < src.rows(); ++i) {
    const double w = weights[static_cast<size_t>(i)];
    check(std::isfinite(w) && w >= 0.0, ErrorCode::InsufficientPoints, "Procrustes weights must be non-negative");
    if (w <= kNegligibleWeight) {
      continue;
    }
    ++used;
    total += w;
    h += w * dst.row(i).transpose() * src.row(i);
  }
  check(used >= 3 && total > 0.0, ErrorCode::InsufficientPoints,
        "Procrustes needs at least 3 weighted points, got " + std::to_string(used));
  const auto r = polar_rotation(h);
  check(r.has_value(), ErrorCode::DegenerateCovariance, "cross-covariance has rank < 2");
  return *r;
}

std::vector<RigidTransform> SkeletonState::transforms() const {
  std::vector<RigidTransform> out(rotations.size());
  for (size_t k = 0; k < rotations.size(); ++k) {
    out[k].rotation = rotations[k];
    out[k].translation = positions.row(static_cast<Eigen::Index>(k)).transpose();
  }
  return out;
}

SkeletonState SkeletonState::from_transforms(std::span<const RigidTransform> transforms, Source source) {
  SkeletonState state;
  state.source = source;
  state.rotations.resize(transforms.size());
  state.positions.resize(static_cast<Eigen::Index>(transforms.size()), 3);
  for (size_t k = 0; k < transforms.size(); ++k) {
    state.rotations[k] = transforms[k].rotation;
    state.positions.row(static_cast<Eigen::Index>(k)) = transforms[k].translation.transpose();
  }
  return state;
}

SkeletonFitter::SkeletonFitter(const RigAsset& rig, const FitConfig& config)
    : rig_(&rig), config_(config), regressor_(build_joint_regressor(rig, config)) {
  const int j = rig.joint_count();
  clouds_.resize(static_cast<size_t>(j));
  for (int i = 0; i < rig.vertex_count(); ++i) {
    const auto js = rig.weights.row_joints(i);
    const auto ws = rig.weights.row_values(i);
    for (size_t e = 0; e < js.size(); ++e) {
      if (ws[e] >= config_.support_threshold) {
        clouds_[js[e]].vertices.push_back(i);
        clouds_[js[e]].weights.push_back(std::pow(ws[e], config_.cloud_weight_power));
      }
    }
  }
  children_ = rig.skeleton.children();
}

SkeletonState SkeletonFitter::fit(const Points& rest_vertices, FitDiagnostics* diagnostics) const {
  return fit_rotations(rest_vertices, regress_joints(regressor_, rest_vertices), diagnostics);
}

SkeletonState SkeletonFitter::fit_rotations(const Points& rest_vertices, const Points& joints,
                                            FitDiagnostics* diagnostics) const {
  const RigAsset& rig = *rig_;
  const auto& skel = rig.skeleton;
  const int j = rig.joint_count();
  check(rest_vertices.rows() == rig.vertex_count(), ErrorCode::SizeMismatch,
        "rest shape vertex count does not match the rig");
  check(joints.rows() == j, ErrorCode::SizeMismatch, "joint position count does not match the rig");

  FitDiagnostics local;
  FitDiagnostics& diag = diagnostics != nullptr ? *diagnostics : local;
  const auto& bind_vertices = rig.mesh.vertices;

  // Stage 2a: skinned-cloud alignment. Stage 2b: child-bone alignment.
  // Both are closed form and independent per joint.
  std::vector<Mat3> delta(static_cast<size_t>(j), Mat3::Identity());
  std::vector<bool> inherit(static_cast<size_t>(j), false);
  for (int k = 0; k < j; ++k) {
    const auto& cloud = clouds_[k];
    const Vec3 bind_joint = skel.bind[k].translation;
    const Vec3 joint = joints.row(k).transpose();
    Mat3 r_init = Mat3::Identity();
    if (cloud.vertices.empty()) {
      if (children_[k].empty()) {
        inherit[k] = true;
        continue;
      }
      diag.warnings.push_back("joint " + skel.names[k] + " has no skinned vertices; stage 2a skipped");
    } else {
      Mat3 h = Mat3::Zero();
      for (size_t e = 0; e < cloud.vertices.size(); ++e) {
        const int i = cloud.vertices[e];
        h += cloud.weights[e] * (rest_vertices.row(i).transpose() - joint) *
            (bind_vertices.row(i).transpose() - bind_joint).transpose();
      }
      ++diag.procrustes_solves;
      if (const auto r = polar_rotation(h)) {
        r_init = *r;
      } else {
        diag.warnings.push_back("DegenerateCovariance at joint " + skel.names[k] + "; R_init = identity");
      }
    }

    Mat3 r_align = Mat3::Identity();
    const auto& kids = children_[k];
    if (kids.size() == 1) {
      const int c = kids.front();
      r_align = shortest_arc(r_init * (skel.bind[c].translation - bind_joint),
                             joints.row(c).transpose() - joint);
    } else if (kids.size() > 1) {
      Mat3 h = Mat3::Zero();
      for (const int c : kids) {
        const Vec3 from = r_init * (skel.bind[c].translation - bind_joint);
        const Vec3 to = joints.row(c).transpose() - joint;
        if (from.norm() > 1e-12 && to.norm() > 1e-12) {
          h += to.normalized() * from.normalized().transpose();
        }
      }
      ++diag.procrustes_solves;
      if (const auto r = polar_rotation(h)) {
        r_align = *r;
      } else {
        diag.warnings.push_back("DegenerateCovariance in child alignment at joint " + skel.names[k]);
      }
    }
    delta[k] = r_align * r_init;
  }

  SkeletonState state;
  state.source = SkeletonState::Source::Fitted;
  state.positions = joints;
  state.rotations.resize(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    if (inherit[k] && skel.parents[k] != kNoParent) {
      delta[k] = delta[skel.parents[k]];
    }
    state.rotations[k] = delta[k] * skel.bind[k].rotation;
  }
  return state;
}

SkeletonState fit_joint_rotations(const RigAsset& rig, const Points& rest_vertices, const Points& joints,
                                  FitDiagnostics* diagnostics) {
  return SkeletonFitter(rig).fit_rotations(rest_vertices, joints, diagnostics);
}

SkeletonState fit_skeleton(const RigAsset& rig, const Points& rest_vertices, FitDiagnostics* diagnostics) {
  return SkeletonFitter(rig).fit(rest_vertices, diagnostics);
}

} // namespace unirig
