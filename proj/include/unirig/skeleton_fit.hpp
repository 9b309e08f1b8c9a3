#pragma once

#include "unirig/rig.hpp"

#include <Eigen/SparseCore>

#include <span>
#include <string>
#include <vector>

namespace unirig {

struct FitConfig {
  // Minimum skinning weight for a vertex to enter a joint's rotation fit.
  double support_threshold = 1e-3;
  // Procrustes weight of a cloud vertex is w_ik raised to this power, so
  // vertices blended with neighbouring bones count less.
  double cloud_weight_power = 4.0;
  // Tikhonov weight of the regressor solve, in support-normalized coordinates.
  double ridge = 1e-6;
  // Exponent of the distance penalty on regressor weights (0 = plain min-norm).
  double locality = 4.0;
  // Regressor entries below this magnitude are dropped and rows renormalized.
  double sparsify = 1e-8;
};

// Sparse J x N operator from canonical vertices to joint positions.
struct JointRegressor {
  Eigen::SparseMatrix<double, Eigen::RowMajor> matrix;
  std::vector<std::vector<int>> support; // candidate vertex set per joint

  int joint_count() const {
    return static_cast<int>(matrix.rows());
  }
  int vertex_count() const {
    return static_cast<int>(matrix.cols());
  }
};

// Throws EmptySupport, SingularSystem.
JointRegressor build_joint_regressor(const RigAsset& rig, const FitConfig& config = {});

// One sparse multiply; throws SizeMismatch.
Points regress_joints(const JointRegressor& regressor, const Points& rest_vertices);

// Weighted orthogonal Procrustes over vectors about the origin (no centroid
// removal): returns R in SO(3) minimising sum w |R src - dst|^2.
// Throws InsufficientPoints (< 3 points with non-negligible weight, or no
// weight) and DegenerateCovariance (rank < 2).
Mat3 kabsch_rotation(const Points& src, const Points& dst, std::span<const double> weights);

struct SkeletonState {
  enum class Source { Fitted, Posed };

  std::vector<Mat3> rotations; // world
  Points positions;            // world, J x 3
  Source source = Source::Fitted;

  int joint_count() const {
    return static_cast<int>(rotations.size());
  }
  std::vector<RigidTransform> transforms() const;
  static SkeletonState from_transforms(std::span<const RigidTransform> transforms, Source source);
};

struct FitDiagnostics {
  int procrustes_solves = 0;
  std::vector<std::string> warnings;
};

// Caches the regressor and per-joint bind clouds of a rig so repeated fits are
// a single sparse multiply plus one closed-form rotation solve per joint.
class SkeletonFitter {
 public:
  explicit SkeletonFitter(const RigAsset& rig, const FitConfig& config = {});

  const JointRegressor& regressor() const {
    return regressor_;
  }

  SkeletonState fit(const Points& rest_vertices, FitDiagnostics* diagnostics = nullptr) const;
  SkeletonState fit_rotations(const Points& rest_vertices, const Points& joints,
                              FitDiagnostics* diagnostics = nullptr) const;

 private:
  struct JointCloud {
    std::vector<int> vertices;
    std::vector<double> weights;
  };

  const RigAsset* rig_;
  FitConfig config_;
  JointRegressor regressor_;
  std::vector<JointCloud> clouds_;
  std::vector<std::vector<int>> children_;
};

SkeletonState fit_joint_rotations(const RigAsset& rig, const Points& rest_vertices, const Points& joints,
                                  FitDiagnostics* diagnostics = nullptr);
SkeletonState fit_skeleton(const RigAsset& rig, const Points& rest_vertices,
                           FitDiagnostics* diagnostics = nullptr);

} // namespace unirig
