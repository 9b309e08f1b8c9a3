#pragma once

#include "unirig/rig.hpp"
#include "unirig/skeleton_fit.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace unirig {

struct GlobalTransforms {
  std::vector<RigidTransform> transforms;

  int joint_count() const {
    return static_cast<int>(transforms.size());
  }
  const RigidTransform& operator[](int joint) const {
    return transforms[static_cast<size_t>(joint)];
  }
};

// With joint_orient the local transform of joint k is L_k^bind * R_k, so the
// zero pose reproduces `bind`. Without it R_k is applied directly with the
// world bind offsets as bone vectors (SMPL style). The root translation is an
// offset added to the bind root position.
GlobalTransforms forward_kinematics(std::span<const int> parents, std::span<const RigidTransform> bind,
                                    std::span<const Mat3> local_rotations, const Vec3& root_translation,
                                    bool joint_orient);
// Throws EncodingMismatch, SizeMismatch.
GlobalTransforms forward_kinematics(const Skeleton& skeleton, const PoseFrame& pose);
GlobalTransforms forward_kinematics(const Skeleton& skeleton, const SkeletonState& fitted, const PoseFrame& pose);

// v'_i = sum_k w_ik G_k B_k^-1 v_i. Throws SizeMismatch.
Points lbs_pose(const Points& rest_vertices, const SkinningWeights& weights, const GlobalTransforms& globals,
                std::span<const RigidTransform> bind_inverse);

// Per joint: vertices with w_ik > 1e-3 dilated along mesh edges by `geodesic_radius`
// meters; each joint mask is repeated for its `channels` activations.
// A disconnected edge graph adds a DisconnectedMesh warning.
std::vector<std::vector<std::int32_t>> derive_corrective_masks(const RigAsset& rig, double geodesic_radius,
                                                               int channels = 1,
                                                               std::vector<std::string>* warnings = nullptr);

// Rotations fed to the correctives net: local rotations relative to the bind
// local frame. Equal to the pose rotations when joint_orient is on.
std::vector<Mat3> corrective_inputs(const Skeleton& skeleton, std::span<const RigidTransform> bind,
                                    const PoseFrame& pose);

// Throws ShapeMismatch.
Points apply_correctives(const CorrectivesNet& net, const PoseFrame& pose);

struct PoseOptions {
  bool correctives = true;
};

// Caches the skeleton fitter of a rig; cheap to pose many frames with.
class MeshPoser {
 public:
  explicit MeshPoser(const RigAsset& rig, const FitConfig& fit_config = {});

  const RigAsset& rig() const {
    return *rig_;
  }
  const SkeletonFitter& fitter() const {
    return fitter_;
  }

  SkeletonState fit(const Points& rest_vertices) const {
    return fitter_.fit(rest_vertices);
  }

  Points pose(const Points& rest_vertices, const PoseFrame& pose, const PoseOptions& options = {}) const;
  Points pose(const Points& rest_vertices, const SkeletonState& skeleton, const PoseFrame& pose,
              const PoseOptions& options = {}) const;

  // Many frames of one identity: the skeleton is fitted once and, without
  // correctives, skinning runs as a single dense product over the batch.
  std::vector<Points> pose_batch(const Points& rest_vertices, std::span<const PoseFrame> poses,
                                 const PoseOptions& options = {}) const;

 private:
  const RigAsset* rig_;
  SkeletonFitter fitter_;
};

// One-shot convenience: fit_skeleton, FK, optional correctives, LBS.
Points pose_mesh(const RigAsset& rig, const Points& rest_vertices, const PoseFrame& pose,
                 const PoseOptions& options = {});

struct PoseGradient {
  RowMatrix rotations;  // J x 6, with respect to the 6D parameters
  Vec3 root_translation = Vec3::Zero();
  Points rest_vertices; // N x 3
};

// Reverse-mode derivative of posed vertices under a fixed skeleton, with pose
// rotations given in the 6D encoding. Returns dL/d(parameters) for dL/d(posed) =
// grad_posed.
PoseGradient pose_vjp(const RigAsset& rig, const SkeletonState& skeleton, const Points& rest_vertices,
                      const PoseFrame& pose6d, const Points& grad_posed, const PoseOptions& options = {});

} // namespace unirig
