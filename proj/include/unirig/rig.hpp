#pragma once

#include "unirig/correspondence.hpp"
#include "unirig/correctives.hpp"
#include "unirig/types.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace unirig {

enum class Region : std::int32_t { Body = 0, Hands = 1, Feet = 2, Head = 3 };
inline constexpr int kRegionCount = 4;

std::string_view region_name(Region region);

struct Mesh {
  Points vertices;
  Faces faces;
  std::vector<Region> regions; // empty when unlabeled

  int vertex_count() const {
    return static_cast<int>(vertices.rows());
  }
  int face_count() const {
    return static_cast<int>(faces.rows());
  }
};

// Throws ValidationFailure naming the violated invariant.
void validate_mesh(const Mesh& mesh);

struct Skeleton {
  std::vector<std::string> names;
  std::vector<int> parents;
  std::vector<RigidTransform> bind; // world-space bind transforms

  int joint_count() const {
    return static_cast<int>(parents.size());
  }
  std::vector<std::vector<int>> children() const;
  // Parent-relative bind transform (world bind for the root).
  RigidTransform local_bind(int joint) const;
  bool is_finger(int joint) const;
  // Joints in the subtree rooted at `joint`, including itself, as a mask.
  std::vector<bool> subtree_mask(int joint) const;
};

void validate_skeleton(const Skeleton& skeleton);

// CSR-style sparse rows: vertex i owns entries [offsets[i], offsets[i+1]).
struct SkinningWeights {
  std::vector<std::int32_t> offsets{0};
  std::vector<std::int32_t> joints;
  std::vector<double> values;

  int vertex_count() const {
    return static_cast<int>(offsets.size()) - 1;
  }
  std::span<const std::int32_t> row_joints(int vertex) const {
    return {joints.data() + offsets[vertex], joints.data() + offsets[vertex + 1]};
  }
  std::span<const double> row_values(int vertex) const {
    return {values.data() + offsets[vertex], values.data() + offsets[vertex + 1]};
  }
  double weight(int vertex, int joint) const;

  void append_row(std::span<const std::int32_t> row_joints, std::span<const double> row_values);
};

void validate_weights(const SkinningWeights& weights, int vertex_count, int joint_count);

enum class RotationEncoding { AxisAngle, Matrix, SixD };

std::string_view encoding_name(RotationEncoding encoding);
RotationEncoding parse_encoding(std::string_view name);
int encoding_width(RotationEncoding encoding);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct PoseFrame {
  RotationEncoding encoding = RotationEncoding::AxisAngle;
  RowMatrix rotations; // joint_count x encoding_width, matrices stored row-major
  Vec3 root_translation = Vec3::Zero();
  bool joint_orient = true;
  double timestamp = 0.0;

  int joint_count() const {
    return static_cast<int>(rotations.rows());
  }

  static PoseFrame identity(int joint_count, RotationEncoding encoding = RotationEncoding::AxisAngle);
  static PoseFrame from_matrices(std::span<const Mat3> rotations, const Vec3& root_translation,
                                 RotationEncoding encoding = RotationEncoding::Matrix);

  // Throws EncodingMismatch when a stored matrix is not a rotation within 1e-6.
  std::vector<Mat3> matrices() const;
  Mat3 matrix(int joint) const;
};

struct MotionSequence {
  double fps = 30.0;
  std::vector<PoseFrame> frames;
};

struct RigAsset {
  Mesh mesh;
  Skeleton skeleton;
  SkinningWeights weights;
  std::optional<CorrectivesNet> correctives;
  std::map<std::string, Correspondence> correspondences;
  // Meters per unit of the file this asset was loaded from; geometry held here is always meters.
  double unit_scale = 1.0;

  int joint_count() const {
    return skeleton.joint_count();
  }
  int vertex_count() const {
    return mesh.vertex_count();
  }
};

void validate_rig(const RigAsset& rig);

// Bind inverse transforms for LBS.
std::vector<RigidTransform> bind_inverses(std::span<const RigidTransform> bind);

} // namespace unirig
