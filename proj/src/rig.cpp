#include "unirig/rig.hpp"

#include "unirig/error.hpp"
#include "unirig/rotation.hpp"

#include <cmath>
#include <string>

namespace unirig {

std::string_view region_name(Region region) {
  switch (region) {
    case Region::Body:
      return "body";
    case Region::Hands:
      return "hands";
    case Region::Feet:
      return "feet";
    case Region::Head:
      return "head";
  }
  return "unknown";
}

void validate_mesh(const Mesh& mesh) {
  const int n = mesh.vertex_count();
  check(mesh.vertices.allFinite(), ErrorCode::ValidationFailure, "vertex positions must be finite");
  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto face = mesh.faces.row(f);
    for (int c = 0; c < 3; ++c) {
      check(face[c] >= 0 && face[c] < n, ErrorCode::ValidationFailure,
            "face index out of range in face " + std::to_string(f));
    }
    check(face[0] != face[1] && face[1] != face[2] && face[0] != face[2],
          ErrorCode::ValidationFailure, "degenerate face " + std::to_string(f) + " (repeated index)");
    const Vec3 a = mesh.vertices.row(face[0]);
    const Vec3 b = mesh.vertices.row(face[1]);
    const Vec3 c = mesh.vertices.row(face[2]);
    check(0.5 * (b - a).cross(c - a).norm() > 1e-12, ErrorCode::ValidationFailure,
          "degenerate face " + std::to_string(f) + " (zero area)");
  }
  if (!mesh.regions.empty()) {
    check(static_cast<int>(mesh.regions.size()) == n, ErrorCode::ValidationFailure,
          "region labels must cover every vertex");
    for (const auto r : mesh.regions) {
      const auto v = static_cast<int>(r);
      check(v >= 0 && v < kRegionCount, ErrorCode::ValidationFailure, "unknown region label");
    }
  }
}

std::vector<std::vector<int>> Skeleton::children() const {
  std::vector<std::vector<int>> out(parents.size());
  for (int k = 0; k < joint_count(); ++k) {
    if (parents[k] != kNoParent) {
      out[parents[k]].push_back(k);
    }
  }
  return out;
}

RigidTransform Skeleton::local_bind(int joint) const {
  const int p = parents[joint];
  if (p == kNoParent) {
    return bind[joint];
  }
  return bind[p].inverse() * bind[joint];
}

bool Skeleton::is_finger(int joint) const {
  return names[joint].rfind("finger_", 0) == 0;
}

std::vector<bool> Skeleton::subtree_mask(int joint) const {
  std::vector<bool> mask(parents.size(), false);
  mask[joint] = true;
  // Parents precede children, so one forward pass suffices.
  for (int k = joint + 1; k < joint_count(); ++k) {
    if (parents[k] != kNoParent && mask[parents[k]]) {
      mask[k] = true;
    }
  }
  return mask;
}

void validate_skeleton(const Skeleton& skeleton) {
  const int j = skeleton.joint_count();
  check(j > 0, ErrorCode::ValidationFailure, "skeleton has no joints");
  check(static_cast<int>(skeleton.names.size()) == j && static_cast<int>(skeleton.bind.size()) == j,
        ErrorCode::ValidationFailure, "skeleton names, parents and bind transforms differ in length");
  int roots = 0;
  for (int k = 0; k < j; ++k) {
    const int p = skeleton.parents[k];
    check(p == kNoParent || (p >= 0 && p < j), ErrorCode::ValidationFailure,
          "parent index out of range for joint " + std::to_string(k));
    roots += p == kNoParent ? 1 : 0;
  }
  for (int k = 0; k < j; ++k) {
    int cursor = k;
    for (int steps = 0; cursor != kNoParent; ++steps) {
      check(steps <= j, ErrorCode::ValidationFailure,
            "hierarchy cycle through joint " + std::to_string(k));
      cursor = skeleton.parents[cursor];
    }
  }
  check(roots == 1, ErrorCode::ValidationFailure, "skeleton must have exactly one root");
  for (int k = 0; k < j; ++k) {
    check(skeleton.parents[k] < k, ErrorCode::ValidationFailure,
          "hierarchy not topologically sorted at joint " + std::to_string(k));
    const auto& t = skeleton.bind[k];
    check(t.translation.allFinite(), ErrorCode::ValidationFailure, "bind translation must be finite");
    check(is_rotation(t.rotation, 1e-8), ErrorCode::ValidationFailure,
          "bind rotation of joint " + std::to_string(k) + " is not a proper rotation");
  }
}

double SkinningWeights::weight(int vertex, int joint) const {
  const auto js = row_joints(vertex);
  const auto ws = row_values(vertex);
  for (size_t e = 0; e < js.size(); ++e) {
    if (js[e] == joint) {
      return ws[e];
    }
  }
  return 0.0;
}

void SkinningWeights::append_row(std::span<const std::int32_t> row_joints,
                                 std::span<const double> row_values) {
  joints.insert(joints.end(), row_joints.begin(), row_joints.end());
  values.insert(values.end(), row_values.begin(), row_values.end());
  offsets.push_back(static_cast<std::int32_t>(joints.size()));
}

void validate_weights(const SkinningWeights& weights, int vertex_count, int joint_count) {
  check(!weights.offsets.empty() && weights.offsets.front() == 0, ErrorCode::ValidationFailure,
        "weight offsets must start at 0");
  check(weights.vertex_count() == vertex_count, ErrorCode::ValidationFailure,
        "weight rows count must equal mesh vertex count");
  check(weights.joints.size() == weights.values.size() &&
            static_cast<size_t>(weights.offsets.back()) == weights.joints.size(),
        ErrorCode::ValidationFailure, "weight arrays inconsistent with offsets");
  for (int i = 0; i < vertex_count; ++i) {
    check(weights.offsets[i] <= weights.offsets[i + 1], ErrorCode::ValidationFailure,
          "weight offsets must be non-decreasing");
    double sum = 0.0;
    const auto js = weights.row_joints(i);
    const auto ws = weights.row_values(i);
    for (size_t e = 0; e < js.size(); ++e) {
      check(js[e] >= 0 && js[e] < joint_count, ErrorCode::ValidationFailure,
            "weight references invalid joint at vertex " + std::to_string(i));
      check(std::isfinite(ws[e]) && ws[e] >= 0.0, ErrorCode::ValidationFailure,
            "negative weight at vertex " + std::to_string(i));
      sum += ws[e];
    }
    check(std::abs(sum - 1.0) <= 1e-6, ErrorCode::ValidationFailure,
          "weights sum to " + std::to_string(sum) + " at vertex " + std::to_string(i));
  }
}

std::string_view encoding_name(RotationEncoding encoding) {
  switch (encoding) {
    case RotationEncoding::AxisAngle:
      return "axis_angle";
    case RotationEncoding::Matrix:
      return "matrix";
    case RotationEncoding::SixD:
      return "6d";
  }
  return "unknown";
}

RotationEncoding parse_encoding(std::string_view name) {
  if (name == "axis_angle") {
    return RotationEncoding::AxisAngle;
  }
  if (name == "matrix") {
    return RotationEncoding::Matrix;
  }
  if (name == "6d") {
    return RotationEncoding::SixD;
  }
  fail(ErrorCode::EncodingMismatch, "unknown rotation encoding '" + std::string(name) + "'");
}

int encoding_width(RotationEncoding encoding) {
  switch (encoding) {
    case RotationEncoding::AxisAngle:
      return 3;
    case RotationEncoding::Matrix:
      return 9;
    case RotationEncoding::SixD:
      return 6;
  }
  return 0;
}

PoseFrame PoseFrame::identity(int joint_count, RotationEncoding encoding) {
  const std::vector<Mat3> eye(joint_count, Mat3::Identity());
  return from_matrices(eye, Vec3::Zero(), encoding);
}

PoseFrame PoseFrame::from_matrices(std::span<const Mat3> rotations, const Vec3& root_translation,
                                   RotationEncoding encoding) {
  PoseFrame frame;
  frame.encoding = encoding;
  frame.root_translation = root_translation;
  frame.rotations.resize(static_cast<Eigen::Index>(rotations.size()), encoding_width(encoding));
  for (size_t j = 0; j < rotations.size(); ++j) {
    const auto row = static_cast<Eigen::Index>(j);
    switch (encoding) {
      case RotationEncoding::AxisAngle:
        frame.rotations.row(row) = matrix_to_axis_angle(rotations[j]).transpose();
        break;
      case RotationEncoding::Matrix:
        for (int r = 0; r < 3; ++r) {
          for (int c = 0; c < 3; ++c) {
            frame.rotations(row, 3 * r + c) = rotations[j](r, c);
          }
        }
        break;
      case RotationEncoding::SixD:
        frame.rotations.row(row) = matrix_to_6d(rotations[j]).transpose();
        break;
    }
  }
  return frame;
}

Mat3 PoseFrame::matrix(int joint) const {
  check(rotations.cols() == encoding_width(encoding), ErrorCode::EncodingMismatch,
        "pose rotation width does not match its declared encoding");
  switch (encoding) {
    case RotationEncoding::AxisAngle:
      return axis_angle_to_matrix(rotations.row(joint).transpose());
    case RotationEncoding::Matrix: {
      Mat3 m;
      for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) {
          m(r, c) = rotations(joint, 3 * r + c);
        }
      }
      check(is_rotation(m, 1e-6), ErrorCode::EncodingMismatch,
            "pose matrix for joint " + std::to_string(joint) + " is not a rotation");
      return m;
    }
    case RotationEncoding::SixD:
      return matrix_from_6d(rotations.row(joint).transpose());
  }
  fail(ErrorCode::EncodingMismatch, "unsupported encoding");
}

std::vector<Mat3> PoseFrame::matrices() const {
  std::vector<Mat3> out(static_cast<size_t>(joint_count()));
  for (int j = 0; j < joint_count(); ++j) {
    out[j] = matrix(j);
  }
  return out;
}

void validate_rig(const RigAsset& rig) {
  validate_mesh(rig.mesh);
  validate_skeleton(rig.skeleton);
  validate_weights(rig.weights, rig.vertex_count(), rig.joint_count());

  if (rig.vertex_count() > 0) {
    const Vec3 lo = rig.mesh.vertices.colwise().minCoeff();
    const Vec3 hi = rig.mesh.vertices.colwise().maxCoeff();
    const Vec3 margin = 0.1 * (hi - lo);
    for (int k = 0; k < rig.joint_count(); ++k) {
      const Vec3& p = rig.skeleton.bind[k].translation;
      check(((p - (lo - margin)).array() >= 0.0).all() && ((hi + margin - p).array() >= 0.0).all(),
            ErrorCode::ValidationFailure,
            "bind joint " + rig.skeleton.names[k] + " lies outside the inflated mesh bounds");
    }
  }
  if (rig.correctives) {
    check(rig.correctives->joint_count() == rig.joint_count() &&
              rig.correctives->vertex_count() == rig.vertex_count(),
          ErrorCode::ValidationFailure, "correctives net shape does not match the rig");
  }
  for (const auto& [id, corr] : rig.correspondences) {
    check(id == corr.source_id, ErrorCode::ValidationFailure, "correspondence key mismatch");
    validate_correspondence(corr);
    check(corr.canonical_vertex_count() == rig.vertex_count(), ErrorCode::ValidationFailure,
          "correspondence '" + id + "' does not cover the canonical mesh");
  }
}

std::vector<RigidTransform> bind_inverses(std::span<const RigidTransform> bind) {
  std::vector<RigidTransform> out;
  out.reserve(bind.size());
  for (const auto& t : bind) {
    out.push_back(t.inverse());
  }
  return out;
}

} // namespace unirig
