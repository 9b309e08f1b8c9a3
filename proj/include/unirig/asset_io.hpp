#pragma once

#include "unirig/rig.hpp"

#include <filesystem>
#include <optional>

namespace unirig {

// Rig manifest (JSON) plus little-endian binary blobs stored next to it.
// Blob entries are {"file", "dtype", "count"}; a bare string names an f32
// (real) or i32 (integer) blob. Reals are written as f64 so that a saved rig
// reloads bit-for-bit.
RigAsset load_rig(const std::filesystem::path& path);
void save_rig(const RigAsset& rig, const std::filesystem::path& path);

// Fails with JointCountMismatch when expected_joint_count is given and differs.
MotionSequence load_motion(const std::filesystem::path& path,
                           std::optional<int> expected_joint_count = std::nullopt);
void save_motion(const MotionSequence& motion, const std::filesystem::path& path);

struct VertexAnimation {
  double fps = 30.0;
  std::vector<Points> frames;
};

VertexAnimation load_vertex_animation(const std::filesystem::path& path);
void save_vertex_animation(const VertexAnimation& animation, const std::filesystem::path& path);

// Standalone `{source_id}.corr.json` export.
Correspondence load_correspondence(const std::filesystem::path& path);
void save_correspondence(const Correspondence& corr, const std::filesystem::path& path);

// Wavefront OBJ: positions and faces only; polygons are fan-triangulated.
Mesh load_obj(const std::filesystem::path& path);
void save_obj(const Points& vertices, const Faces& faces, const std::filesystem::path& path);

} // namespace unirig
