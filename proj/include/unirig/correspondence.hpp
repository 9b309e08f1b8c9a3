#pragma once

#include "unirig/types.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace unirig {

// Maps a source topology onto the canonical topology. Canonical vertex i is a
// tetrahedral barycentric combination of source face face_index[i], lifted by
// u4 = u1 + (u2 - u1) x (u3 - u1).
struct Correspondence {
  std::string source_id;
  std::int32_t source_vertex_count = 0;
  Faces source_faces;
  std::vector<std::int32_t> face_index;
  Eigen::Matrix<double, Eigen::Dynamic, 4, Eigen::RowMajor> bary;
  // Optional. Unmatched canonical vertices follow their face rigidly using
  // rigid_offsets (coordinates in the face frame) instead of bary.
  std::vector<std::uint8_t> unmatched;
  Points rigid_offsets;

  std::int32_t source_face_count() const {
    return static_cast<std::int32_t>(source_faces.rows());
  }
  std::int32_t canonical_vertex_count() const {
    return static_cast<std::int32_t>(face_index.size());
  }
  bool has_unmatched() const {
    return !unmatched.empty();
  }
};

void validate_correspondence(const Correspondence& corr);

} // namespace unirig
