#pragma once

#include "unirig/correspondence.hpp"
#include "unirig/rig.hpp"

#include <functional>
#include <optional>

namespace unirig {

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c);

struct ClosestHit {
  int face = -1;
  double distance = 0.0;
  Vec3 point = Vec3::Zero();
};

// Axis-aligned bounding-box tree over triangles.
class TriangleBvh {
 public:
  struct Node {
    Eigen::AlignedBox3d box;
    int left = -1; // children, -1 for leaves
    int right = -1;
    int begin = 0; // leaf range into triangle_order()
    int count = 0;
    bool is_leaf() const {
      return left < 0;
    }
  };

  // Throws EmptyMesh when there are no faces.
  TriangleBvh(Points vertices, Faces faces, int leaf_size = 4);
  explicit TriangleBvh(const Mesh& mesh) : TriangleBvh(mesh.vertices, mesh.faces) {}

  // Closest triangle among those accepted by `accept` (all when empty).
  // Triangles within 1e-12 of the best distance resolve to the lower index.
  // Returns face = -1 if no triangle is accepted.
  ClosestHit closest(const Vec3& query, const std::function<bool(int)>& accept = {}) const;

  const std::vector<Node>& nodes() const {
    return nodes_;
  }
  const std::vector<int>& triangle_order() const {
    return order_;
  }
  const Points& vertices() const {
    return vertices_;
  }
  const Faces& faces() const {
    return faces_;
  }

 private:
  int build(int begin, int end, int leaf_size);

  Points vertices_;
  Faces faces_;
  std::vector<Vec3> centroids_;
  std::vector<int> order_;
  std::vector<Node> nodes_;
};

TriangleBvh build_bvh(const Mesh& mesh);

// Barycentric coordinates of `point` in the tetrahedron (u1, u2, u3, u4) with
// u4 = u1 + (u2 - u1) x (u3 - u1). Throws DegenerateTriangle.
Vec4 solve_tet_barycentric(const Vec3& point, const Vec3& u1, const Vec3& u2, const Vec3& u3);

struct CorrespondenceOptions {
  std::string source_id = "source";
  // When set, triangles whose normal disagrees with the wrap vertex normal
  // (cosine below this value) are not candidates.
  std::optional<double> normal_agreement;
  // Canonical vertices without a source counterpart; they follow their face rigidly.
  std::vector<std::uint8_t> unmatched;
};

// Throws EmptyMesh, DegenerateTriangle, SizeMismatch.
Correspondence precompute_correspondence(const Mesh& source, const Mesh& wrap,
                                         const CorrespondenceOptions& options = {});

// Throws SizeMismatch.
Points apply_correspondence(const Correspondence& corr, const Points& source_vertices);

// dL/d(source_vertices) given dL/d(output).
Points apply_correspondence_vjp(const Correspondence& corr, const Points& source_vertices,
                                const Points& grad_output);

// Looks up the correspondence registered for `source_id`; throws UnknownTopology.
const Correspondence& find_correspondence(const RigAsset& rig, const std::string& source_id);

} // namespace unirig
