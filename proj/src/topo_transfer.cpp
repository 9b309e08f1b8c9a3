#include "unirig/topo_transfer.hpp"

#include "unirig/error.hpp"
#include "unirig/parallel.hpp"

#include <Eigen/LU>

#include <cmath>

namespace unirig {

namespace {

constexpr double kLiftingEpsilon = 1e-12;
constexpr double kDeterminantGuard = 1e-15;

Vec3 lifted_vertex(const Vec3& u1, const Vec3& u2, const Vec3& u3) {
  return u1 + (u2 - u1).cross(u3 - u1);
}

// Orthonormal frame of a face: x along the first edge, z along the normal.
Mat3 face_frame(const Vec3& u1, const Vec3& u2, const Vec3& u3) {
  const Vec3 x = (u2 - u1).normalized();
  const Vec3 z = (u2 - u1).cross(u3 - u1).normalized();
  Mat3 frame;
  frame.col(0) = x;
  frame.col(1) = z.cross(x);
  frame.col(2) = z;
  return frame;
}

Points vertex_normals(const Mesh& mesh) {
  Points normals = Points::Zero(mesh.vertex_count(), 3);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    const Vec3 n = (b - a).cross(c - a); // area weighted
    for (int k = 0; k < 3; ++k) {
      normals.row(mesh.faces(f, k)) += n.transpose();
    }
  }
  for (Eigen::Index i = 0; i < normals.rows(); ++i) {
    const double len = normals.row(i).norm();
    if (len > 0.0) {
      normals.row(i) /= len;
    }
  }
  return normals;
}

} // namespace

void validate_correspondence(const Correspondence& corr) {
  const int n = corr.canonical_vertex_count();
  check(corr.bary.rows() == n, ErrorCode::ValidationFailure, "correspondence bary count mismatch");
  check(corr.source_face_count() > 0, ErrorCode::ValidationFailure, "correspondence has no source faces");
  for (int f = 0; f < corr.source_face_count(); ++f) {
    for (int c = 0; c < 3; ++c) {
      const auto v = corr.source_faces(f, c);
      check(v >= 0 && v < corr.source_vertex_count, ErrorCode::ValidationFailure,
            "correspondence source face references invalid vertex");
    }
  }
  for (int i = 0; i < n; ++i) {
    check(corr.face_index[i] >= 0 && corr.face_index[i] < corr.source_face_count(),
          ErrorCode::ValidationFailure, "correspondence face index out of range");
    check(corr.bary.row(i).allFinite() && std::abs(corr.bary.row(i).sum() - 1.0) <= 1e-6,
          ErrorCode::ValidationFailure, "correspondence barycentric row does not sum to 1");
  }
  if (corr.has_unmatched()) {
    check(static_cast<int>(corr.unmatched.size()) == n && corr.rigid_offsets.rows() == n,
          ErrorCode::ValidationFailure, "unmatched mask size mismatch");
  }
}

Vec4 solve_tet_barycentric(const Vec3& point, const Vec3& u1, const Vec3& u2, const Vec3& u3) {
  const Vec3 e1 = u2 - u1;
  const Vec3 e2 = u3 - u1;
  const Vec3 lift = e1.cross(e2);
  check(lift.norm() > kLiftingEpsilon, ErrorCode::DegenerateTriangle,
        "triangle lifting cross product vanishes");
  Mat3 m;
  m.col(0) = e1;
  m.col(1) = e2;
  m.col(2) = lift;
  const double det = m.determinant();
  check(std::abs(det) > kDeterminantGuard, ErrorCode::DegenerateTriangle,
        "tetrahedron system is singular");
  const Vec3 x = m.inverse() * (point - u1);
  return {1.0 - x.sum(), x[0], x[1], x[2]};
}

Correspondence precompute_correspondence(const Mesh& source, const Mesh& wrap,
                                         const CorrespondenceOptions& options) {
  check(source.face_count() > 0, ErrorCode::EmptyMesh, "source mesh has no faces");
  check(wrap.vertex_count() > 0, ErrorCode::EmptyMesh, "wrap mesh has no vertices");
  const int n = wrap.vertex_count();
  check(options.unmatched.empty() || static_cast<int>(options.unmatched.size()) == n,
        ErrorCode::SizeMismatch, "unmatched mask must cover every wrap vertex");

  const TriangleBvh bvh(source);
  const auto& sv = source.vertices;
  const auto& sf = source.faces;

  std::vector<std::uint8_t> usable(static_cast<size_t>(source.face_count()));
  std::vector<Vec3> face_normals(static_cast<size_t>(source.face_count()));
  for (int f = 0; f < source.face_count(); ++f) {
    const Vec3 n_f = (sv.row(sf(f, 1)) - sv.row(sf(f, 0))).cross(sv.row(sf(f, 2)) - sv.row(sf(f, 0))).transpose();
    usable[f] = n_f.norm() > kLiftingEpsilon ? 1 : 0;
    face_normals[f] = n_f.normalized();
  }
  Points wrap_normals;
  if (options.normal_agreement) {
    check(wrap.face_count() > 0, ErrorCode::EmptyMesh, "normal filtering needs wrap faces");
    wrap_normals = vertex_normals(wrap);
  }

  Correspondence corr;
  corr.source_id = options.source_id;
  corr.source_vertex_count = source.vertex_count();
  corr.source_faces = sf;
  corr.face_index.assign(static_cast<size_t>(n), -1);
  corr.bary.resize(n, 4);
  if (!options.unmatched.empty()) {
    corr.unmatched = options.unmatched;
    corr.rigid_offsets = Points::Zero(n, 3);
  }

  parallel_for(n, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const Vec3 q = wrap.vertices.row(i);
      ClosestHit hit;
      if (options.normal_agreement) {
        const Vec3 wn = wrap_normals.row(i);
        const double threshold = *options.normal_agreement;
        hit = bvh.closest(q, [&](int f) { return usable[f] && face_normals[f].dot(wn) >= threshold; });
      }
      if (hit.face < 0) {
        hit = bvh.closest(q, [&](int f) { return usable[f] != 0; });
      }
      check(hit.face >= 0, ErrorCode::DegenerateTriangle, "no non-degenerate source triangle available");
      const Vec3 u1 = sv.row(sf(hit.face, 0));
      const Vec3 u2 = sv.row(sf(hit.face, 1));
      const Vec3 u3 = sv.row(sf(hit.face, 2));
      corr.face_index[i] = hit.face;
      corr.bary.row(i) = solve_tet_barycentric(q, u1, u2, u3).transpose();
      if (corr.has_unmatched() && corr.unmatched[i]) {
        corr.rigid_offsets.row(i) = (face_frame(u1, u2, u3).transpose() * (q - u1)).transpose();
      }
    }
  });
  return corr;
}

Points apply_correspondence(const Correspondence& corr, const Points& source_vertices) {
  check(source_vertices.rows() == corr.source_vertex_count, ErrorCode::SizeMismatch,
        "source vertex count " + std::to_string(source_vertices.rows()) + " does not match correspondence (" +
            std::to_string(corr.source_vertex_count) + ")");
  const int n = corr.canonical_vertex_count();
  Points out(n, 3);
  parallel_for(n, [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      const auto face = corr.source_faces.row(corr.face_index[i]);
      const Vec3 u1 = source_vertices.row(face[0]);
      const Vec3 u2 = source_vertices.row(face[1]);
      const Vec3 u3 = source_vertices.row(face[2]);
      if (corr.has_unmatched() && corr.unmatched[i]) {
        out.row(i) = (u1 + face_frame(u1, u2, u3) * corr.rigid_offsets.row(i).transpose()).transpose();
        continue;
      }
      const auto b = corr.bary.row(i);
      out.row(i) = (b[0] * u1 + b[1] * u2 + b[2] * u3 + b[3] * lifted_vertex(u1, u2, u3)).transpose();
    }
  });
  return out;
}

Points apply_correspondence_vjp(const Correspondence& corr, const Points& source_vertices,
                                const Points& grad_output) {
  check(source_vertices.rows() == corr.source_vertex_count, ErrorCode::SizeMismatch,
        "source vertex count does not match correspondence");
  check(grad_output.rows() == corr.canonical_vertex_count(), ErrorCode::SizeMismatch,
        "gradient row count does not match canonical vertex count");
  check(!corr.has_unmatched(), ErrorCode::InvalidConfig,
        "gradients through rigidly attached unmatched vertices are not supported");
  Points grad = Points::Zero(source_vertices.rows(), 3);
  for (int i = 0; i < corr.canonical_vertex_count(); ++i) {
    const auto face = corr.source_faces.row(corr.face_index[i]);
    const Vec3 e1 = source_vertices.row(face[1]) - source_vertices.row(face[0]);
    const Vec3 e2 = source_vertices.row(face[2]) - source_vertices.row(face[0]);
    const auto b = corr.bary.row(i);
    const Vec3 g = grad_output.row(i);
    const Vec3 gn = b[3] * g;
    const Vec3 ge1 = e2.cross(gn);
    const Vec3 ge2 = gn.cross(e1);
    grad.row(face[0]) += ((b[0] + b[3]) * g - ge1 - ge2).transpose();
    grad.row(face[1]) += (b[1] * g + ge1).transpose();
    grad.row(face[2]) += (b[2] * g + ge2).transpose();
  }
  return grad;
}

const Correspondence& find_correspondence(const RigAsset& rig, const std::string& source_id) {
  const auto it = rig.correspondences.find(source_id);
  check(it != rig.correspondences.end(), ErrorCode::UnknownTopology,
        "no correspondence registered for source topology '" + source_id + "'");
  return it->second;
}

} // namespace unirig
