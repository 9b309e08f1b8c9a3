#include "oracles.hpp"

#include "unirig/error.hpp"
#include "unirig/synth.hpp"
#include "unirig/topo_transfer.hpp"

#include <doctest.h>

#include <Eigen/LU>

#include <functional>
#include <random>
#include <set>

using namespace unirig;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::IoFailure;
}

// Dense 4x4 solve of [u1 u2 u3 u4; 1 1 1 1] b = [p; 1].
Vec4 dense_tet(const Vec3& p, const Vec3& u1, const Vec3& u2, const Vec3& u3) {
  const Vec3 u4 = u1 + (u2 - u1).cross(u3 - u1);
  Eigen::Matrix4d a;
  a << u1, u2, u3, u4, 1, 1, 1, 1;
  Vec4 rhs;
  rhs << p, 1.0;
  return a.fullPivLu().solve(rhs);
}

Points normals_of(const Mesh& mesh) {
  Points n = Points::Zero(mesh.vertex_count(), 3);
  for (int f = 0; f < mesh.face_count(); ++f) {
    const Vec3 a = mesh.vertices.row(mesh.faces(f, 0));
    const Vec3 b = mesh.vertices.row(mesh.faces(f, 1));
    const Vec3 c = mesh.vertices.row(mesh.faces(f, 2));
    const Vec3 fn = (b - a).cross(c - a);
    for (int k = 0; k < 3; ++k) {
      n.row(mesh.faces(f, k)) += fn.transpose();
    }
  }
  n.rowwise().normalize();
  return n;
}

Points rigid(const Points& p, const Mat3& r, const Vec3& t) {
  return (p * r.transpose()).rowwise() + t.transpose();
}

const SynthRig& synth() {
  static const SynthRig s = make_rig();
  return s;
}

} // namespace

TEST_CASE("closest point on triangle matches the brute force oracle") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Vec3 a(u(rng), u(rng), u(rng));
    const Vec3 b(u(rng), u(rng), u(rng));
    const Vec3 c(u(rng), u(rng), u(rng));
    const Vec3 p = 2.0 * Vec3(u(rng), u(rng), u(rng));
    const Vec3 q = closest_point_on_triangle(p, a, b, c);
    CHECK((q - p).norm() == doctest::Approx(oracle::triangle_distance(p, a, b, c)).epsilon(1e-9));
  }
}

TEST_CASE("BVH of a single triangle is one leaf") {
  Points v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Faces f(1, 3);
  f << 0, 1, 2;
  const TriangleBvh bvh(v, f);
  REQUIRE(bvh.nodes().size() == 1);
  CHECK(bvh.nodes()[0].is_leaf());
  CHECK(bvh.nodes()[0].count == 1);
  const ClosestHit hit = bvh.closest(Vec3(0.25, 0.25, 2.0));
  CHECK(hit.face == 0);
  CHECK(hit.distance == doctest::Approx(2.0));
}

TEST_CASE("BVH queries agree with brute force") {
  const Mesh& mesh = synth().rig.mesh;
  const TriangleBvh bvh(mesh);
  std::mt19937_64 rng(2);
  const Vec3 lo = mesh.vertices.colwise().minCoeff().transpose();
  const Vec3 hi = mesh.vertices.colwise().maxCoeff().transpose();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const Vec3 p = lo + (hi - lo).cwiseProduct(Vec3(u(rng), u(rng), u(rng))) * 1.2 - (hi - lo) * 0.1;
    const ClosestHit hit = bvh.closest(p);
    worst = std::max(worst, std::abs(hit.distance - oracle::brute_closest(p, mesh)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("BVH structural invariants") {
  const Mesh& mesh = synth().rig.mesh;
  const int leaf_size = 4;
  const TriangleBvh bvh(mesh.vertices, mesh.faces, leaf_size);
  std::vector<int> order = bvh.triangle_order();
  std::sort(order.begin(), order.end());
  for (int i = 0; i < mesh.face_count(); ++i) {
    REQUIRE(order[i] == i);
  }
  int leaf_triangles = 0;
  for (const auto& node : bvh.nodes()) {
    if (!node.is_leaf()) {
      CHECK(node.box.contains(bvh.nodes()[node.left].box));
      CHECK(node.box.contains(bvh.nodes()[node.right].box));
      continue;
    }
    CHECK(node.count >= 1);
    CHECK(node.count <= leaf_size);
    leaf_triangles += node.count;
    for (int k = node.begin; k < node.begin + node.count; ++k) {
      const int f = bvh.triangle_order()[k];
      for (int c = 0; c < 3; ++c) {
        CHECK(node.box.contains(mesh.vertices.row(mesh.faces(f, c)).transpose()));
      }
    }
  }
  CHECK(leaf_triangles == mesh.face_count());
}

TEST_CASE("BVH ties resolve to the lower face index") {
  Points v(3, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0;
  Faces f(3, 3);
  f << 0, 1, 2, 0, 2, 1, 1, 2, 0;
  const TriangleBvh bvh(v, f, 1);
  CHECK(bvh.closest(Vec3(0.2, 0.2, 0.5)).face == 0);
  CHECK(bvh.closest(Vec3(0.2, 0.2, 0.5), [](int face) { return face > 0; }).face == 1);
  CHECK(bvh.closest(Vec3(0.2, 0.2, 0.5), [](int) { return false; }).face == -1);
}

TEST_CASE("empty meshes are rejected") {
  const Mesh empty;
  CHECK(code_of([&] { TriangleBvh bvh(empty); }) == ErrorCode::EmptyMesh);
  CHECK(code_of([&] { precompute_correspondence(empty, synth().rig.mesh); }) == ErrorCode::EmptyMesh);
}

TEST_CASE("tetrahedral barycentric coordinates") {
  const Vec3 u1(0.1, 0.2, 0.3);
  const Vec3 u2(0.5, 0.1, 0.2);
  const Vec3 u3(0.2, 0.6, 0.25);

  const Vec4 at_u1 = solve_tet_barycentric(u1, u1, u2, u3);
  CHECK((at_u1 - Vec4(1, 0, 0, 0)).norm() < 1e-12);

  const Vec3 centroid = (u1 + u2 + u3) / 3.0;
  const Vec4 at_c = solve_tet_barycentric(centroid, u1, u2, u3);
  CHECK((at_c - Vec4(1.0 / 3, 1.0 / 3, 1.0 / 3, 0)).norm() < 1e-12);

  const Vec3 lift = (u2 - u1).cross(u3 - u1);
  const Vec3 off = centroid + 0.005 * lift.normalized();
  const Vec4 at_off = solve_tet_barycentric(off, u1, u2, u3);
  CHECK(at_off[3] == doctest::Approx(0.005 / lift.norm()).epsilon(1e-10));
  CHECK((at_off - dense_tet(off, u1, u2, u3)).norm() < 1e-10);
  CHECK(at_off.sum() == doctest::Approx(1.0).epsilon(1e-14));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), u(rng));
    CHECK((solve_tet_barycentric(p, u1, u2, u3) - dense_tet(p, u1, u2, u3)).norm() < 1e-9);
  }

  CHECK(code_of([&] { solve_tet_barycentric(centroid, u1, u2, u1 + 2.0 * (u2 - u1)); }) ==
        ErrorCode::DegenerateTriangle);
}

TEST_CASE("identity correspondence reproduces the mesh") {
  const Mesh& mesh = synth().rig.mesh;
  const Correspondence corr = precompute_correspondence(mesh, mesh);
  CHECK_NOTHROW(validate_correspondence(corr));
  CHECK((apply_correspondence(corr, mesh.vertices) - mesh.vertices).cwiseAbs().maxCoeff() < 1e-12);
  for (int i = 0; i < corr.canonical_vertex_count(); ++i) {
    CHECK(std::abs(corr.bary.row(i).sum() - 1.0) < 1e-12);
  }
}

TEST_CASE("subdivided source reconstructs the canonical mesh") {
  const RemeshResult rm = remesh_variant(synth(), RemeshMode::Subdivide);
  CHECK(rm.source.face_count() == 4 * synth().rig.mesh.face_count());
  const Correspondence corr = precompute_correspondence(rm.source, rm.wrap);
  const Points back = apply_correspondence(corr, rm.source.vertices);
  CHECK((back - synth().rig.mesh.vertices).rowwise().norm().maxCoeff() < 1e-6);
}

TEST_CASE("off-surface wrap vertices are reproduced exactly") {
  const Mesh& mesh = synth().rig.mesh;
  Mesh wrap = mesh;
  wrap.vertices += 0.003 * normals_of(mesh);
  const Correspondence corr = precompute_correspondence(mesh, wrap);
  const Points back = apply_correspondence(corr, mesh.vertices);
  CHECK((back - wrap.vertices).rowwise().norm().maxCoeff() < 1e-9);
  int lifted = 0;
  for (int i = 0; i < corr.canonical_vertex_count(); ++i) {
    lifted += std::abs(corr.bary(i, 3)) > 1e-6 ? 1 : 0;
  }
  CHECK(lifted > corr.canonical_vertex_count() / 2);
}

TEST_CASE("transfer is equivariant under rigid motion") {
  const Mesh& mesh = synth().rig.mesh;
  Mesh wrap = mesh;
  wrap.vertices += 0.003 * normals_of(mesh);
  const Correspondence corr = precompute_correspondence(mesh, wrap);
  const Points base = apply_correspondence(corr, mesh.vertices);
  std::mt19937_64 rng(4);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    const Mat3 r = oracle::random_rotation(rng);
    const Vec3 t(n(rng), n(rng), n(rng));
    const Points moved = apply_correspondence(corr, rigid(mesh.vertices, r, t));
    CHECK((moved - rigid(base, r, t)).rowwise().norm().maxCoeff() < 1e-9);
  }
}

TEST_CASE("on-surface vertices scale with the source") {
  const RemeshResult rm = remesh_variant(synth(), RemeshMode::Subdivide);
  const Correspondence corr = precompute_correspondence(rm.source, rm.wrap);
  const Points base = apply_correspondence(corr, rm.source.vertices);
  const Points scaled = apply_correspondence(corr, 2.0 * rm.source.vertices);
  CHECK((scaled - 2.0 * base).rowwise().norm().maxCoeff() < 1e-9);
}

TEST_CASE("precompute is deterministic") {
  const RemeshResult rm = remesh_variant(synth(), RemeshMode::DecimateLite);
  const Correspondence a = precompute_correspondence(rm.source, rm.wrap);
  const Correspondence b = precompute_correspondence(rm.source, rm.wrap);
  CHECK(a.face_index == b.face_index);
  CHECK(a.bary == b.bary);
}

TEST_CASE("normal agreement keeps candidates on the facing side") {
  // Two parallel sheets 1 cm apart; the wrap point sits just under the upper
  // sheet but faces down, towards the lower one.
  Points v(6, 3);
  v << 0, 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 0.01, 0, 1, 0.01, 1, 0, 0.01;
  Faces f(2, 3);
  f << 0, 1, 2, 3, 4, 5; // lower faces +z, upper faces -z
  const Mesh source{v, f, {}};
  Mesh wrap;
  wrap.vertices.resize(3, 3);
  wrap.vertices << 0.2, 0.2, 0.008, 0.3, 0.2, 0.008, 0.2, 0.3, 0.008;
  wrap.faces.resize(1, 3);
  wrap.faces << 0, 1, 2; // normal +z
  const Correspondence plain = precompute_correspondence(source, wrap);
  CHECK(plain.face_index[0] == 1);
  CorrespondenceOptions opts;
  opts.normal_agreement = 0.5;
  const Correspondence filtered = precompute_correspondence(source, wrap, opts);
  CHECK(filtered.face_index[0] == 0);
  CHECK((apply_correspondence(filtered, v) - wrap.vertices).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("unmatched vertices follow their face rigidly") {
  const Mesh& mesh = synth().rig.mesh;
  Mesh wrap = mesh;
  wrap.vertices += 0.01 * normals_of(mesh);
  CorrespondenceOptions opts;
  opts.unmatched.assign(static_cast<size_t>(mesh.vertex_count()), 0);
  for (size_t i = 0; i < opts.unmatched.size(); i += 7) {
    opts.unmatched[i] = 1;
  }
  const Correspondence corr = precompute_correspondence(mesh, wrap, opts);
  CHECK((apply_correspondence(corr, mesh.vertices) - wrap.vertices).cwiseAbs().maxCoeff() < 1e-9);
  std::mt19937_64 rng(5);
  const Mat3 r = oracle::random_rotation(rng);
  const Vec3 t(0.3, -0.1, 2.0);
  const Points moved = apply_correspondence(corr, rigid(mesh.vertices, r, t));
  CHECK((moved - rigid(wrap.vertices, r, t)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(code_of([&] { apply_correspondence_vjp(corr, mesh.vertices, wrap.vertices); }) ==
        ErrorCode::InvalidConfig);
}

TEST_CASE("correspondence gradient matches finite differences") {
  const Mesh& mesh = synth().rig.mesh;
  Mesh wrap = mesh;
  wrap.vertices += 0.004 * normals_of(mesh);
  const Correspondence corr = precompute_correspondence(mesh, wrap);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  Points g(corr.canonical_vertex_count(), 3);
  Points dir(mesh.vertex_count(), 3);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    g.data()[i] = n(rng);
  }
  for (Eigen::Index i = 0; i < dir.size(); ++i) {
    dir.data()[i] = n(rng);
  }
  const Points grad = apply_correspondence_vjp(corr, mesh.vertices, g);
  const double analytic = grad.cwiseProduct(dir).sum();
  const double numeric = oracle::directional(
      [&](double h) { return apply_correspondence(corr, mesh.vertices + h * dir).cwiseProduct(g).sum(); }, 1e-6);
  CHECK(std::abs(analytic - numeric) <= 1e-6 * std::max(1.0, std::abs(numeric)));
}

TEST_CASE("size mismatches and unknown topologies") {
  const Mesh& mesh = synth().rig.mesh;
  const Correspondence corr = precompute_correspondence(mesh, mesh);
  CHECK(code_of([&] { apply_correspondence(corr, mesh.vertices.topRows(10)); }) == ErrorCode::SizeMismatch);
  CHECK(code_of([&] { find_correspondence(synth().rig, "nope"); }) == ErrorCode::UnknownTopology);
  RigAsset rig = synth().rig;
  rig.correspondences["scan"] = corr;
  CHECK(&find_correspondence(rig, "scan") == &rig.correspondences.at("scan"));
}
