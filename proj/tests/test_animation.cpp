#include "oracles.hpp"

#include "unirig/animation.hpp"
#include "unirig/error.hpp"
#include "unirig/rotation.hpp"
#include "unirig/synth.hpp"

#include <doctest.h>

#include <functional>
#include <numeric>
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

const SynthRig& synth() {
  static const SynthRig s = make_rig();
  return s;
}

// Synthetic rig carrying the fitted correctives fixture.
const SynthRig& synth_with_net() {
  static const SynthRig s = [] {
    SynthRig out = make_rig();
    out.rig.correctives = fit_correctives_fixture(out, {}, 5);
    return out;
  }();
  return s;
}

SkeletonState bind_state(const Skeleton& s) {
  return SkeletonState::from_transforms(s.bind, SkeletonState::Source::Posed);
}

Points random_points(std::mt19937_64& rng, Eigen::Index rows, double scale = 1.0) {
  std::normal_distribution<double> g(0.0, scale);
  Points p(rows, 3);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    p.data()[i] = g(rng);
  }
  return p;
}

double max_row_distance(const Points& a, const Points& b) {
  return (a - b).rowwise().norm().maxCoeff();
}

int joint_named(const Skeleton& s, const std::string& name) {
  const auto it = std::find(s.names.begin(), s.names.end(), name);
  REQUIRE(it != s.names.end());
  return static_cast<int>(it - s.names.begin());
}

// Bellman-Ford style relaxation of edge-graph distances from the seeds.
std::vector<double> graph_distances(const Mesh& mesh, const std::vector<int>& seeds) {
  std::vector<double> d(static_cast<size_t>(mesh.vertex_count()), std::numeric_limits<double>::infinity());
  for (const int s : seeds) {
    d[s] = 0.0;
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (int f = 0; f < mesh.face_count(); ++f) {
      for (int e = 0; e < 3; ++e) {
        const int a = mesh.faces(f, e);
        const int b = mesh.faces(f, (e + 1) % 3);
        const double len = (mesh.vertices.row(a) - mesh.vertices.row(b)).norm();
        if (d[a] + len < d[b]) {
          d[b] = d[a] + len;
          changed = true;
        }
        if (d[b] + len < d[a]) {
          d[a] = d[b] + len;
          changed = true;
        }
      }
    }
  }
  return d;
}

std::vector<int> raw_support(const RigAsset& rig, int joint) {
  std::vector<int> out;
  for (int i = 0; i < rig.vertex_count(); ++i) {
    if (rig.weights.weight(i, joint) > 1e-3) {
      out.push_back(i);
    }
  }
  return out;
}

} // namespace

TEST_CASE("zero pose reproduces the bind transforms") {
  const Skeleton& s = synth().rig.skeleton;
  const GlobalTransforms g = forward_kinematics(s, PoseFrame::identity(s.joint_count()));
  for (int k = 0; k < s.joint_count(); ++k) {
    CHECK((g[k].rotation - s.bind[k].rotation).norm() < 1e-15);
    CHECK((g[k].translation - s.bind[k].translation).norm() < 1e-15);
  }
}

TEST_CASE("forward kinematics matches the homogeneous chain") {
  const Skeleton& s = synth().rig.skeleton;
  std::mt19937_64 rng(21);
  const int j = s.joint_count();

  // Root only.
  std::vector<Mat3> local(static_cast<size_t>(j), Mat3::Identity());
  local[0] = oracle::random_rotation(rng);
  const GlobalTransforms root_only = forward_kinematics(s, PoseFrame::from_matrices(local, Vec3::Zero()));
  const auto chain_root = oracle::chain(s, local, Vec3::Zero());
  for (int k = 0; k < j; ++k) {
    CHECK((root_only[k].rotation - chain_root[k].topLeftCorner<3, 3>()).norm() < 1e-12);
    CHECK((root_only[k].translation - chain_root[k].topRightCorner<3, 1>()).norm() < 1e-12);
  }

  // Full random poses.
  for (int trial = 0; trial < 10; ++trial) {
    for (auto& r : local) {
      r = oracle::random_rotation(rng);
    }
    const Vec3 t = random_points(rng, 1).row(0).transpose();
    const GlobalTransforms g = forward_kinematics(s, PoseFrame::from_matrices(local, t));
    const auto chain = oracle::chain(s, local, t);
    for (int k = 0; k < j; ++k) {
      CHECK((g[k].rotation - chain[k].topLeftCorner<3, 3>()).norm() < 1e-12);
      CHECK((g[k].translation - chain[k].topRightCorner<3, 1>()).norm() < 1e-12);
    }
  }
}

TEST_CASE("root translation shifts every joint") {
  const Skeleton& s = synth().rig.skeleton;
  PoseFrame pose = PoseFrame::identity(s.joint_count());
  pose.root_translation = Vec3(0, 0, 1);
  const GlobalTransforms g = forward_kinematics(s, pose);
  for (int k = 0; k < s.joint_count(); ++k) {
    CHECK(g[k].translation == s.bind[k].translation + Vec3(0, 0, 1));
  }
}

TEST_CASE("joint orient off uses bone offsets directly") {
  const Skeleton& s = synth().rig.skeleton;
  std::mt19937_64 rng(22);
  std::vector<Mat3> local(static_cast<size_t>(s.joint_count()));
  for (auto& r : local) {
    r = oracle::random_rotation(rng);
  }
  PoseFrame pose = PoseFrame::from_matrices(local, Vec3(0.1, 0.2, 0.3));
  pose.joint_orient = false;
  const GlobalTransforms g = forward_kinematics(s, pose);
  std::vector<Eigen::Matrix4d> chain(local.size());
  for (size_t k = 0; k < local.size(); ++k) {
    const int p = s.parents[k];
    if (p < 0) {
      chain[k] = oracle::homogeneous(local[k], s.bind[k].translation + pose.root_translation);
    } else {
      chain[k] = chain[p] * oracle::homogeneous(local[k], s.bind[k].translation - s.bind[p].translation);
    }
    CHECK((g[static_cast<int>(k)].rotation - chain[k].topLeftCorner<3, 3>()).norm() < 1e-12);
    CHECK((g[static_cast<int>(k)].translation - chain[k].topRightCorner<3, 1>()).norm() < 1e-12);
  }
}

TEST_CASE("encoding problems surface from forward kinematics") {
  const Skeleton& s = synth().rig.skeleton;
  PoseFrame bad = PoseFrame::identity(s.joint_count(), RotationEncoding::Matrix);
  bad.rotations(2, 4) = 3.0;
  CHECK(code_of([&] { forward_kinematics(s, bad); }) == ErrorCode::EncodingMismatch);
  CHECK(code_of([&] { forward_kinematics(s, PoseFrame::identity(3)); }) == ErrorCode::SizeMismatch);
}

TEST_CASE("LBS with bind globals is the identity") {
  const RigAsset& rig = synth().rig;
  GlobalTransforms g;
  g.transforms = rig.skeleton.bind;
  const Points out = lbs_pose(rig.mesh.vertices, rig.weights, g, bind_inverses(rig.skeleton.bind));
  CHECK(max_row_distance(out, rig.mesh.vertices) < 1e-9);
}

TEST_CASE("LBS single joint and two-joint blend") {
  std::mt19937_64 rng(23);
  const Points v = random_points(rng, 20);
  const Vec3 c(0.3, 1.0, -0.2);

  SkinningWeights one;
  for (int i = 0; i < 20; ++i) {
    const std::int32_t j[] = {0};
    const double w[] = {1.0};
    one.append_row(j, w);
  }
  const Mat3 rb = oracle::random_rotation(rng);
  const Mat3 r0 = oracle::random_rotation(rng);
  const std::vector<RigidTransform> bind{{rb, c}};
  GlobalTransforms g;
  g.transforms = {{r0 * rb, c}};
  const Points rigid = lbs_pose(v, one, g, bind_inverses(bind));
  for (int i = 0; i < 20; ++i) {
    const Vec3 expect = r0 * (v.row(i).transpose() - c) + c;
    CHECK((rigid.row(i).transpose() - expect).norm() < 1e-12);
  }

  SkinningWeights half;
  for (int i = 0; i < 20; ++i) {
    const std::int32_t j[] = {0, 1};
    const double w[] = {0.5, 0.5};
    half.append_row(j, w);
  }
  const Mat3 r90 = Eigen::AngleAxisd(M_PI / 2, Vec3::UnitZ()).toRotationMatrix();
  const std::vector<RigidTransform> bind2{{Mat3::Identity(), Vec3::Zero()}, {Mat3::Identity(), c}};
  GlobalTransforms g2;
  g2.transforms = {bind2[0], {r90, c}};
  const Points blended = lbs_pose(v, half, g2, bind_inverses(bind2));
  for (int i = 0; i < 20; ++i) {
    const Vec3 p = v.row(i).transpose();
    const Vec3 expect = 0.5 * p + 0.5 * (r90 * (p - c) + c);
    CHECK((blended.row(i).transpose() - expect).norm() < 1e-12);
  }
}

TEST_CASE("LBS is linear in the rest shape") {
  const RigAsset& rig = synth().rig;
  std::mt19937_64 rng(24);
  const Points v1 = rig.mesh.vertices;
  const Points v2 = rig.mesh.vertices + random_points(rng, rig.vertex_count(), 0.01);
  const GlobalTransforms g = forward_kinematics(rig.skeleton, sample_pose(synth(), 3));
  const auto inv = bind_inverses(rig.skeleton.bind);
  const double a = 0.3;
  const Points mixed = lbs_pose(a * v1 + (1 - a) * v2, rig.weights, g, inv);
  const Points sum = a * lbs_pose(v1, rig.weights, g, inv) + (1 - a) * lbs_pose(v2, rig.weights, g, inv);
  CHECK(max_row_distance(mixed, sum) < 1e-12);
}

TEST_CASE("corrective masks") {
  const RigAsset& rig = synth().rig;
  const int j = rig.joint_count();

  SUBCASE("radius zero is the raw support, repeated per channel") {
    const auto masks = derive_corrective_masks(rig, 0.0, 3);
    REQUIRE(masks.size() == static_cast<size_t>(3 * j));
    for (int k = 0; k < j; ++k) {
      const auto raw = raw_support(rig, k);
      for (int c = 0; c < 3; ++c) {
        const auto& m = masks[static_cast<size_t>(3 * k + c)];
        CHECK(std::vector<int>(m.begin(), m.end()) == raw);
      }
    }
  }

  SUBCASE("huge radius saturates to the connected components") {
    std::vector<std::string> warnings;
    const auto masks = derive_corrective_masks(rig, 100.0, 1, &warnings);
    REQUIRE(!warnings.empty());
    CHECK(warnings.front().find("DisconnectedMesh") != std::string::npos);
    for (int k = 0; k < j; ++k) {
      const auto d = graph_distances(rig.mesh, raw_support(rig, k));
      std::vector<int> reachable;
      for (int i = 0; i < rig.vertex_count(); ++i) {
        if (std::isfinite(d[i])) {
          reachable.push_back(i);
        }
      }
      CHECK(std::vector<int>(masks[k].begin(), masks[k].end()) == reachable);
    }
  }

  SUBCASE("10 cm around the forearm") {
    const int forearm = joint_named(rig.skeleton, "l_forearm");
    const int upper = joint_named(rig.skeleton, "l_upperarm");
    const auto masks = derive_corrective_masks(rig, 0.1);
    const auto d = graph_distances(rig.mesh, raw_support(rig, forearm));
    std::vector<int> expect;
    for (int i = 0; i < rig.vertex_count(); ++i) {
      if (d[i] <= 0.1) {
        expect.push_back(i);
      }
    }
    const auto& m = masks[forearm];
    CHECK(std::vector<int>(m.begin(), m.end()) == expect);
    const std::set<int> in(m.begin(), m.end());
    // Last ring of the upper arm capsule, next to the elbow.
    const auto& cap = synth().capsules[upper];
    for (int r = 0; r < cap.radial; ++r) {
      CHECK(in.contains(cap.first_vertex + 1 + (cap.ring_count - 1) * cap.radial + r));
    }
    for (int i = 0; i < rig.vertex_count(); ++i) {
      if (rig.mesh.regions[i] == Region::Head) {
        CHECK(!in.contains(i));
      }
    }
  }

  CHECK(code_of([&] { derive_corrective_masks(rig, -1.0); }) == ErrorCode::InvalidConfig);
}

TEST_CASE("correctives net") {
  const SynthRig& sy = synth_with_net();
  const CorrectivesNet& net = *sy.rig.correctives;
  const int j = net.joint_count();
  const int n = net.vertex_count();

  SUBCASE("all-zero weights displace nothing") {
    const int c = 2;
    CorrectivesNet zero(j, n, c, Eigen::MatrixXd::Zero(j * c, 6 * j), Eigen::VectorXd::Zero(j * c),
                        Eigen::MatrixXd::Zero(3 * n, j * c), Eigen::VectorXd::Zero(3 * n),
                        std::vector<std::vector<std::int32_t>>(static_cast<size_t>(j * c), {0, 1, 2}));
    CHECK(apply_correctives(zero, sample_pose(sy, 4)).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("displacements stay inside the masks") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const Points d = apply_correctives(net, sample_pose(sy, seed));
      for (int i = 0; i < n; ++i) {
        if (!net.in_any_mask(i)) {
          CHECK(d.row(i).cwiseAbs().maxCoeff() == 0.0);
        }
      }
    }
    for (const auto& m : net.masks()) {
      CHECK(m.size() < static_cast<size_t>(0.3 * n));
    }
  }

  SUBCASE("zero pose is displacement free") {
    CHECK(apply_correctives(net, PoseFrame::identity(j)).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("fixture bulge is reproduced") {
    for (std::uint64_t seed = 100; seed < 105; ++seed) {
      const PoseFrame pose = sample_pose(sy, seed);
      const Points err = apply_correctives(net, pose) - fixture_bulge(sy, {}, pose);
      CHECK(err.rowwise().norm().mean() < 0.002);
    }
  }

  CHECK(code_of([&] { apply_correctives(net, PoseFrame::identity(j - 1)); }) == ErrorCode::ShapeMismatch);
}

TEST_CASE("posing the rest shape with the zero pose changes nothing") {
  const RigAsset& rig = synth().rig;
  const MeshPoser poser(rig);
  const Points out = poser.pose(rig.mesh.vertices, PoseFrame::identity(rig.joint_count()), {.correctives = false});
  CHECK(max_row_distance(out, rig.mesh.vertices) < 1e-9);
  const Points one_shot = pose_mesh(rig, rig.mesh.vertices, PoseFrame::identity(rig.joint_count()));
  CHECK(max_row_distance(one_shot, rig.mesh.vertices) < 1e-9);
}

TEST_CASE("posing matches the reference skinner") {
  const SynthRig& sy = synth();
  const RigAsset& rig = sy.rig;
  const MeshPoser poser(rig);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const PoseFrame pose = sample_pose(sy, seed);
    const Points ref = reference_skin(rig.skeleton, rig.weights, rig.mesh.vertices, pose);
    CHECK(max_row_distance(poser.pose(rig.mesh.vertices, bind_state(rig.skeleton), pose), ref) < 1e-7);
    // Through the fitted skeleton, which differs from bind by the regressor residual.
    CHECK(max_row_distance(pose_mesh(rig, rig.mesh.vertices, pose), ref) < 1e-5);
  }
}

TEST_CASE("batch posing is pure and matches single posing") {
  const SynthRig& sy = synth();
  const MeshPoser poser(sy.rig);
  const std::vector<PoseFrame> same(128, sample_pose(sy, 9));
  const auto out = poser.pose_batch(sy.rig.mesh.vertices, same);
  REQUIRE(out.size() == 128);
  for (const auto& p : out) {
    CHECK(p == out.front());
  }

  std::vector<PoseFrame> mixed;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    mixed.push_back(sample_pose(sy, seed));
  }
  const IdentityVariant v = make_identity_variant(sy, random_identity(sy, 3));
  const auto batch = poser.pose_batch(v.rest_vertices, mixed);
  for (size_t b = 0; b < mixed.size(); ++b) {
    CHECK(max_row_distance(batch[b], poser.pose(v.rest_vertices, mixed[b])) < 1e-12);
  }
  CHECK(poser.pose_batch(v.rest_vertices, std::span<const PoseFrame>{}).empty());

  const SynthRig& net = synth_with_net();
  const MeshPoser with_net(net.rig);
  const auto corrected = with_net.pose_batch(net.rig.mesh.vertices, std::span(mixed).first(4));
  for (size_t b = 0; b < 4; ++b) {
    CHECK(corrected[b] == with_net.pose(net.rig.mesh.vertices, mixed[b]));
  }
}

TEST_CASE("posing commutes with rigid motion of the identity") {
  const SynthRig& sy = synth();
  const MeshPoser poser(sy.rig);
  std::mt19937_64 rng(25);
  const IdentityVariant v = make_identity_variant(sy, random_identity(sy, 4));
  for (int trial = 0; trial < 5; ++trial) {
    const Mat3 r = oracle::random_rotation(rng);
    const Vec3 t = random_points(rng, 1).row(0).transpose();
    PoseFrame pose = sample_pose(sy, 30 + trial);
    const Points posed = poser.pose(v.rest_vertices, pose);
    pose.root_translation = r * pose.root_translation;
    const Points moved = poser.pose((v.rest_vertices * r.transpose()).rowwise() + t.transpose(), pose);
    CHECK(max_row_distance(moved, (posed * r.transpose()).rowwise() + t.transpose()) < 1e-6);
  }
}

TEST_CASE("pose gradient matches finite differences") {
  std::mt19937_64 rng(26);
  for (const bool correctives : {false, true}) {
    for (const bool orient : {true, false}) {
      const SynthRig& sy = correctives ? synth_with_net() : synth();
      const RigAsset& rig = sy.rig;
      const MeshPoser poser(rig);
      const IdentityVariant v = make_identity_variant(sy, random_identity(sy, 6));
      const SkeletonState skel = poser.fit(v.rest_vertices);
      const PoseFrame aa = sample_pose(sy, 40);
      PoseFrame pose = PoseFrame::from_matrices(aa.matrices(), aa.root_translation, RotationEncoding::SixD);
      pose.joint_orient = orient;
      const PoseOptions opts{.correctives = correctives};

      const Points g = random_points(rng, rig.vertex_count());
      const PoseGradient grad = pose_vjp(rig, skel, v.rest_vertices, pose, g, opts);

      const RowMatrix d_rot = random_points(rng, 2 * rig.joint_count()).reshaped<Eigen::RowMajor>(rig.joint_count(), 6);
      const Vec3 d_t = random_points(rng, 1).row(0).transpose();
      const Points d_rest = random_points(rng, rig.vertex_count(), 0.01);

      auto loss = [&](double h) {
        PoseFrame p = pose;
        p.rotations += h * d_rot;
        p.root_translation += h * d_t;
        return poser.pose(v.rest_vertices + h * d_rest, skel, p, opts).cwiseProduct(g).sum();
      };
      const double numeric = oracle::directional(loss, 1e-6);
      const double analytic =
          grad.rotations.cwiseProduct(d_rot).sum() + grad.root_translation.dot(d_t) + grad.rest_vertices.cwiseProduct(d_rest).sum();
      CAPTURE(correctives);
      CAPTURE(orient);
      CHECK(std::abs(analytic - numeric) <= 1e-4 * std::abs(numeric));
    }
  }
  const RigAsset& rig = synth().rig;
  CHECK(code_of([&] {
          pose_vjp(rig, bind_state(rig.skeleton), rig.mesh.vertices, PoseFrame::identity(rig.joint_count()),
                   rig.mesh.vertices);
        }) == ErrorCode::EncodingMismatch);
}

TEST_CASE("6D decoding and its gradient") {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 20; ++trial) {
    const Mat3 r = oracle::random_rotation(rng);
    const Vec6 e = matrix_to_6d(r);
    CHECK((matrix_from_6d(e) - r).norm() < 1e-12);
    const Vec6 x = e + 0.1 * Vec6::Random();
    const Mat3 g = Mat3::Random();
    const Vec6 d = Vec6::Random();
    const double numeric = oracle::directional(
        [&](double h) { return matrix_from_6d(x + h * d).cwiseProduct(g).sum(); }, 1e-6);
    CHECK(matrix_from_6d_vjp(x, g).dot(d) == doctest::Approx(numeric).epsilon(1e-6));
  }
  Vec6 collinear;
  collinear << 1, 0, 0, 2, 0, 0;
  CHECK(code_of([&] { matrix_from_6d(collinear); }) == ErrorCode::EncodingMismatch);
}
