#include "unirig/synth.hpp"

#include "unirig/correctives.hpp"
#include "unirig/error.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <set>

namespace unirig {

namespace {

struct BoneSpec {
  std::string name;
  int parent;
  Vec3 head;
  Vec3 tip;
  double radius;
};

int add_bone(std::vector<BoneSpec>& bones, std::string name, int parent, Vec3 head, Vec3 tip, double radius) {
  bones.push_back({std::move(name), parent, head, tip, radius});
  return static_cast<int>(bones.size()) - 1;
}

std::vector<BoneSpec> layout_bones(const SynthConfig& c) {
  std::vector<BoneSpec> bones;
  if (c.dense) {
    const double seg = 0.05;
    int prev = add_bone(bones, "root", kNoParent, Vec3(0, 0, 0), Vec3(0, seg, 0), 0.02);
    for (int i = 1; i <= 77; ++i) {
      prev = add_bone(bones, "chain_" + std::to_string(i), prev, Vec3(0, seg * i, 0), Vec3(0, seg * (i + 1), 0), 0.02);
    }
    return bones;
  }

  const double bottom = 0.95;
  const double top = 1.52;
  const double step = (top - bottom) / (c.torso_segments + 1);
  int torso = add_bone(bones, "pelvis", kNoParent, Vec3(0, bottom, 0), Vec3(0, bottom + step, 0), 0.12);
  const int pelvis = torso;
  const char* torso_names[] = {"spine", "chest"};
  for (int s = 0; s < c.torso_segments; ++s) {
    const double y = bottom + step * (s + 1);
    const double r = s + 1 == c.torso_segments ? 0.13 : 0.12;
    torso = add_bone(bones, torso_names[s], torso, Vec3(0, y, 0), Vec3(0, y + step, 0), r);
  }
  if (c.head) {
    add_bone(bones, "head", torso, Vec3(0, 1.58, 0), Vec3(0, 1.80, 0), 0.09);
  }
  if (c.arms) {
    for (const double side : {1.0, -1.0}) {
      const std::string tag = side > 0 ? "l_" : "r_";
      const int upper = add_bone(bones, tag + "upperarm", torso, Vec3(0.18 * side, 1.48, 0),
                                 Vec3(0.46 * side, 1.48, 0), 0.045);
      const int fore =
          add_bone(bones, tag + "forearm", upper, Vec3(0.46 * side, 1.48, 0), Vec3(0.72 * side, 1.48, 0), 0.04);
      for (int f = 0; f < c.fingers_per_hand; ++f) {
        const Vec3 head(0.75 * side, 1.48, (f - 2) * 0.022);
        add_bone(bones, "finger_" + tag + std::to_string(f), fore, head, head + Vec3(0.07 * side, 0, 0), 0.008);
      }
    }
  }
  if (c.legs) {
    for (const double side : {1.0, -1.0}) {
      const std::string tag = side > 0 ? "l_" : "r_";
      const int thigh =
          add_bone(bones, tag + "thigh", pelvis, Vec3(0.1 * side, 0.92, 0), Vec3(0.1 * side, 0.5, 0), 0.07);
      add_bone(bones, tag + "shin", thigh, Vec3(0.1 * side, 0.5, 0), Vec3(0.1 * side, 0.08, 0), 0.05);
    }
  }
  return bones;
}

// Frame with x along the bone.
Mat3 bone_frame(const Vec3& direction) {
  const Vec3 x = direction.normalized();
  const Vec3 ref = std::abs(x.z()) < 0.9 ? Vec3::UnitZ() : Vec3::UnitY();
  const Vec3 y = ref.cross(x).normalized();
  const Vec3 z = x.cross(y);
  Mat3 r;
  r << x, y, z;
  return r;
}

double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

struct Ring {
  double axial;
  double radius;
};

std::vector<Ring> capsule_rings(double length, double radius, int axial, int caps) {
  std::vector<Ring> rings;
  for (int m = 1; m <= caps; ++m) {
    const double phi = m * M_PI / (2.0 * (caps + 1));
    rings.push_back({-radius * std::cos(phi), radius * std::sin(phi)});
  }
  for (int s = 0; s <= axial; ++s) {
    rings.push_back({length * s / axial, radius});
  }
  for (int m = caps; m >= 1; --m) {
    const double phi = m * M_PI / (2.0 * (caps + 1));
    rings.push_back({length + radius * std::cos(phi), radius * std::sin(phi)});
  }
  return rings;
}

// Triangles of a capsule whose vertices are laid out pole A, rings, pole B.
void stitch_capsule(int first, int rings, int radial, std::vector<std::array<int, 3>>& faces) {
  const int pole_a = first;
  const int pole_b = first + 1 + rings * radial;
  auto at = [&](int ring, int j) { return first + 1 + ring * radial + (j % radial); };
  for (int j = 0; j < radial; ++j) {
    faces.push_back({pole_a, at(0, j + 1), at(0, j)});
  }
  for (int s = 0; s + 1 < rings; ++s) {
    for (int j = 0; j < radial; ++j) {
      const int p0 = at(s, j);
      const int p1 = at(s, j + 1);
      const int p2 = at(s + 1, j + 1);
      const int p3 = at(s + 1, j);
      faces.push_back({p0, p1, p2});
      faces.push_back({p0, p2, p3});
    }
  }
  for (int j = 0; j < radial; ++j) {
    faces.push_back({at(rings - 1, j), at(rings - 1, j + 1), pole_b});
  }
}

Faces to_faces(const std::vector<std::array<int, 3>>& list) {
  Faces f(static_cast<Eigen::Index>(list.size()), 3);
  for (size_t i = 0; i < list.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      f(static_cast<Eigen::Index>(i), c) = list[i][c];
    }
  }
  return f;
}

Mat3 aa_matrix(const Vec3& aa) {
  const double angle = aa.norm();
  if (angle == 0.0) {
    return Mat3::Identity();
  }
  return Eigen::AngleAxisd(angle, aa / angle).toRotationMatrix();
}

// Unit outward direction of a bind vertex from its owner bone.
Vec3 capsule_normal(const SynthRig& s, int vertex) {
  const int k = s.owner[vertex];
  const Vec3 a = s.joints.row(k).transpose();
  const Vec3 b = s.tips.row(k).transpose();
  const Vec3 p = s.rig.mesh.vertices.row(vertex).transpose();
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (p - (a + t * ab)).normalized();
}

} // namespace

void SynthConfig::validate() const {
  check(torso_segments >= 0 && torso_segments <= 2, ErrorCode::InvalidConfig, "torso_segments must be 0..2");
  check(fingers_per_hand >= 0 && fingers_per_hand <= 5, ErrorCode::InvalidConfig, "fingers_per_hand must be 0..5");
  check(!(fingers_per_hand > 0 && !arms), ErrorCode::InvalidConfig, "fingers need arms");
  check(radial_segments >= 3 && axial_segments >= 1 && cap_rings >= 1, ErrorCode::InvalidConfig,
        "capsule tessellation too coarse");
  check(size_scale > 0.0 && std::isfinite(size_scale), ErrorCode::InvalidConfig, "size_scale must be positive");
  check(length_scale_min >= 0.5 && length_scale_max <= 2.0 && length_scale_min <= length_scale_max &&
            girth_scale_min >= 0.5 && girth_scale_max <= 2.0 && girth_scale_min <= girth_scale_max,
        ErrorCode::InvalidConfig, "identity scale ranges must lie in [0.5, 2]");
  check(max_angle_deg >= 0.0 && max_angle_deg <= 180.0 && finger_max_angle_deg >= 0.0 &&
            finger_max_angle_deg <= 180.0 && max_root_translation >= 0.0,
        ErrorCode::InvalidConfig, "pose limits out of range");
}

std::uint64_t SynthConfig::hash() const {
  // FNV-1a over the field bytes in declaration order.
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, size_t size) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  auto mix_int = [&](std::int64_t v) { mix(&v, sizeof v); };
  auto mix_double = [&](double v) { mix(&v, sizeof v); };
  mix_int(static_cast<std::int64_t>(seed));
  mix_int(torso_segments);
  mix_int(head);
  mix_int(arms);
  mix_int(legs);
  mix_int(fingers_per_hand);
  mix_int(dense);
  mix_double(size_scale);
  mix_int(radial_segments);
  mix_int(axial_segments);
  mix_int(cap_rings);
  mix_double(length_scale_min);
  mix_double(length_scale_max);
  mix_double(girth_scale_min);
  mix_double(girth_scale_max);
  mix_double(max_angle_deg);
  mix_double(finger_max_angle_deg);
  mix_double(max_root_translation);
  return h;
}

double SynthRandom::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

Vec3 SynthRandom::unit_vector() {
  const double z = uniform(-1.0, 1.0);
  const double phi = uniform(0.0, 2.0 * M_PI);
  const double s = std::sqrt(std::max(0.0, 1.0 - z * z));
  return Vec3(s * std::cos(phi), s * std::sin(phi), z);
}

SynthRig make_rig(const SynthConfig& config) {
  config.validate();
  auto bones = layout_bones(config);
  for (auto& b : bones) {
    b.head *= config.size_scale;
    b.tip *= config.size_scale;
    b.radius *= config.size_scale;
  }
  const int j = static_cast<int>(bones.size());

  SynthRig out;
  out.config = config;
  auto& skel = out.rig.skeleton;
  out.joints.resize(j, 3);
  out.tips.resize(j, 3);
  for (int k = 0; k < j; ++k) {
    skel.names.push_back(bones[k].name);
    skel.parents.push_back(bones[k].parent);
    skel.bind.push_back({bone_frame(bones[k].tip - bones[k].head), bones[k].head});
    out.joints.row(k) = bones[k].head.transpose();
    out.tips.row(k) = bones[k].tip.transpose();
    out.radii.push_back(bones[k].radius);
  }
  const auto children = skel.children();

  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  std::vector<Region> regions;
  for (int k = 0; k < j; ++k) {
    const auto& b = bones[k];
    const Mat3 frame = skel.bind[k].rotation;
    const double length = (b.tip - b.head).norm();
    const auto rings = capsule_rings(length, b.radius, config.axial_segments, config.cap_rings);
    CapsuleLayout cap;
    cap.joint = k;
    cap.first_vertex = static_cast<int>(verts.size());
    cap.ring_count = static_cast<int>(rings.size());
    cap.radial = config.radial_segments;
    cap.length = length;
    cap.radius = b.radius;

    std::vector<double> axial_of;
    verts.push_back(b.head + frame * Vec3(-b.radius, 0, 0));
    axial_of.push_back(-b.radius);
    for (const auto& ring : rings) {
      for (int a = 0; a < cap.radial; ++a) {
        const double alpha = 2.0 * M_PI * a / cap.radial;
        verts.push_back(b.head + frame * Vec3(ring.axial, ring.radius * std::cos(alpha), ring.radius * std::sin(alpha)));
        axial_of.push_back(ring.axial);
      }
    }
    verts.push_back(b.head + frame * Vec3(length + b.radius, 0, 0));
    axial_of.push_back(length + b.radius);
    stitch_capsule(cap.first_vertex, cap.ring_count, cap.radial, faces);

    const bool distal_hand = b.name.find("forearm") != std::string::npos;
    const bool distal_foot = b.name.find("shin") != std::string::npos;
    for (const double ax : axial_of) {
      Region r = Region::Body;
      if (b.name == "head") {
        r = Region::Head;
      } else if (skel.is_finger(k) || (distal_hand && ax > 0.7 * length)) {
        r = Region::Hands;
      } else if (distal_foot && ax > 0.7 * length) {
        r = Region::Feet;
      }
      regions.push_back(r);
      out.owner.push_back(k);
    }
    out.capsules.push_back(cap);
  }

  auto& mesh = out.rig.mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) {
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  }
  mesh.faces = to_faces(faces);
  mesh.regions = std::move(regions);

  // Smooth distance falloff over the owner bone, its parent and its children.
  for (size_t i = 0; i < verts.size(); ++i) {
    const int k = out.owner[i];
    std::vector<int> cand{k};
    if (skel.parents[k] != kNoParent) {
      cand.push_back(skel.parents[k]);
    }
    cand.insert(cand.end(), children[k].begin(), children[k].end());
    std::vector<double> d(cand.size());
    for (size_t c = 0; c < cand.size(); ++c) {
      d[c] = segment_distance(verts[i], bones[cand[c]].head, bones[cand[c]].tip);
    }
    const double dmin = *std::min_element(d.begin(), d.end());
    const double h = 0.6 * bones[k].radius;
    std::vector<std::pair<double, int>> w;
    for (size_t c = 0; c < cand.size(); ++c) {
      const double x = (d[c] - dmin) / h;
      w.emplace_back(std::exp(-x * x), cand[c]);
    }
    std::stable_sort(w.begin(), w.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (w.size() > 4) {
      w.resize(4);
    }
    w.erase(std::remove_if(w.begin(), w.end(), [](const auto& e) { return e.first < 0.005; }), w.end());
    std::sort(w.begin(), w.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
    double total = 0.0;
    for (const auto& e : w) {
      total += e.first;
    }
    std::vector<std::int32_t> js;
    std::vector<double> vs;
    for (const auto& e : w) {
      js.push_back(e.second);
      vs.push_back(e.first / total);
    }
    out.rig.weights.append_row(js, vs);
  }
  out.rig.unit_scale = 1.0;
  validate_rig(out.rig);
  return out;
}

IdentityScales IdentityScales::uniform(int joint_count, double length, double girth) {
  IdentityScales s;
  s.length.assign(static_cast<size_t>(joint_count), length);
  s.girth.assign(static_cast<size_t>(joint_count), girth);
  return s;
}

IdentityVariant make_identity_variant(const SynthRig& synth, const IdentityScales& scales) {
  const auto& skel = synth.rig.skeleton;
  const int j = skel.joint_count();
  check(static_cast<int>(scales.length.size()) == j && static_cast<int>(scales.girth.size()) == j,
        ErrorCode::SizeMismatch, "identity scales need one entry per joint");
  for (int k = 0; k < j; ++k) {
    for (const double s : {scales.length[k], scales.girth[k]}) {
      check(s >= 0.5 && s <= 2.0, ErrorCode::OutOfRange,
            "identity scale " + std::to_string(s) + " for joint " + skel.names[k] + " outside [0.5, 2]");
    }
  }
  IdentityVariant out;
  out.joints.resize(j, 3);
  out.tips.resize(j, 3);
  for (int k = 0; k < j; ++k) {
    const int p = skel.parents[k];
    const Vec3 jk = synth.joints.row(k).transpose();
    if (p == kNoParent) {
      out.joints.row(k) = jk.transpose();
    } else {
      const Vec3 jp = synth.joints.row(p).transpose();
      out.joints.row(k) = out.joints.row(p) + scales.length[p] * (jk - jp).transpose();
    }
    out.tips.row(k) = out.joints.row(k) + scales.length[k] * (synth.tips.row(k) - synth.joints.row(k));
  }
  const auto& v = synth.rig.mesh.vertices;
  out.rest_vertices.resize(v.rows(), 3);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    const int k = synth.owner[static_cast<size_t>(i)];
    const Mat3& frame = skel.bind[k].rotation;
    const double length = synth.capsules[k].length;
    const double s = scales.length[k];
    const double g = scales.girth[k];
    Vec3 u = frame.transpose() * (v.row(i).transpose() - synth.joints.row(k).transpose());
    if (u.x() < 0.0) {
      u.x() *= g;
    } else if (u.x() <= length) {
      u.x() *= s;
    } else {
      u.x() = length * s + (u.x() - length) * g;
    }
    u.y() *= g;
    u.z() *= g;
    out.rest_vertices.row(i) = (out.joints.row(k).transpose() + frame * u).transpose();
  }
  return out;
}

IdentityScales random_identity(const SynthRig& synth, std::uint64_t seed) {
  const auto& c = synth.config;
  SynthRandom rng(seed);
  const int j = synth.rig.joint_count();
  IdentityScales s = IdentityScales::uniform(j);
  for (int k = 0; k < j; ++k) {
    s.length[k] = rng.uniform(c.length_scale_min, c.length_scale_max);
    s.girth[k] = rng.uniform(c.girth_scale_min, c.girth_scale_max);
  }
  return s;
}

RemeshResult remesh_variant(const SynthRig& synth, RemeshMode mode) {
  const Mesh& canon = synth.rig.mesh;
  RemeshResult out;
  out.wrap.vertices = canon.vertices;
  out.wrap.faces = canon.faces;
  out.wrap.regions = canon.regions;

  if (mode == RemeshMode::Subdivide) {
    std::vector<Vec3> verts;
    for (Eigen::Index i = 0; i < canon.vertices.rows(); ++i) {
      verts.push_back(canon.vertices.row(i).transpose());
    }
    std::map<std::pair<int, int>, int> midpoint;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      const auto it = midpoint.find(key);
      if (it != midpoint.end()) {
        return it->second;
      }
      const int idx = static_cast<int>(verts.size());
      verts.push_back(0.5 * (verts[a] + verts[b]));
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> faces;
    for (Eigen::Index f = 0; f < canon.faces.rows(); ++f) {
      const int a = canon.faces(f, 0);
      const int b = canon.faces(f, 1);
      const int c = canon.faces(f, 2);
      const int ab = mid(a, b);
      const int bc = mid(b, c);
      const int ca = mid(c, a);
      faces.push_back({a, ab, ca});
      faces.push_back({ab, b, bc});
      faces.push_back({ca, bc, c});
      faces.push_back({ab, bc, ca});
    }
    out.source.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
    for (size_t i = 0; i < verts.size(); ++i) {
      out.source.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
    }
    out.source.faces = to_faces(faces);
    return out;
  }

  // Drop every other ring of each capsule (the last ring always stays).
  std::vector<Vec3> verts;
  std::vector<std::array<int, 3>> faces;
  for (const auto& cap : synth.capsules) {
    std::vector<int> kept;
    for (int r = 0; r < cap.ring_count; r += 2) {
      kept.push_back(r);
    }
    if (kept.back() != cap.ring_count - 1) {
      kept.push_back(cap.ring_count - 1);
    }
    const int first = static_cast<int>(verts.size());
    verts.push_back(canon.vertices.row(cap.first_vertex).transpose());
    for (const int r : kept) {
      for (int a = 0; a < cap.radial; ++a) {
        verts.push_back(canon.vertices.row(cap.first_vertex + 1 + r * cap.radial + a).transpose());
      }
    }
    verts.push_back(canon.vertices.row(cap.first_vertex + cap.vertex_count() - 1).transpose());
    stitch_capsule(first, static_cast<int>(kept.size()), cap.radial, faces);
  }
  out.source.vertices.resize(static_cast<Eigen::Index>(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) {
    out.source.vertices.row(static_cast<Eigen::Index>(i)) = verts[i].transpose();
  }
  out.source.faces = to_faces(faces);
  return out;
}

PoseLimits PoseLimits::from(const SynthConfig& config) {
  return {config.max_angle_deg, config.finger_max_angle_deg, config.max_root_translation};
}

PoseFrame sample_pose(const SynthRig& synth, std::uint64_t seed, const PoseLimits& limits) {
  check(limits.max_angle_deg >= 0.0 && limits.max_angle_deg <= 180.0 && limits.finger_max_angle_deg >= 0.0 &&
            limits.finger_max_angle_deg <= 180.0 && limits.max_root_translation >= 0.0,
        ErrorCode::InvalidConfig, "pose limits out of range");
  const auto& skel = synth.rig.skeleton;
  const int j = skel.joint_count();
  SynthRandom rng(seed);
  PoseFrame pose;
  pose.encoding = RotationEncoding::AxisAngle;
  pose.rotations.resize(j, 3);
  for (int k = 0; k < j; ++k) {
    const double limit = (skel.is_finger(k) ? limits.finger_max_angle_deg : limits.max_angle_deg) * M_PI / 180.0;
    const Vec3 axis = rng.unit_vector();
    const double angle = rng.uniform(0.0, limit);
    pose.rotations.row(k) = (angle * axis).transpose();
  }
  const Vec3 dir = rng.unit_vector();
  pose.root_translation = rng.uniform(0.0, limits.max_root_translation) * dir;
  return pose;
}

PoseFrame sample_pose(const SynthRig& synth, std::uint64_t seed) {
  return sample_pose(synth, seed, PoseLimits::from(synth.config));
}

MotionSequence sample_motion(const SynthRig& synth, std::uint64_t seed, int frames, double smoothness,
                             const PoseLimits& limits) {
  check(frames >= 1, ErrorCode::InvalidConfig, "motion needs at least one frame");
  check(smoothness >= 0.0 && smoothness < 1.0, ErrorCode::InvalidConfig, "smoothness must lie in [0, 1)");
  check(limits.max_angle_deg >= 0.0 && limits.max_angle_deg <= 180.0 && limits.finger_max_angle_deg >= 0.0 &&
            limits.finger_max_angle_deg <= 180.0 && limits.max_root_translation >= 0.0,
        ErrorCode::InvalidConfig, "pose limits out of range");
  const auto& skel = synth.rig.skeleton;
  const int j = skel.joint_count();
  const double a = smoothness;
  // Stationary standard deviation of a twice-filtered uniform [-1, 1] signal.
  const double sigma =
      std::sqrt(std::pow(1.0 - a, 4) * (1.0 + a * a) / std::pow(1.0 - a * a, 3)) / std::sqrt(3.0);
  const int burn_in = 200;
  SynthRandom rng(seed);
  const int channels = 3 * j + 3;
  Eigen::VectorXd y1 = Eigen::VectorXd::Zero(channels);
  Eigen::VectorXd y2 = Eigen::VectorXd::Zero(channels);
  MotionSequence motion;
  motion.fps = 30.0;
  for (int f = -burn_in; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      y1[c] = a * y1[c] + (1.0 - a) * rng.uniform(-1.0, 1.0);
      y2[c] = a * y2[c] + (1.0 - a) * y1[c];
    }
    if (f < 0) {
      continue;
    }
    PoseFrame pose;
    pose.encoding = RotationEncoding::AxisAngle;
    pose.rotations.resize(j, 3);
    pose.timestamp = f / motion.fps;
    for (int k = 0; k < j; ++k) {
      const double limit = (skel.is_finger(k) ? limits.finger_max_angle_deg : limits.max_angle_deg) * M_PI / 180.0;
      Vec3 aa = y2.segment<3>(3 * k) * (0.5 * limit / (2.0 * sigma));
      if (aa.norm() > limit) {
        aa *= limit / aa.norm();
      }
      pose.rotations.row(k) = aa.transpose();
    }
    Vec3 t = y2.segment<3>(3 * j) * (0.5 * limits.max_root_translation / (2.0 * sigma));
    if (t.norm() > limits.max_root_translation) {
      t *= limits.max_root_translation / t.norm();
    }
    pose.root_translation = t;
    motion.frames.push_back(std::move(pose));
  }
  return motion;
}

std::vector<CoplanarFrame> coplanar_fixture(std::uint64_t seed, int frames, double third_start, double third_end,
                                            double sweep_deg) {
  check(frames >= 2, ErrorCode::InvalidConfig, "coplanar fixture needs at least 2 frames");
  SynthRandom rng(seed);
  const Vec3 axis = rng.unit_vector();
  const Mat3 base = aa_matrix(rng.unit_vector() * rng.uniform(0.0, M_PI));
  Points src(6, 3);
  const double s = 1.0 / std::sqrt(2.0);
  for (int i = 0; i < 3; ++i) {
    src.row(2 * i) = s * Vec3::Unit(i).transpose();
    src.row(2 * i + 1) = -s * Vec3::Unit(i).transpose();
  }
  std::vector<CoplanarFrame> out;
  for (int f = 0; f < frames; ++f) {
    const double t = static_cast<double>(f) / (frames - 1);
    CoplanarFrame frame;
    frame.third = third_start + (third_end - third_start) * t;
    frame.truth = aa_matrix(axis * (sweep_deg * M_PI / 180.0 * t)) * base;
    const Mat3 m = frame.truth * Vec3(1.0, 0.05, frame.third).asDiagonal();
    frame.src = src;
    frame.dst = (m * src.transpose()).transpose();
    out.push_back(std::move(frame));
  }
  return out;
}

Points reference_skin(const Skeleton& skeleton, const SkinningWeights& weights, const Points& rest,
                      const PoseFrame& axis_angle_pose) {
  using Mat4 = Eigen::Matrix4d;
  const int j = skeleton.joint_count();
  const int n = static_cast<int>(rest.rows());
  check(axis_angle_pose.encoding == RotationEncoding::AxisAngle, ErrorCode::EncodingMismatch,
        "reference skinner takes axis-angle poses");
  auto homog = [](const Mat3& r, const Vec3& t) {
    Mat4 m = Mat4::Identity();
    m.topLeftCorner<3, 3>() = r;
    m.topRightCorner<3, 1>() = t;
    return m;
  };
  std::vector<Mat4> bind(static_cast<size_t>(j));
  std::vector<Mat4> global(static_cast<size_t>(j));
  for (int k = 0; k < j; ++k) {
    bind[k] = homog(skeleton.bind[k].rotation, skeleton.bind[k].translation);
  }
  for (int k = 0; k < j; ++k) {
    const Mat4 rot = homog(aa_matrix(axis_angle_pose.rotations.row(k).transpose()), Vec3::Zero());
    const int p = skeleton.parents[k];
    if (p < 0) {
      global[k] = homog(Mat3::Identity(), axis_angle_pose.root_translation) * bind[k] * rot;
    } else {
      global[k] = global[p] * (bind[p].inverse() * bind[k]) * rot;
    }
  }
  Eigen::MatrixXd dense = Eigen::MatrixXd::Zero(n, j);
  for (int i = 0; i < n; ++i) {
    for (int k = 0; k < j; ++k) {
      dense(i, k) = weights.weight(i, k);
    }
  }
  Points out(n, 3);
  for (int i = 0; i < n; ++i) {
    Eigen::Vector4d acc = Eigen::Vector4d::Zero();
    const Eigen::Vector4d v(rest(i, 0), rest(i, 1), rest(i, 2), 1.0);
    for (int k = 0; k < j; ++k) {
      acc += dense(i, k) * (global[k] * bind[k].inverse() * v);
    }
    out.row(i) = acc.head<3>().transpose();
  }
  return out;
}

Points fixture_bulge(const SynthRig& synth, const CorrectivesFixture& fixture, const PoseFrame& pose) {
  const auto& skel = synth.rig.skeleton;
  const int n = synth.rig.vertex_count();
  std::vector<double> amount(static_cast<size_t>(skel.joint_count()), 0.0);
  for (int k = 0; k < skel.joint_count(); ++k) {
    if (skel.parents[k] == kNoParent) {
      continue;
    }
    const Mat3 r = pose.matrix(k);
    const double cos_theta = std::clamp((r.trace() - 1.0) / 2.0, -1.0, 1.0);
    amount[k] = fixture.amplitude * (1.0 - cos_theta);
  }
  Points out = Points::Zero(n, 3);
  for (int i = 0; i < n; ++i) {
    double sum = 0.0;
    const auto js = synth.rig.weights.row_joints(i);
    const auto ws = synth.rig.weights.row_values(i);
    for (size_t e = 0; e < js.size(); ++e) {
      if (ws[e] > 1e-3) {
        sum += ws[e] * amount[js[e]];
      }
    }
    out.row(i) = sum * capsule_normal(synth, i).transpose();
  }
  return out;
}

CorrectivesNet fit_correctives_fixture(const SynthRig& synth, const CorrectivesFixture& fixture, std::uint64_t seed) {
  const auto& rig = synth.rig;
  const int j = rig.joint_count();
  const int n = rig.vertex_count();
  const int c = fixture.channels;
  const int k_count = j * c;
  check(c >= 1 && fixture.training_poses >= 1, ErrorCode::InvalidConfig, "fixture needs channels and poses");
  SynthRandom rng(seed);

  // Block-structured stage 1: activation (k, ch) reads only joint k's 6D input.
  Eigen::MatrixXd w1 = Eigen::MatrixXd::Zero(k_count, 6 * j);
  Eigen::VectorXd b1(k_count);
  for (int k = 0; k < j; ++k) {
    for (int ch = 0; ch < c; ++ch) {
      const int a = k * c + ch;
      for (int e = 0; e < 6; ++e) {
        w1(a, 6 * k + e) = rng.uniform(-1.5, 1.5);
      }
      b1[a] = rng.uniform(-0.5, 0.5);
    }
  }

  std::vector<std::vector<std::int32_t>> joint_masks(static_cast<size_t>(j));
  std::vector<std::vector<int>> vertex_joints(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto js = rig.weights.row_joints(i);
    const auto ws = rig.weights.row_values(i);
    for (size_t e = 0; e < js.size(); ++e) {
      if (ws[e] > 1e-3) {
        joint_masks[js[e]].push_back(i);
        vertex_joints[i].push_back(js[e]);
      }
    }
  }
  for (auto& vj : vertex_joints) {
    std::sort(vj.begin(), vj.end());
  }
  std::vector<std::vector<std::int32_t>> masks;
  for (int k = 0; k < j; ++k) {
    for (int ch = 0; ch < c; ++ch) {
      masks.push_back(joint_masks[k]);
    }
  }

  auto activations = [&](const std::vector<Mat3>& local) {
    Eigen::VectorXd x(6 * j);
    for (int k = 0; k < j; ++k) {
      x.segment<3>(6 * k) = local[k].col(0);
      x.segment<3>(6 * k + 3) = local[k].col(1);
    }
    return Eigen::VectorXd((w1 * x + b1).array().tanh());
  };
  const Eigen::VectorXd rest = activations(std::vector<Mat3>(static_cast<size_t>(j), Mat3::Identity()));

  const int p_count = fixture.training_poses;
  Eigen::MatrixXd features(p_count, k_count);
  std::vector<Points> targets;
  for (int p = 0; p < p_count; ++p) {
    const PoseFrame pose = sample_pose(synth, seed * 1000003ULL + static_cast<std::uint64_t>(p));
    std::vector<Mat3> local(static_cast<size_t>(j));
    for (int k = 0; k < j; ++k) {
      local[k] = pose.matrix(k);
    }
    features.row(p) = (activations(local) - rest).transpose();
    targets.push_back(fixture_bulge(synth, fixture, pose));
  }

  // Vertices sharing a joint signature share their feature columns: one ridge solve per group.
  std::map<std::vector<int>, std::vector<int>> groups;
  for (int i = 0; i < n; ++i) {
    if (!vertex_joints[i].empty()) {
      groups[vertex_joints[i]].push_back(i);
    }
  }
  Eigen::MatrixXd w2 = Eigen::MatrixXd::Zero(3 * n, k_count);
  for (const auto& [sig, verts] : groups) {
    std::vector<int> cols;
    for (const int k : sig) {
      for (int ch = 0; ch < c; ++ch) {
        cols.push_back(k * c + ch);
      }
    }
    const auto m = static_cast<Eigen::Index>(cols.size());
    Eigen::MatrixXd x(p_count, m);
    for (Eigen::Index q = 0; q < m; ++q) {
      x.col(q) = features.col(cols[static_cast<size_t>(q)]);
    }
    Eigen::MatrixXd y(p_count, 3 * static_cast<Eigen::Index>(verts.size()));
    for (int p = 0; p < p_count; ++p) {
      for (size_t v = 0; v < verts.size(); ++v) {
        y.block<1, 3>(p, 3 * static_cast<Eigen::Index>(v)) = targets[p].row(verts[v]);
      }
    }
    const Eigen::MatrixXd gram = x.transpose() * x + fixture.ridge * p_count * Eigen::MatrixXd::Identity(m, m);
    const Eigen::MatrixXd beta = gram.ldlt().solve(x.transpose() * y);
    for (size_t v = 0; v < verts.size(); ++v) {
      for (int d = 0; d < 3; ++d) {
        for (Eigen::Index q = 0; q < m; ++q) {
          w2(3 * verts[v] + d, cols[static_cast<size_t>(q)]) = beta(q, 3 * static_cast<Eigen::Index>(v) + d);
        }
      }
    }
  }
  return CorrectivesNet(j, n, c, std::move(w1), std::move(b1), std::move(w2), Eigen::VectorXd::Zero(3 * n),
                        std::move(masks));
}

int euler_characteristic(const Faces& faces, int vertex_count) {
  std::set<std::pair<int, int>> edges;
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int e = 0; e < 3; ++e) {
      edges.insert(std::minmax(faces(f, e), faces(f, (e + 1) % 3)));
    }
  }
  return vertex_count - static_cast<int>(edges.size()) + static_cast<int>(faces.rows());
}

int component_count(const Faces& faces, int vertex_count) {
  std::vector<int> parent(static_cast<size_t>(vertex_count));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (Eigen::Index f = 0; f < faces.rows(); ++f) {
    for (int e = 1; e < 3; ++e) {
      const int a = find(faces(f, 0));
      const int b = find(faces(f, e));
      if (a != b) {
        parent[b] = a;
      }
    }
  }
  int count = 0;
  for (int i = 0; i < vertex_count; ++i) {
    count += find(i) == i;
  }
  return count;
}

Mesh make_icosphere(int subdivisions, double radius, const Vec3& center) {
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Vec3> v = {{-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0}, {0, -1, t}, {0, 1, t},
                         {0, -1, -t}, {0, 1, -t}, {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  for (auto& p : v) {
    p.normalize();
  }
  std::vector<std::array<int, 3>> f = {{0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
                                       {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
                                       {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
                                       {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (int s = 0; s < subdivisions; ++s) {
    std::map<std::pair<int, int>, int> cache;
    auto mid = [&](int a, int b) {
      const auto key = std::minmax(a, b);
      if (const auto it = cache.find(key); it != cache.end()) {
        return it->second;
      }
      v.push_back((0.5 * (v[a] + v[b])).normalized());
      const int idx = static_cast<int>(v.size()) - 1;
      cache.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<int, 3>> next;
    for (const auto& tri : f) {
      const int a = mid(tri[0], tri[1]);
      const int b = mid(tri[1], tri[2]);
      const int c = mid(tri[2], tri[0]);
      next.push_back({tri[0], a, c});
      next.push_back({tri[1], b, a});
      next.push_back({tri[2], c, b});
      next.push_back({a, b, c});
    }
    f = std::move(next);
  }
  Mesh mesh;
  mesh.vertices.resize(static_cast<Eigen::Index>(v.size()), 3);
  for (size_t i = 0; i < v.size(); ++i) {
    mesh.vertices.row(static_cast<Eigen::Index>(i)) = (center + radius * v[i]).transpose();
  }
  mesh.faces = to_faces(f);
  return mesh;
}

} // namespace unirig
