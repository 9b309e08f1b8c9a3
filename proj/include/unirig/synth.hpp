#pragma once

#include "unirig/rig.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace unirig {

struct SynthConfig {
  std::uint64_t seed = 7;
  // Joint chain: torso segments above the pelvis (0..2), head, arm and leg
  // pairs, fingers per hand (0..5). All off gives a single pelvis capsule.
  int torso_segments = 2;
  bool head = true;
  bool arms = true;
  bool legs = true;
  int fingers_per_hand = 0;
  // Replaces the humanoid with a root plus a 77-joint chain.
  bool dense = false;
  double size_scale = 1.0; // multiplies every segment length and radius
  // Capsule tessellation.
  int radial_segments = 12;
  int axial_segments = 8;
  int cap_rings = 3;
  // Identity perturbation ranges for random_identity().
  double length_scale_min = 0.85;
  double length_scale_max = 1.15;
  double girth_scale_min = 0.85;
  double girth_scale_max = 1.25;
  // Pose sampling limits, degrees and meters.
  double max_angle_deg = 45.0;
  double finger_max_angle_deg = 30.0;
  double max_root_translation = 0.1;

  // Throws InvalidConfig.
  void validate() const;
  // Stable hash of every field, for fixture versioning.
  std::uint64_t hash() const;
};

// Uniform doubles from a 64-bit Mersenne Twister with a fixed bit conversion,
// so sequences are identical across standard libraries.
class SynthRandom {
 public:
  explicit SynthRandom(std::uint64_t seed) : engine_(seed) {}
  double uniform(); // [0, 1)
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * uniform();
  }
  Vec3 unit_vector();

 private:
  std::mt19937_64 engine_;
};

struct CapsuleLayout {
  int joint = 0;
  int first_vertex = 0;
  int ring_count = 0; // rings between the two poles
  int radial = 0;
  double length = 0.0;
  double radius = 0.0;
  // Vertex layout: pole A, rings 0..ring_count-1 (radial each), pole B.
  int vertex_count() const {
    return 2 + ring_count * radial;
  }
};

struct SynthRig {
  RigAsset rig;
  SynthConfig config;
  Points joints; // ground-truth joint positions (equal to the bind translations)
  Points tips;   // bone end point per joint
  std::vector<double> radii;
  std::vector<CapsuleLayout> capsules;
  std::vector<int> owner; // capsule joint of each vertex
};

SynthRig make_rig(const SynthConfig& config = {});

struct IdentityScales {
  std::vector<double> length; // per joint, scales the vectors to its children and its capsule axis
  std::vector<double> girth;  // per joint, scales its capsule radius

  static IdentityScales uniform(int joint_count, double length = 1.0, double girth = 1.0);
};

struct IdentityVariant {
  Points rest_vertices;
  Points joints;
  Points tips;
};

// Throws OutOfRange when a scale is outside [0.5, 2].
IdentityVariant make_identity_variant(const SynthRig& synth, const IdentityScales& scales);
IdentityScales random_identity(const SynthRig& synth, std::uint64_t seed);

enum class RemeshMode { Subdivide, DecimateLite };

struct RemeshResult {
  Mesh source; // the new topology
  Mesh wrap;   // canonical topology registered onto the source surface
};

RemeshResult remesh_variant(const SynthRig& synth, RemeshMode mode);

struct PoseLimits {
  double max_angle_deg = 45.0;
  double finger_max_angle_deg = 30.0;
  double max_root_translation = 0.1;

  static PoseLimits from(const SynthConfig& config);
};

// Axis-angle pose; throws InvalidConfig for negative or excessive limits.
PoseFrame sample_pose(const SynthRig& synth, std::uint64_t seed, const PoseLimits& limits);
PoseFrame sample_pose(const SynthRig& synth, std::uint64_t seed);
// Twice exponentially smoothed random walk per joint, smoothness in [0, 1).
MotionSequence sample_motion(const SynthRig& synth, std::uint64_t seed, int frames, double smoothness,
                             const PoseLimits& limits);

struct CoplanarFrame {
  Points src;
  Points dst;
  Mat3 truth; // smooth path rotation
  double third = 0.0; // signed third singular value of the covariance
};

// src = {+-e_i} / sqrt(2), dst = R(t) diag(1, 0.05, third(t)) src with third
// ramping linearly from `third_start` to `third_end`.
std::vector<CoplanarFrame> coplanar_fixture(std::uint64_t seed, int frames = 61, double third_start = 0.2,
                                            double third_end = -0.2, double sweep_deg = 30.0);

// Naive dense homogeneous-matrix LBS with its own FK (joint orient on), used as
// an oracle for the animation module.
Points reference_skin(const Skeleton& skeleton, const SkinningWeights& weights, const Points& rest,
                      const PoseFrame& axis_angle_pose);

// Small correctives net fitted by ridge regression on bulge targets
// amp * (1 - cos theta_k) along the capsule normal, masked by joint support.
struct CorrectivesFixture {
  int channels = 8;
  int training_poses = 200;
  double amplitude = 0.01;
  double ridge = 1e-6;
};

CorrectivesNet fit_correctives_fixture(const SynthRig& synth, const CorrectivesFixture& fixture, std::uint64_t seed);
// Ground-truth bulge of the fixture for a pose (joint orient on).
Points fixture_bulge(const SynthRig& synth, const CorrectivesFixture& fixture, const PoseFrame& pose);

// V - E + F of a triangle mesh.
int euler_characteristic(const Faces& faces, int vertex_count);
// Connected components of the face graph.
int component_count(const Faces& faces, int vertex_count);

Mesh make_icosphere(int subdivisions, double radius, const Vec3& center = Vec3::Zero());

} // namespace unirig
