#pragma once

#include "unirig/animation.hpp"
#include "unirig/rig.hpp"
#include "unirig/skeleton_fit.hpp"

#include <array>
#include <optional>
#include <string>
#include <vector>

namespace unirig {

struct SweepSchedule {
  int body = 2;
  int finger = 1;
  int global = 1;

  // "body:2,finger:1,global:1"; missing keys keep their defaults. Throws InvalidConfig.
  static SweepSchedule parse(const std::string& text);
  std::string to_string() const;
};

enum class InversionMode { InitOnly, Analytical, Autograd };

std::string_view mode_name(InversionMode mode);
InversionMode parse_mode(std::string_view name);

struct InversionConfig {
  SweepSchedule schedule;
  int ns_max_iterations = 30;
  double ns_tolerance = 1e-9;
  double tau = 0.5; // subtree weight mass for a vertex to join a joint's solve
  InversionMode mode = InversionMode::Analytical;
  int autograd_iterations = 100;
  double step_size = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  std::array<double, kRegionCount> region_weights{1.0, 1.0, 1.0, 1.0};
  bool allow_cold_start = false;
  bool correctives = false; // model correctives while inverting
  RotationEncoding output_encoding = RotationEncoding::AxisAngle;

  // Throws InvalidConfig.
  void validate() const;
};

struct PolarResult {
  Mat3 rotation = Mat3::Identity();
  int iterations = 0;
  bool converged = false;
  // Set when R_current was returned unchanged: "ZeroCovariance", "ImproperCovariance" or "NotConverged".
  std::string flag;
};

// Newton-Schulz polar factor of dH = R_current^T H, started from dH / |dH|_inf and
// iterated R <- R (3I - R^T R) / 2. Returns R_current * polar(dH).
PolarResult newton_schulz_polar(const Mat3& h, const Mat3& r_current, int max_iterations = 30,
                                double tolerance = 1e-9);

struct InitEstimate {
  SkeletonState posed_skeleton;
  PoseFrame pose;
};

struct JointResidual {
  double mean = 0.0; // meters, over the joint's selection
  double max = 0.0;
  int count = 0;
};

struct InversionResult {
  PoseFrame pose;
  std::vector<JointResidual> joint_residuals;
  double mean_error = 0.0; // re-posed mean vertex error against the input, meters
  int passes_run = 0;
  std::vector<int> ns_iterations; // per joint, summed over passes
  int autograd_iterations_run = 0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::string> flags;
};

// Inverts poses of one identity. The rest shape defaults to the rig's bind mesh.
class PoseInverter {
 public:
  explicit PoseInverter(const RigAsset& rig, const InversionConfig& config = {});
  PoseInverter(const RigAsset& rig, const Points& rest_vertices, const InversionConfig& config = {});

  const InversionConfig& config() const {
    return config_;
  }
  const SkeletonState& rest_skeleton() const {
    return rest_skeleton_;
  }
  const Points& rest_vertices() const {
    return rest_;
  }

  InitEstimate init(const Points& posed) const;
  InversionResult analytical(const Points& posed) const;
  InversionResult analytical(const Points& posed, const PoseFrame& start) const;
  // Throws MissingInit when init is empty and cold starts are not allowed; Diverged.
  InversionResult autograd(const Points& posed, const std::optional<PoseFrame>& init) const;
  // init -> analytical -> autograd per config.mode.
  InversionResult run(const Points& posed) const;

  Points repose(const PoseFrame& pose) const;
  double mean_error(const PoseFrame& pose, const Points& posed) const;

 private:
  PoseFrame local_from_world(const SkeletonState& world) const;
  void finish(InversionResult& result, const Points& posed) const;

  const RigAsset* rig_;
  InversionConfig config_;
  Points rest_;
  MeshPoser poser_;
  SkeletonState rest_skeleton_;
  std::vector<RigidTransform> rest_inverse_;
  std::vector<std::vector<int>> selections_;
  std::vector<std::vector<double>> masses_;
  std::vector<std::vector<double>> own_;
  std::vector<std::vector<bool>> subtrees_;
  std::vector<double> vertex_loss_weights_;
};

InitEstimate invert_init(const RigAsset& rig, const Points& posed);
InversionResult invert_analytical(const RigAsset& rig, const Points& posed, const InversionConfig& config = {});
InversionResult invert_autograd(const RigAsset& rig, const Points& posed, const std::optional<PoseFrame>& init,
                                const InversionConfig& config = {});
// Routes foreign topologies through the registered correspondence first.
// Throws UnknownTopology.
InversionResult invert(const RigAsset& rig, const Points& posed, const std::optional<std::string>& source_topology,
                       const InversionConfig& config = {});

} // namespace unirig
