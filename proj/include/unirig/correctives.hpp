#pragma once

#include "unirig/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace unirig {

// Two-stage pose-corrective network. Stage 1 maps the 6D encodings of all
// local joint rotations to K = J * C activations through tanh; stage 2 maps the
// activations to per-vertex displacements. Activation a only reaches the
// vertices of its mask. The response to the zero pose is subtracted so the rest
// shape stays displacement free.
class CorrectivesNet {
 public:
  // masks[a] lists the vertices activation a may displace (sorted, unique).
  // Throws ShapeMismatch on inconsistent shapes, ValidationFailure on dense masks.
  CorrectivesNet(int joint_count, int vertex_count, int channels, Eigen::MatrixXd stage1_weights,
                 Eigen::VectorXd stage1_bias, Eigen::MatrixXd stage2_weights,
                 Eigen::VectorXd stage2_bias, std::vector<std::vector<std::int32_t>> masks);

  int joint_count() const {
    return joint_count_;
  }
  int vertex_count() const {
    return vertex_count_;
  }
  int channels() const {
    return channels_;
  }
  int activation_count() const {
    return joint_count_ * channels_;
  }

  const Eigen::MatrixXd& stage1_weights() const {
    return stage1_weights_;
  }
  const Eigen::VectorXd& stage1_bias() const {
    return stage1_bias_;
  }
  const Eigen::MatrixXd& stage2_weights() const {
    return stage2_weights_;
  }
  const Eigen::VectorXd& stage2_bias() const {
    return stage2_bias_;
  }
  const std::vector<std::vector<std::int32_t>>& masks() const {
    return masks_;
  }
  bool in_any_mask(int vertex) const {
    return covered_[vertex] != 0;
  }

  // Displacements (vertex_count x 3) for local rotations; `activations` receives
  // the hidden layer when non-null.
  Points evaluate(std::span<const Mat3> local_rotations, Eigen::VectorXd* activations = nullptr) const;

  // dL/dR for each local rotation (only the first two columns are nonzero)
  // given dL/d(displacements) and the activations recorded by evaluate().
  std::vector<Mat3> backward(const Eigen::VectorXd& activations, const Points& grad_displacements) const;

 private:
  Points raw_response(const Eigen::VectorXd& activations) const;
  Eigen::VectorXd hidden(std::span<const Mat3> local_rotations) const;

  int joint_count_;
  int vertex_count_;
  int channels_;
  Eigen::MatrixXd stage1_weights_;
  Eigen::VectorXd stage1_bias_;
  Eigen::MatrixXd stage2_weights_;
  Eigen::VectorXd stage2_bias_;
  std::vector<std::vector<std::int32_t>> masks_;
  std::vector<std::uint8_t> covered_;
  Points rest_response_;
};

} // namespace unirig
