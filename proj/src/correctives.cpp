#include "unirig/correctives.hpp"

#include "unirig/error.hpp"
#include "unirig/rotation.hpp"

#include <algorithm>
#include <string>

namespace unirig {

namespace {

constexpr double kMaxMaskFraction = 0.3;

} // namespace

CorrectivesNet::CorrectivesNet(int joint_count, int vertex_count, int channels,
                               Eigen::MatrixXd stage1_weights, Eigen::VectorXd stage1_bias,
                               Eigen::MatrixXd stage2_weights, Eigen::VectorXd stage2_bias,
                               std::vector<std::vector<std::int32_t>> masks)
    : joint_count_(joint_count),
      vertex_count_(vertex_count),
      channels_(channels),
      stage1_weights_(std::move(stage1_weights)),
      stage1_bias_(std::move(stage1_bias)),
      stage2_weights_(std::move(stage2_weights)),
      stage2_bias_(std::move(stage2_bias)),
      masks_(std::move(masks)) {
  check(joint_count_ > 0 && vertex_count_ > 0 && channels_ > 0, ErrorCode::ShapeMismatch,
        "correctives net needs positive joint, vertex and channel counts");
  const int k = activation_count();
  check(stage1_weights_.rows() == k && stage1_weights_.cols() == 6 * joint_count_,
        ErrorCode::ShapeMismatch, "stage 1 weights must be K x 6J");
  check(stage1_bias_.size() == k, ErrorCode::ShapeMismatch, "stage 1 bias must have K entries");
  check(stage2_weights_.rows() == 3 * vertex_count_ && stage2_weights_.cols() == k,
        ErrorCode::ShapeMismatch, "stage 2 weights must be 3N x K");
  check(stage2_bias_.size() == 3 * vertex_count_, ErrorCode::ShapeMismatch,
        "stage 2 bias must have 3N entries");
  check(static_cast<int>(masks_.size()) == k, ErrorCode::ShapeMismatch,
        "one mask per activation required");
  check(stage1_weights_.allFinite() && stage1_bias_.allFinite() && stage2_weights_.allFinite() &&
            stage2_bias_.allFinite(),
        ErrorCode::ValidationFailure, "correctives weights must be finite");

  covered_.assign(vertex_count_, 0);
  for (int a = 0; a < k; ++a) {
    auto& mask = masks_[a];
    check(std::is_sorted(mask.begin(), mask.end()) &&
              std::adjacent_find(mask.begin(), mask.end()) == mask.end(),
          ErrorCode::ValidationFailure, "correctives mask must be sorted and unique");
    check(static_cast<double>(mask.size()) < kMaxMaskFraction * vertex_count_,
          ErrorCode::ValidationFailure,
          "correctives mask sparsity: activation " + std::to_string(a) + " touches >= 30% of vertices");
    for (const auto v : mask) {
      check(v >= 0 && v < vertex_count_, ErrorCode::ValidationFailure,
            "correctives mask vertex index out of range");
      covered_[v] = 1;
    }
  }

  const std::vector<Mat3> zero(joint_count_, Mat3::Identity());
  rest_response_ = raw_response(hidden(zero));
}

Eigen::VectorXd CorrectivesNet::hidden(std::span<const Mat3> local_rotations) const {
  check(static_cast<int>(local_rotations.size()) == joint_count_, ErrorCode::ShapeMismatch,
        "correctives input joint count mismatch");
  Eigen::VectorXd input(6 * joint_count_);
  for (int j = 0; j < joint_count_; ++j) {
    input.segment<6>(6 * j) = matrix_to_6d(local_rotations[j]);
  }
  return (stage1_weights_ * input + stage1_bias_).array().tanh().matrix();
}

Points CorrectivesNet::raw_response(const Eigen::VectorXd& activations) const {
  Points out = Points::Zero(vertex_count_, 3);
  for (int a = 0; a < activation_count(); ++a) {
    const double h = activations[a];
    const auto column = stage2_weights_.col(a);
    for (const auto v : masks_[a]) {
      out.row(v) += h * column.segment<3>(3 * v).transpose();
    }
  }
  for (int v = 0; v < vertex_count_; ++v) {
    if (covered_[v]) {
      out.row(v) += stage2_bias_.segment<3>(3 * v).transpose();
    }
  }
  return out;
}

Points CorrectivesNet::evaluate(std::span<const Mat3> local_rotations,
                                Eigen::VectorXd* activations) const {
  Eigen::VectorXd h = hidden(local_rotations);
  Points out = raw_response(h) - rest_response_;
  if (activations != nullptr) {
    *activations = std::move(h);
  }
  return out;
}

std::vector<Mat3> CorrectivesNet::backward(const Eigen::VectorXd& activations,
                                           const Points& grad_displacements) const {
  check(grad_displacements.rows() == vertex_count_, ErrorCode::ShapeMismatch,
        "correctives gradient vertex count mismatch");
  const int k = activation_count();
  Eigen::VectorXd grad_h(k);
  for (int a = 0; a < k; ++a) {
    const auto column = stage2_weights_.col(a);
    double acc = 0.0;
    for (const auto v : masks_[a]) {
      acc += column.segment<3>(3 * v).dot(grad_displacements.row(v).transpose());
    }
    grad_h[a] = acc;
  }
  const Eigen::VectorXd grad_pre =
      grad_h.array() * (1.0 - activations.array().square());
  const Eigen::VectorXd grad_input = stage1_weights_.transpose() * grad_pre;

  std::vector<Mat3> out(joint_count_, Mat3::Zero());
  for (int j = 0; j < joint_count_; ++j) {
    out[j].col(0) = grad_input.segment<3>(6 * j);
    out[j].col(1) = grad_input.segment<3>(6 * j + 3);
  }
  return out;
}

} // namespace unirig
