#include "unirig/rotation.hpp"

#include "unirig/error.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cmath>

namespace unirig {

Mat3 axis_angle_to_matrix(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-14) {
    // First-order expansion keeps the map smooth at zero.
    Mat3 k;
    k << 0, -axis_angle.z(), axis_angle.y(), axis_angle.z(), 0, -axis_angle.x(), -axis_angle.y(),
        axis_angle.x(), 0;
    return Mat3::Identity() + k;
  }
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

Vec3 matrix_to_axis_angle(const Mat3& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.axis() * aa.angle();
}

Vec6 matrix_to_6d(const Mat3& rotation) {
  Vec6 out;
  out.head<3>() = rotation.col(0);
  out.tail<3>() = rotation.col(1);
  return out;
}

Mat3 matrix_from_6d(const Vec6& encoded) {
  const Vec3 a1 = encoded.head<3>();
  const Vec3 a2 = encoded.tail<3>();
  const double n1 = a1.norm();
  check(n1 > 1e-12, ErrorCode::EncodingMismatch, "6D rotation has a zero first column");
  const Vec3 b1 = a1 / n1;
  const Vec3 u = a2 - b1.dot(a2) * b1;
  const double nu = u.norm();
  check(nu > 1e-12, ErrorCode::EncodingMismatch, "6D rotation columns are collinear");
  const Vec3 b2 = u / nu;
  Mat3 r;
  r.col(0) = b1;
  r.col(1) = b2;
  r.col(2) = b1.cross(b2);
  return r;
}

Vec6 matrix_from_6d_vjp(const Vec6& encoded, const Mat3& grad_rotation) {
  const Vec3 a1 = encoded.head<3>();
  const Vec3 a2 = encoded.tail<3>();
  const double n1 = a1.norm();
  const Vec3 b1 = a1 / n1;
  const double s = b1.dot(a2);
  const Vec3 u = a2 - s * b1;
  const double nu = u.norm();
  const Vec3 b2 = u / nu;

  const Vec3 g3 = grad_rotation.col(2);
  Vec3 gb1 = grad_rotation.col(0) + b2.cross(g3);
  const Vec3 gb2 = grad_rotation.col(1) + g3.cross(b1);

  const Vec3 gu = (gb2 - b2 * b2.dot(gb2)) / nu;
  const Vec3 ga2 = gu - b1 * b1.dot(gu);
  gb1 += -s * gu - b1.dot(gu) * a2;
  const Vec3 ga1 = (gb1 - b1 * b1.dot(gb1)) / n1;

  Vec6 out;
  out.head<3>() = ga1;
  out.tail<3>() = ga2;
  return out;
}

double geodesic_distance(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) * 0.5, -1.0, 1.0);
  // acos loses precision near 0; use the sine branch there.
  if (c > 0.9) {
    const Mat3 r = a.transpose() * b;
    const Vec3 v(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    return std::atan2(0.5 * v.norm(), c);
  }
  return std::acos(c);
}

double orthonormality_error(const Mat3& m) {
  return (m.transpose() * m - Mat3::Identity()).norm();
}

bool is_rotation(const Mat3& m, double tolerance) {
  return m.allFinite() && orthonormality_error(m) <= tolerance &&
      std::abs(m.determinant() - 1.0) <= tolerance;
}

Mat3 project_to_rotation(const Mat3& m) {
  const Eigen::JacobiSVD<Mat3> svd(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  return svd.matrixU() * d * svd.matrixV().transpose();
}

Mat3 shortest_arc(const Vec3& from, const Vec3& to) {
  const double nf = from.norm();
  const double nt = to.norm();
  if (nf < 1e-15 || nt < 1e-15) {
    return Mat3::Identity();
  }
  return Eigen::Quaterniond::FromTwoVectors(from / nf, to / nt).toRotationMatrix();
}

} // namespace unirig
