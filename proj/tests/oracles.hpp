#pragma once

// Reference implementations used as test oracles. They are written against
// Eigen only and never call into the unirig algorithms they check.

#include "unirig/rig.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace oracle {

using unirig::Mat3;
using unirig::Points;
using unirig::Vec3;

inline Mat3 rotation(const Vec3& axis_angle) {
  const double angle = axis_angle.norm();
  if (angle < 1e-300) {
    return Mat3::Identity();
  }
  return Eigen::AngleAxisd(angle, axis_angle / angle).toRotationMatrix();
}

inline Mat3 random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return q.toRotationMatrix();
}

inline double geodesic_deg(const Mat3& a, const Mat3& b) {
  const double c = std::clamp(((a.transpose() * b).trace() - 1.0) / 2.0, -1.0, 1.0);
  return std::acos(c) * 180.0 / M_PI;
}

// U V^T of the SVD.
inline Mat3 svd_polar(const Mat3& h) {
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  return svd.matrixU() * svd.matrixV().transpose();
}

// Textbook Kabsch: argmin_R sum |R src_i - dst_i|^2 with det correction.
inline Mat3 svd_kabsch(const Points& src, const Points& dst) {
  const Mat3 h = dst.transpose() * src;
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixU() * svd.matrixV().transpose()).determinant() < 0 ? -1.0 : 1.0;
  return svd.matrixU() * d * svd.matrixV().transpose();
}

inline double segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
  const Vec3 ab = b - a;
  const double t = std::clamp((p - a).dot(ab) / ab.squaredNorm(), 0.0, 1.0);
  return (a + t * ab - p).norm();
}

// Plane projection if it lands inside, otherwise the nearest edge.
inline double triangle_distance(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 n = (b - a).cross(c - a);
  const Vec3 q = p - n * (p - a).dot(n) / n.squaredNorm();
  const bool inside = (b - a).cross(q - a).dot(n) >= 0 && (c - b).cross(q - b).dot(n) >= 0 &&
                      (a - c).cross(q - c).dot(n) >= 0;
  if (inside) {
    return (p - q).norm();
  }
  return std::min({segment_distance(p, a, b), segment_distance(p, b, c), segment_distance(p, c, a)});
}

inline double brute_closest(const Vec3& p, const unirig::Mesh& mesh) {
  double best = std::numeric_limits<double>::infinity();
  for (int f = 0; f < mesh.face_count(); ++f) {
    const auto face = mesh.faces.row(f);
    best = std::min(best, triangle_distance(p, mesh.vertices.row(face[0]), mesh.vertices.row(face[1]),
                                            mesh.vertices.row(face[2])));
  }
  return best;
}

inline Eigen::Matrix4d homogeneous(const Mat3& r, const Vec3& t) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = r;
  m.topRightCorner<3, 1>() = t;
  return m;
}

// World joint matrices, joint orient on: G_k = G_parent * Bparent^-1 * B_k * R_k,
// with the root translated by t.
inline std::vector<Eigen::Matrix4d> chain(const unirig::Skeleton& s, const std::vector<Mat3>& local,
                                          const Vec3& t) {
  std::vector<Eigen::Matrix4d> g(s.parents.size());
  for (size_t k = 0; k < g.size(); ++k) {
    const Eigen::Matrix4d b = homogeneous(s.bind[k].rotation, s.bind[k].translation);
    const Eigen::Matrix4d r = homogeneous(local[k], Vec3::Zero());
    const int p = s.parents[k];
    if (p < 0) {
      g[k] = homogeneous(Mat3::Identity(), t) * b * r;
    } else {
      const Eigen::Matrix4d bp = homogeneous(s.bind[p].rotation, s.bind[p].translation);
      g[k] = g[p] * bp.inverse() * b * r;
    }
  }
  return g;
}

// Central difference of a scalar function along a direction.
template <typename F>
double directional(F&& f, double h) {
  return (f(h) - f(-h)) / (2.0 * h);
}

} // namespace oracle
