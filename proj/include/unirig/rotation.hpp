#pragma once

#include "unirig/types.hpp"

namespace unirig {

Mat3 axis_angle_to_matrix(const Vec3& axis_angle);
Vec3 matrix_to_axis_angle(const Mat3& rotation);

// 6D encoding: first two columns of the matrix, column-major (r00 r10 r20 r01 r11 r21).
Vec6 matrix_to_6d(const Mat3& rotation);
// Gram-Schmidt decode. Fails with EncodingMismatch on (near) collinear inputs.
Mat3 matrix_from_6d(const Vec6& encoded);
// Vector-Jacobian product of matrix_from_6d: returns dL/d(encoded) given dL/dR.
Vec6 matrix_from_6d_vjp(const Vec6& encoded, const Mat3& grad_rotation);

// Geodesic angle between two rotations, radians.
double geodesic_distance(const Mat3& a, const Mat3& b);

bool is_rotation(const Mat3& m, double tolerance);
double orthonormality_error(const Mat3& m);

// Nearest proper rotation (SVD with determinant correction).
Mat3 project_to_rotation(const Mat3& m);

// Shortest-arc rotation taking direction `from` onto direction `to`.
Mat3 shortest_arc(const Vec3& from, const Vec3& to);

} // namespace unirig
