#pragma once

#include <array>
#include <cmath>

#include "mutflow/graph.hpp"

namespace mutflow {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](std::size_t i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](std::size_t i) const { return i == 0 ? x : (i == 1 ? y : z); }
  friend bool operator==(const Vec3&, const Vec3&) = default;
};

inline Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
inline Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
inline Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
inline double dot(Vec3 a, Vec3 b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(Vec3 a, Vec3 b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(Vec3 a) { return std::sqrt(dot(a, a)); }
inline double distance(Vec3 a, Vec3 b) { return norm(a - b); }

// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  double operator()(std::size_t r, std::size_t c) const { return m[3 * r + c]; }
  double& operator()(std::size_t r, std::size_t c) { return m[3 * r + c]; }

  static Mat3 identity() { return {}; }
  static Mat3 from_columns(Vec3 c0, Vec3 c1, Vec3 c2);
  Vec3 column(std::size_t c) const { return {m[c], m[3 + c], m[6 + c]}; }
  Mat3 transposed() const;
  double determinant() const;
  friend bool operator==(const Mat3&, const Mat3&) = default;
};

Vec3 operator*(const Mat3& a, Vec3 v);
Mat3 operator*(const Mat3& a, const Mat3& b);

// x -> rotation * x + translation
struct RigidTransform {
  Mat3 rotation;
  Vec3 translation;

  static RigidTransform identity() { return {}; }
  Vec3 apply(Vec3 v) const { return rotation * v + translation; }
  Vec3 apply_inverse(Vec3 v) const { return rotation.transposed() * (v - translation); }
  RigidTransform inverse() const;
  // (this * other)(x) = this(other(x))
  RigidTransform compose(const RigidTransform& other) const;
};

// Largest entry of |R^T R - I| and |det R - 1|.
double orthonormality_error(const Mat3& r);

// Signed dihedral of the four points mapped into [0, 2*pi). Throws
// GeometryError if p1,p2,p3 or p2,p3,p4 are collinear.
double dihedral(Vec3 p1, Vec3 p2, Vec3 p3, Vec3 p4);

// Residue frame: x along Ca->C, y from Ca->N by Gram-Schmidt, z = x cross y;
// translation at Ca. Throws GeometryError for collinear input.
RigidTransform build_frame(Vec3 n, Vec3 ca, Vec3 c);

// Uniform on SO(3) from a normalised Gaussian quaternion.
Mat3 random_rotation(Rng& rng);
// Uniform in a ball of the given radius.
Vec3 random_in_ball(double radius, Rng& rng);
Mat3 rotation_from_quaternion(double w, double x, double y, double z);

// Maps an angle to [0, 2*pi).
double wrap_angle(double a);

}  // namespace mutflow
