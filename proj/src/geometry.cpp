#include "mutflow/geometry.hpp"

#include <algorithm>
#include <numbers>

#include "mutflow/error.hpp"

namespace mutflow {

Mat3 Mat3::from_columns(Vec3 c0, Vec3 c1, Vec3 c2) {
  Mat3 r;
  r.m = {c0.x, c1.x, c2.x, c0.y, c1.y, c2.y, c0.z, c1.z, c2.z};
  return r;
}

Mat3 Mat3::transposed() const {
  Mat3 t;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
  return t;
}

double Mat3::determinant() const {
  const auto& a = m;
  return a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6]) +
         a[2] * (a[3] * a[7] - a[4] * a[6]);
}

Vec3 operator*(const Mat3& a, Vec3 v) {
  return {a(0, 0) * v.x + a(0, 1) * v.y + a(0, 2) * v.z, a(1, 0) * v.x + a(1, 1) * v.y + a(1, 2) * v.z,
          a(2, 0) * v.x + a(2, 1) * v.y + a(2, 2) * v.z};
}

Mat3 operator*(const Mat3& a, const Mat3& b) {
  Mat3 r;
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) r(i, j) = a(i, 0) * b(0, j) + a(i, 1) * b(1, j) + a(i, 2) * b(2, j);
  return r;
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation.transposed();
  return {rt, -1.0 * (rt * translation)};
}

RigidTransform RigidTransform::compose(const RigidTransform& other) const {
  return {rotation * other.rotation, rotation * other.translation + translation};
}

double orthonormality_error(const Mat3& r) {
  const Mat3 p = r.transposed() * r;
  double err = std::abs(r.determinant() - 1.0);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) err = std::max(err, std::abs(p(i, j) - (i == j ? 1.0 : 0.0)));
  return err;
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a < 0.0) a += two_pi;
  // fmod of a tiny negative value can round up to exactly 2*pi.
  if (a >= two_pi) a = 0.0;
  return a;
}

double dihedral(Vec3 p1, Vec3 p2, Vec3 p3, Vec3 p4) {
  const Vec3 b1 = p2 - p1;
  const Vec3 b2 = p3 - p2;
  const Vec3 b3 = p4 - p3;
  const Vec3 n1 = cross(b1, b2);
  const Vec3 n2 = cross(b2, b3);
  const double tol = 1e-10;
  if (norm(n1) <= tol * norm(b1) * norm(b2) || norm(n2) <= tol * norm(b2) * norm(b3)) {
    throw GeometryError("dihedral: collinear points");
  }
  const double y = norm(b2) * dot(b1, n2);
  const double x = dot(n1, n2);
  return wrap_angle(std::atan2(y, x));
}

RigidTransform build_frame(Vec3 n, Vec3 ca, Vec3 c) {
  const Vec3 v1 = c - ca;
  const Vec3 v2 = n - ca;
  const double l1 = norm(v1);
  if (l1 < 1e-10) throw GeometryError("build_frame: C coincides with CA");
  const Vec3 e1 = (1.0 / l1) * v1;
  const Vec3 u = v2 - dot(v2, e1) * e1;
  const double lu = norm(u);
  if (lu < 1e-10 * std::max(1.0, norm(v2))) throw GeometryError("build_frame: collinear backbone atoms");
  const Vec3 e2 = (1.0 / lu) * u;
  const Vec3 e3 = cross(e1, e2);
  return {Mat3::from_columns(e1, e2, e3), ca};
}

Mat3 rotation_from_quaternion(double w, double x, double y, double z) {
  const double s = std::sqrt(w * w + x * x + y * y + z * z);
  w /= s;
  x /= s;
  y /= s;
  z /= s;
  Mat3 r;
  r.m = {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
         2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
         2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
  return r;
}

Mat3 random_rotation(Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double q[4];
  double len = 0.0;
  do {
    len = 0.0;
    for (double& v : q) {
      v = normal(rng);
      len += v * v;
    }
  } while (len < 1e-12);
  return rotation_from_quaternion(q[0], q[1], q[2], q[3]);
}

Vec3 random_in_ball(double radius, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec3 d;
  double len = 0.0;
  do {
    d = {normal(rng), normal(rng), normal(rng)};
    len = norm(d);
  } while (len < 1e-12);
  const double r = radius * std::cbrt(unit(rng));
  return (r / len) * d;
}

}  // namespace mutflow
