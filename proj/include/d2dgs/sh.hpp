#pragma once

#include "d2dgs/math.hpp"

namespace d2dgs {

// Real spherical harmonics, degrees 0..3, in the usual splatting order.
namespace sh {

constexpr double kC0 = 0.28209479177387814;

inline int basis_count(int degree) { return (degree + 1) * (degree + 1); }

// Fills out[0 .. basis_count) for a unit direction.
void eval_basis(int degree, const Vec3& dir, double* out);

// d(basis)/d(dir) for each basis function; grad[i] is a Vec3.
void eval_basis_grad(int degree, const Vec3& dir, Vec3* grad);

}  // namespace sh
}  // namespace d2dgs
