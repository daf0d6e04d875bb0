#pragma once

#include <Eigen/Dense>

#include "embridge/common.hpp"

namespace embridge::em {

// Free-space scalar Green's function g(r, r') = exp(j k R') / (4 pi R'),
// R' = ||r - r'||. Throws on (numerically) coincident points.
cplx scalar_green(const Eigen::Vector3d& r, const Eigen::Vector3d& rp, double k_wav);

// Free-space dyadic Green's function
//   G = [ (3/(k^2 R'^2) - 3j/(k R') - 1) rr^T - (1/(k^2 R'^2) - j/(k R') - 1) I3 ] g
// with r the unit vector along r - r'. Symmetric: G(r, r') = G(r', r)^T.
Eigen::Matrix3cd dyadic_green(const Eigen::Vector3d& r, const Eigen::Vector3d& rp,
                              double k_wav);

// Radius of the sphere with the same volume as one voxel.
double equivalent_sphere_radius(double voxel_volume);

// Integral of the scalar Green's function over the volume-equivalent sphere
// centered on the singular point: ((1 - j k a) e^{j k a} - 1) / k^2.
cplx self_scalar_integral(double k_wav, double voxel_volume);

// Integral of the dyadic Green's function over the same sphere, with the
// depolarizing delta term included: ((2/3) Ig - 1/(3 k^2)) I3. The 2/3 comes
// from the angular average of the principal-value part, -1/(3 k^2) from the
// source-point delta contribution.
Eigen::Matrix3cd self_dyadic_integral(double k_wav, double voxel_volume);

} // namespace embridge::em
