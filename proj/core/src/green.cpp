#include "embridge/green.hpp"

#include <cmath>

namespace embridge::em {

namespace {
constexpr double kCoincidentTol = 1e-12;  // m; below this the kernel is singular
}

cplx scalar_green(const Eigen::Vector3d& r, const Eigen::Vector3d& rp, double k_wav) {
  double R = (r - rp).norm();
  if (R < kCoincidentTol)
    throw std::domain_error("scalar_green: coincident source and observation points");
  return std::exp(cplx(0.0, k_wav * R)) / (4.0 * kPi * R);
}

Eigen::Matrix3cd dyadic_green(const Eigen::Vector3d& r, const Eigen::Vector3d& rp,
                              double k_wav) {
  Eigen::Vector3d d = r - rp;
  double R = d.norm();
  if (R < kCoincidentTol)
    throw std::domain_error("dyadic_green: coincident source and observation points");
  Eigen::Vector3d rhat = d / R;
  double kr = k_wav * R;
  cplx g = std::exp(cplx(0.0, kr)) / (4.0 * kPi * R);
  cplx a = cplx(3.0 / (kr * kr), -3.0 / kr) - 1.0;  // rr^T coefficient
  cplx b = cplx(1.0 / (kr * kr), -1.0 / kr) - 1.0;  // identity coefficient
  Eigen::Matrix3d rrT = rhat * rhat.transpose();
  Eigen::Matrix3cd G =
      (a * rrT.cast<cplx>() - b * Eigen::Matrix3cd::Identity()) * g;
  return G;
}

double equivalent_sphere_radius(double voxel_volume) {
  if (!(voxel_volume > 0.0))
    throw std::invalid_argument("equivalent_sphere_radius: volume must be positive");
  return std::cbrt(3.0 * voxel_volume / (4.0 * kPi));
}

cplx self_scalar_integral(double k_wav, double voxel_volume) {
  if (!(k_wav > 0.0))
    throw std::invalid_argument("self_scalar_integral: wavenumber must be positive");
  double a = equivalent_sphere_radius(voxel_volume);
  cplx jka(0.0, k_wav * a);
  return ((1.0 - jka) * std::exp(jka) - 1.0) / (k_wav * k_wav);
}

Eigen::Matrix3cd self_dyadic_integral(double k_wav, double voxel_volume) {
  cplx ig = self_scalar_integral(k_wav, voxel_volume);
  cplx s = (2.0 / 3.0) * ig - 1.0 / (3.0 * k_wav * k_wav);
  return s * Eigen::Matrix3cd::Identity();
}

} // namespace embridge::em
