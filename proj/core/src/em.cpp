#include "embridge/em.hpp"

#include <algorithm>
#include <cmath>

namespace embridge::em {

FrequencyPlan FrequencyPlan::centered(double f_c, int K, double delta_f) {
  if (K <= 0) throw std::invalid_argument("FrequencyPlan: K must be positive");
  if (f_c <= 0.0) throw std::invalid_argument("FrequencyPlan: f_c must be positive");
  if (K > 1 && delta_f <= 0.0)
    throw std::invalid_argument("FrequencyPlan: delta_f must be positive for K > 1");
  FrequencyPlan p;
  p.f_c = f_c;
  p.K = K;
  p.delta_f = delta_f;
  p.f.resize(K);
  p.k.resize(K);
  p.omega.resize(K);
  for (int i = 0; i < K; ++i) {
    double fk = f_c + (static_cast<double>(i + 1) - 0.5 * (K + 1)) * delta_f;
    if (fk <= 0.0)
      throw std::invalid_argument("FrequencyPlan: comb extends to non-positive frequency");
    p.f[i] = fk;
    p.omega[i] = 2.0 * kPi * fk;
    p.k[i] = 2.0 * kPi * fk / kSpeedOfLight;
  }
  return p;
}

VoxelGrid VoxelGrid::make(const Eigen::Vector3d& center, const Eigen::Vector3d& extent,
                          int nx, int ny, int nz) {
  if (nx <= 0 || ny <= 0 || nz <= 0)
    throw std::invalid_argument("VoxelGrid: voxel counts must be positive");
  if (!(extent.minCoeff() > 0.0))
    throw std::invalid_argument("VoxelGrid: extent must be positive per axis");
  VoxelGrid g;
  g.center = center;
  g.extent = extent;
  g.nx = nx;
  g.ny = ny;
  g.nz = nz;
  return g;
}

VoxelGrid VoxelGrid::cube(const Eigen::Vector3d& center, double edge, int n) {
  return make(center, Eigen::Vector3d::Constant(edge), n, n, n);
}

bool VoxelGrid::same_geometry(const VoxelGrid& o) const {
  return nx == o.nx && ny == o.ny && nz == o.nz && (center - o.center).norm() == 0.0 &&
         (extent - o.extent).norm() == 0.0;
}

void MaterialGrid::validate() const {
  if (eps_r.size() != sigma.size())
    throw std::invalid_argument("MaterialGrid: eps_r/sigma size mismatch");
  for (double e : eps_r)
    if (!(e >= 1.0) || !std::isfinite(e))
      throw std::invalid_argument("MaterialGrid: eps_r must be >= 1 and finite");
  for (double s : sigma)
    if (!(s >= 0.0) || !std::isfinite(s))
      throw std::invalid_argument("MaterialGrid: sigma must be >= 0 and finite");
}

double ContrastSlice::max_abs() const {
  double m = 0.0;
  for (const cplx& c : chi) m = std::max(m, std::abs(c));
  return m;
}

bool ContrastSlice::all_zero() const {
  return std::all_of(chi.begin(), chi.end(), [](const cplx& c) { return c == cplx(0.0, 0.0); });
}

ContrastSlice contrast_from_materials(const MaterialGrid& mat, const FrequencyPlan& plan,
                                      int k_index) {
  if (k_index < 0 || k_index >= plan.K)
    throw std::out_of_range("contrast_from_materials: subcarrier index out of range");
  mat.validate();
  double w = plan.omega[k_index];
  ContrastSlice out;
  out.chi.resize(mat.size());
  for (std::size_t v = 0; v < mat.size(); ++v)
    out.chi[v] = cplx(mat.eps_r[v] - 1.0, -mat.sigma[v] / (kVacuumEps * w));
  return out;
}

AntennaArray AntennaArray::ula(int n, const Eigen::Vector3d& center,
                               const Eigen::Vector3d& axis, double spacing,
                               const Eigen::Vector3d& polarization, double gain) {
  if (n <= 0) throw std::invalid_argument("AntennaArray: element count must be positive");
  if (!(spacing > 0.0) && n > 1)
    throw std::invalid_argument("AntennaArray: spacing must be positive");
  if (axis.norm() == 0.0) throw std::invalid_argument("AntennaArray: zero axis");
  AntennaArray a;
  a.positions.resize(n, 3);
  Eigen::Vector3d u = axis.normalized();
  for (int i = 0; i < n; ++i)
    a.positions.row(i) =
        (center + (static_cast<double>(i) - 0.5 * (n - 1)) * spacing * u).transpose();
  a.polarization = polarization.normalized();
  a.gain = gain;
  a.validate();
  return a;
}

void AntennaArray::validate() const {
  if (positions.rows() == 0) throw std::invalid_argument("AntennaArray: empty array");
  if (std::abs(polarization.norm() - 1.0) > 1e-12)
    throw std::invalid_argument("AntennaArray: polarization must be unit norm");
  for (int i = 0; i < positions.rows(); ++i)
    for (int j = i + 1; j < positions.rows(); ++j)
      if ((positions.row(i) - positions.row(j)).norm() == 0.0)
        throw std::invalid_argument("AntennaArray: duplicate element positions");
}

double FieldGrid::norm() const {
  double s = 0.0;
  for (const cplx& c : data) s += std::norm(c);
  return std::sqrt(s);
}

bool FieldGrid::finite() const {
  for (const cplx& c : data)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) return false;
  return true;
}

double field_distance(const FieldGrid& a, const FieldGrid& b) {
  if (a.data.size() != b.data.size())
    throw std::invalid_argument("field_distance: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::norm(a.data[i] - b.data[i]);
  return std::sqrt(s);
}

} // namespace embridge::em
