#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "embridge/common.hpp"

namespace embridge::em {

// Frequency comb: f_k = f_c + (k - (K+1)/2) * delta_f for k = 1..K, so the
// comb is centered on the carrier.
struct FrequencyPlan {
  double f_c = 0.0;
  int K = 0;
  double delta_f = 0.0;
  std::vector<double> f;      // Hz, strictly increasing
  std::vector<double> k;      // rad/m, 2*pi*f/c
  std::vector<double> omega;  // rad/s

  static FrequencyPlan centered(double f_c, int K, double delta_f);

  double wavelength(int idx) const { return kSpeedOfLight / f.at(idx); }
  double carrier_wavelength() const { return kSpeedOfLight / f_c; }
};

// Uniform rectangular voxelization of the axis-aligned box region D.
// Voxel linear index: (iz * ny + iy) * nx + ix (x fastest).
struct VoxelGrid {
  Eigen::Vector3d center{0.0, 0.0, 0.0};
  Eigen::Vector3d extent{0.0, 0.0, 0.0};  // full edge lengths, m
  int nx = 0, ny = 0, nz = 0;

  static VoxelGrid make(const Eigen::Vector3d& center, const Eigen::Vector3d& extent,
                        int nx, int ny, int nz);
  static VoxelGrid cube(const Eigen::Vector3d& center, double edge, int n);

  std::size_t size() const { return static_cast<std::size_t>(nx) * ny * nz; }
  Eigen::Vector3d spacing() const {
    return {extent.x() / nx, extent.y() / ny, extent.z() / nz};
  }
  double voxel_volume() const {
    Eigen::Vector3d h = spacing();
    return h.x() * h.y() * h.z();
  }
  std::size_t index(int ix, int iy, int iz) const {
    return (static_cast<std::size_t>(iz) * ny + iy) * nx + ix;
  }
  std::array<int, 3> coords(std::size_t v) const {
    int ix = static_cast<int>(v % nx);
    int iy = static_cast<int>((v / nx) % ny);
    int iz = static_cast<int>(v / (static_cast<std::size_t>(nx) * ny));
    return {ix, iy, iz};
  }
  Eigen::Vector3d lower_corner() const { return center - 0.5 * extent; }
  Eigen::Vector3d voxel_center(int ix, int iy, int iz) const {
    Eigen::Vector3d h = spacing();
    return lower_corner() + Eigen::Vector3d{(ix + 0.5) * h.x(), (iy + 0.5) * h.y(),
                                            (iz + 0.5) * h.z()};
  }
  Eigen::Vector3d voxel_center(std::size_t v) const {
    auto c = coords(v);
    return voxel_center(c[0], c[1], c[2]);
  }
  bool contains(const Eigen::Vector3d& p) const {
    Eigen::Vector3d d = p - center;
    return std::abs(d.x()) <= 0.5 * extent.x() && std::abs(d.y()) <= 0.5 * extent.y() &&
           std::abs(d.z()) <= 0.5 * extent.z();
  }
  bool same_geometry(const VoxelGrid& o) const;
};

// Per-voxel real relative permittivity and conductivity (S/m); background is
// eps_r = 1, sigma = 0.
struct MaterialGrid {
  std::vector<double> eps_r;
  std::vector<double> sigma;

  static MaterialGrid background(std::size_t nvox) {
    MaterialGrid m;
    m.eps_r.assign(nvox, 1.0);
    m.sigma.assign(nvox, 0.0);
    return m;
  }
  std::size_t size() const { return eps_r.size(); }
  void validate() const;
};

// One subcarrier's complex contrast chi(r) = eps_r(r) - j sigma(r)/(eps0 w) - 1.
struct ContrastSlice {
  std::vector<cplx> chi;

  std::size_t size() const { return chi.size(); }
  double max_abs() const;
  bool all_zero() const;
};

ContrastSlice contrast_from_materials(const MaterialGrid& mat, const FrequencyPlan& plan,
                                      int k_index);

// Antenna array with a common polarization unit vector and scalar gain.
struct AntennaArray {
  Eigen::Matrix<double, Eigen::Dynamic, 3> positions;  // N x 3, m
  Eigen::Vector3d polarization{0.0, 0.0, 1.0};
  double gain = 1.0;

  // Elements at center + (i - (N-1)/2) * spacing * axis.
  static AntennaArray ula(int n, const Eigen::Vector3d& center, const Eigen::Vector3d& axis,
                          double spacing, const Eigen::Vector3d& polarization,
                          double gain = 1.0);

  int size() const { return static_cast<int>(positions.rows()); }
  Eigen::Vector3d position(int i) const { return positions.row(i).transpose(); }
  void validate() const;
};

// Complex 3-vector field sampled at voxel centers, stored component-major:
// data[c * nvox + v].
struct FieldGrid {
  std::size_t nvox = 0;
  std::vector<cplx> data;

  FieldGrid() = default;
  explicit FieldGrid(std::size_t n) : nvox(n), data(3 * n, cplx(0.0, 0.0)) {}

  cplx& at(int c, std::size_t v) { return data[static_cast<std::size_t>(c) * nvox + v]; }
  const cplx& at(int c, std::size_t v) const {
    return data[static_cast<std::size_t>(c) * nvox + v];
  }
  Eigen::Vector3cd vec(std::size_t v) const { return {at(0, v), at(1, v), at(2, v)}; }
  void set_vec(std::size_t v, const Eigen::Vector3cd& e) {
    at(0, v) = e(0);
    at(1, v) = e(1);
    at(2, v) = e(2);
  }
  double norm() const;
  bool finite() const;
};

double field_distance(const FieldGrid& a, const FieldGrid& b);  // L2 of difference

} // namespace embridge::em
