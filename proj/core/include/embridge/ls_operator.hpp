#pragma once

#include <array>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <Eigen/Dense>

#include "embridge/em.hpp"

namespace embridge::em {

// Gamma(m, m'): dyadic Green kernel integrated over the source voxel —
// midpoint rule G(r_m, r_m') * dV off the diagonal, volume-equivalent-sphere
// closed form on it. The discretized total-field operator is
//   A(E)(r_m) = E(r_m) - k^2 sum_m' Gamma(m, m') chi(m') E(m').
//
// Gamma depends only on the voxel offset r_m - r_m', so its application is a
// block-Toeplitz convolution evaluated with zero-padded FFTs. One kernel is
// built per (grid geometry, wavenumber) and can be shared across solves.
class GreenKernel {
 public:
  GreenKernel(const VoxelGrid& grid, double k_wav);
  ~GreenKernel();
  GreenKernel(const GreenKernel&) = delete;
  GreenKernel& operator=(const GreenKernel&) = delete;

  double k_wav() const { return k_; }
  const VoxelGrid& grid() const { return grid_; }

  // out(m) = sum_m' Gamma(m, m') s(m'). Thread-safe (serializes on an
  // internal workspace).
  void convolve(const FieldGrid& s, FieldGrid& out) const;

 private:
  VoxelGrid grid_;
  double k_;
  int px_, py_, pz_;     // zero-padded transform dims
  std::size_t pvox_;
  // Unique components of the symmetric 3x3 kernel, frequency domain:
  // xx, yy, zz, xy, xz, yz.
  std::array<std::vector<cplx>, 6> spectra_;
  struct Fft;
  std::unique_ptr<Fft> fft_;
  mutable std::mutex mutex_;
};

// Applies the total-field operator A to E for one subcarrier.
FieldGrid apply_ls_operator(const ContrastSlice& chi, const FieldGrid& E,
                            const GreenKernel& kernel);

// Convenience overload building a throwaway kernel.
FieldGrid apply_ls_operator(const ContrastSlice& chi, const FieldGrid& E,
                            const VoxelGrid& grid, double k_wav);

// Dense assembly of the identical discretization (oracle path). Row/column
// index = 3*voxel + component. Limited to grids of at most 8^3 voxels.
Eigen::MatrixXcd assemble_dense_system(const ContrastSlice& chi, const VoxelGrid& grid,
                                       double k_wav);

// Interleaved (3*voxel + component) flattening used by the dense path.
Eigen::VectorXcd field_to_vector(const FieldGrid& E);
FieldGrid vector_to_field(const Eigen::VectorXcd& x);

// Shared kernel store keyed by grid geometry and wavenumber.
class KernelCache {
 public:
  std::shared_ptr<const GreenKernel> get(const VoxelGrid& grid, double k_wav);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::array<double, 10>, std::shared_ptr<const GreenKernel>> cache_;
};

} // namespace embridge::em
