#include "embridge/scattering.hpp"

#include "embridge/green.hpp"

namespace embridge::em {

FieldGrid incident_field(const AntennaArray& tx, const Eigen::VectorXcd& w,
                         const VoxelGrid& grid, double k_wav) {
  if (w.size() != tx.size()) throw std::invalid_argument("incident_field: weight length");
  std::size_t nvox = grid.size();
  FieldGrid E(nvox);
  Eigen::Vector3cd pol = tx.polarization.cast<cplx>();
  for (int j = 0; j < tx.size(); ++j) {
    if (w(j) == cplx(0.0, 0.0)) continue;
    Eigen::Vector3d rj = tx.position(j);
    for (std::size_t v = 0; v < nvox; ++v) {
      Eigen::Vector3cd e;
      try {
        e = dyadic_green(grid.voxel_center(v), rj, k_wav) * pol;
      } catch (const std::domain_error&) {
        throw std::domain_error("incident_field: voxel " + std::to_string(v) +
                                " coincides with transmit element " + std::to_string(j));
      }
      E.at(0, v) += w(j) * e(0);
      E.at(1, v) += w(j) * e(1);
      E.at(2, v) += w(j) * e(2);
    }
  }
  return E;
}

Eigen::Vector3cd scattered_field_at(const Eigen::Vector3d& rx_point, const ContrastSlice& chi,
                                    const FieldGrid& E_tot, const VoxelGrid& grid,
                                    double k_wav) {
  std::size_t nvox = grid.size();
  if (chi.size() != nvox || E_tot.nvox != nvox)
    throw std::invalid_argument("scattered_field_at: shape mismatch");
  if (grid.contains(rx_point))
    throw std::domain_error("scattered_field_at: observation point inside the target region");
  double k2dv = k_wav * k_wav * grid.voxel_volume();
  Eigen::Vector3cd acc = Eigen::Vector3cd::Zero();
  for (std::size_t v = 0; v < nvox; ++v) {
    if (chi.chi[v] == cplx(0.0, 0.0)) continue;
    acc += dyadic_green(rx_point, grid.voxel_center(v), k_wav) * (chi.chi[v] * E_tot.vec(v));
  }
  return k2dv * acc;
}

chan::ChannelTensor synthesize_channel(const MaterialGrid& mat, const VoxelGrid& grid,
                                       const AntennaArray& tx, const AntennaArray& rx,
                                       const FrequencyPlan& plan, KernelCache& kernels,
                                       const SolveOptions& opts) {
  if (mat.size() != grid.size())
    throw std::invalid_argument("synthesize_channel: material/grid size mismatch");
  for (int n = 0; n < tx.size(); ++n)
    if (grid.contains(tx.position(n)))
      throw std::invalid_argument("synthesize_channel: transmit element inside target region");
  for (int n = 0; n < rx.size(); ++n)
    if (grid.contains(rx.position(n)))
      throw std::invalid_argument("synthesize_channel: receive element inside target region");

  chan::ChannelTensor H = chan::ChannelTensor::zeros(plan.K, rx.size(), tx.size());
  Eigen::Vector3cd q = rx.polarization.cast<cplx>();
  for (int k = 0; k < plan.K; ++k) {
    ContrastSlice chi = contrast_from_materials(mat, plan, k);
    if (chi.all_zero()) continue;  // no scatterer: echo channel is zero
    auto kernel = kernels.get(grid, plan.k[k]);
    for (int j = 0; j < tx.size(); ++j) {
      Eigen::VectorXcd w = Eigen::VectorXcd::Zero(tx.size());
      w(j) = cplx(1.0, 0.0);
      FieldGrid E_inc = incident_field(tx, w, grid, plan.k[k]);
      FieldGrid E_tot;
      try {
        E_tot = solve_total_field(chi, E_inc, *kernel, opts);
      } catch (const SolverError& e) {
        throw SolverError("synthesize_channel: subcarrier " + std::to_string(k) +
                              ", transmit element " + std::to_string(j) + ": " + e.what(),
                          e.iterations, e.residual);
      }
      for (int n = 0; n < rx.size(); ++n) {
        Eigen::Vector3cd es =
            scattered_field_at(rx.position(n), chi, E_tot, grid, plan.k[k]);
        // Receive projection without conjugation: y_n = gain * q^T E_s.
        H.at(k, n, j) = rx.gain * (q(0) * es(0) + q(1) * es(1) + q(2) * es(2));
      }
    }
  }
  return H;
}

} // namespace embridge::em
