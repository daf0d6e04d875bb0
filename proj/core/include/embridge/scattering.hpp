#pragma once

#include "embridge/channel.hpp"
#include "embridge/solver.hpp"

namespace embridge::em {

// E_inc(r) = sum_j w_j G(r, r_tx_j) * pol_tx (unit transmit constant).
// Throws if a voxel center coincides with an antenna element.
FieldGrid incident_field(const AntennaArray& tx, const Eigen::VectorXcd& w,
                         const VoxelGrid& grid, double k_wav);

// E_s(r_rx) = k^2 sum_v G(r_rx, r_v) chi(v) E_tot(v) dV, direct summation.
// The observation point must lie outside the voxelized region.
Eigen::Vector3cd scattered_field_at(const Eigen::Vector3d& rx_point, const ContrastSlice& chi,
                                    const FieldGrid& E_tot, const VoxelGrid& grid,
                                    double k_wav);

// Ground-truth echo channel: column j of H_k is the receive-polarization
// projection of the scattered field when transmit element j alone is driven
// (incident field -> total-field solve -> scattered field -> gain * q^T E_s).
// H_k is the exact linear map w -> y; solver failures are reported with the
// (subcarrier, transmit element) that caused them.
chan::ChannelTensor synthesize_channel(const MaterialGrid& mat, const VoxelGrid& grid,
                                       const AntennaArray& tx, const AntennaArray& rx,
                                       const FrequencyPlan& plan, KernelCache& kernels,
                                       const SolveOptions& opts = {});

} // namespace embridge::em
