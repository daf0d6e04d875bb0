#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "embridge/common.hpp"

namespace embridge::chan {

enum class ChannelRole { truth, estimated, reconstructed };

// Complex K x N_r x N_t sensing channel, k-major storage:
// data[(k * N_r + nr) * N_t + nt].
struct ChannelTensor {
  int K = 0, N_r = 0, N_t = 0;
  std::vector<cplx> data;
  ChannelRole role = ChannelRole::truth;

  static ChannelTensor zeros(int K, int N_r, int N_t, ChannelRole role = ChannelRole::truth);

  std::size_t size() const { return data.size(); }
  cplx& at(int k, int nr, int nt) {
    return data[(static_cast<std::size_t>(k) * N_r + nr) * N_t + nt];
  }
  const cplx& at(int k, int nr, int nt) const {
    return data[(static_cast<std::size_t>(k) * N_r + nr) * N_t + nt];
  }
  Eigen::MatrixXcd slice(int k) const;
  void set_slice(int k, const Eigen::MatrixXcd& m);
  double norm() const;
  bool finite() const;
};

enum class PilotKind { unitary_comb, target_steered };

// Pilot symbols over I time slots: W is N_t x I. For unitary_comb,
// W W^H = power * I_{N_t} exactly.
struct PilotMatrix {
  Eigen::MatrixXcd W;
  PilotKind kind = PilotKind::unitary_comb;
  double power = 1.0;
};

// Unitary-comb pilots are scaled DFT rows; target-steered pilots blend in a
// rank-one steering component and re-orthonormalize, biasing transmit energy
// toward `steer` while keeping the Gram matrix exactly power * I.
PilotMatrix make_pilots(PilotKind kind, int N_t, int I, double power,
                        const Eigen::VectorXcd& steer = Eigen::VectorXcd());

struct NoiseSpec {
  std::vector<double> sigma;  // per-subcarrier noise standard deviation
  double snr_db = 0.0;
};

// Receiver SNR averaged over antennas and symbols:
// sigma_k^2 = ||H_k W_k||_F^2 / (N_r * I * 10^(snr/10)).
NoiseSpec snr_to_sigma(const ChannelTensor& H, const PilotMatrix& W, double snr_db);

// Y_k = H_k W_k + N_k with i.i.d. circular complex Gaussian noise of variance
// sigma^2 per entry; the stream index keeps parallel per-subcarrier draws
// reproducible.
Eigen::MatrixXcd transmit(const Eigen::MatrixXcd& H_k, const Eigen::MatrixXcd& W_k,
                          double sigma, std::uint64_t seed, std::uint64_t stream_index);

// Least-squares estimate Y W^H (W W^H)^{-1}.
Eigen::MatrixXcd ls_estimate(const Eigen::MatrixXcd& Y_k, const Eigen::MatrixXcd& W_k);

// Full pilot round trip per subcarrier at the given SNR; returns an
// estimated-role tensor.
ChannelTensor estimate_channel(const ChannelTensor& H, const PilotMatrix& W, double snr_db,
                               std::uint64_t seed);

ChannelTensor stack_channels(const std::vector<Eigen::MatrixXcd>& slices,
                             ChannelRole role = ChannelRole::estimated);
std::vector<Eigen::MatrixXcd> unstack_channels(const ChannelTensor& H);

// 10 log10(||ref - test||_F^2 / ||ref||_F^2); identical tensors return the
// -300 dB floor sentinel.
double nmse_db(const ChannelTensor& H_ref, const ChannelTensor& H_test);
double nmse_db(const Eigen::MatrixXcd& ref, const Eigen::MatrixXcd& test);

} // namespace embridge::chan
