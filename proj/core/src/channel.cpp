#include "embridge/channel.hpp"

#include <cmath>

#include "embridge/rng.hpp"

namespace embridge::chan {

ChannelTensor ChannelTensor::zeros(int K, int N_r, int N_t, ChannelRole role) {
  if (K <= 0 || N_r <= 0 || N_t <= 0)
    throw std::invalid_argument("ChannelTensor: dimensions must be positive");
  ChannelTensor t;
  t.K = K;
  t.N_r = N_r;
  t.N_t = N_t;
  t.role = role;
  t.data.assign(static_cast<std::size_t>(K) * N_r * N_t, cplx(0.0, 0.0));
  return t;
}

Eigen::MatrixXcd ChannelTensor::slice(int k) const {
  if (k < 0 || k >= K) throw std::out_of_range("ChannelTensor::slice: bad subcarrier");
  Eigen::MatrixXcd m(N_r, N_t);
  for (int r = 0; r < N_r; ++r)
    for (int c = 0; c < N_t; ++c) m(r, c) = at(k, r, c);
  return m;
}

void ChannelTensor::set_slice(int k, const Eigen::MatrixXcd& m) {
  if (k < 0 || k >= K) throw std::out_of_range("ChannelTensor::set_slice: bad subcarrier");
  if (m.rows() != N_r || m.cols() != N_t)
    throw std::invalid_argument("ChannelTensor::set_slice: shape mismatch");
  for (int r = 0; r < N_r; ++r)
    for (int c = 0; c < N_t; ++c) at(k, r, c) = m(r, c);
}

double ChannelTensor::norm() const {
  double s = 0.0;
  for (const cplx& c : data) s += std::norm(c);
  return std::sqrt(s);
}

bool ChannelTensor::finite() const {
  for (const cplx& c : data)
    if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) return false;
  return true;
}

PilotMatrix make_pilots(PilotKind kind, int N_t, int I, double power,
                        const Eigen::VectorXcd& steer) {
  if (N_t <= 0 || I <= 0) throw std::invalid_argument("make_pilots: dimensions must be positive");
  if (I < N_t) throw std::invalid_argument("make_pilots: need I >= N_t symbols");
  if (!(power > 0.0)) throw std::invalid_argument("make_pilots: power must be positive");

  // Rows of the I-point DFT matrix: orthogonal with norm sqrt(I), scaled so
  // W W^H = power * I exactly.
  Eigen::MatrixXcd W(N_t, I);
  double rownorm = std::sqrt(power / static_cast<double>(I));
  for (int n = 0; n < N_t; ++n)
    for (int i = 0; i < I; ++i) {
      double phase = -2.0 * kPi * static_cast<double>(n) * i / I;
      W(n, i) = rownorm * std::exp(cplx(0.0, phase));
    }

  if (kind == PilotKind::target_steered) {
    if (steer.size() != N_t)
      throw std::invalid_argument("make_pilots: steered pilots need a length-N_t steering vector");
    double n = steer.norm();
    if (n == 0.0) throw std::invalid_argument("make_pilots: zero steering vector");
    Eigen::VectorXcd a = steer / n;
    // Blend a rank-one steering component into every symbol, then restore
    // orthonormal rows via the polar factor (closest row-orthonormal matrix).
    Eigen::MatrixXcd B = W / std::sqrt(power) +
                         a * Eigen::RowVectorXcd::Constant(I, cplx(1.0, 0.0) / std::sqrt(double(I)));
    Eigen::JacobiSVD<Eigen::MatrixXcd> svd(B, Eigen::ComputeThinU | Eigen::ComputeThinV);
    W = std::sqrt(power) * svd.matrixU() * svd.matrixV().adjoint();
  }

  PilotMatrix p;
  p.W = std::move(W);
  p.kind = kind;
  p.power = power;
  return p;
}

NoiseSpec snr_to_sigma(const ChannelTensor& H, const PilotMatrix& W, double snr_db) {
  if (W.W.rows() != H.N_t) throw std::invalid_argument("snr_to_sigma: pilot/channel mismatch");
  NoiseSpec spec;
  spec.snr_db = snr_db;
  spec.sigma.resize(H.K);
  double denom = static_cast<double>(H.N_r) * static_cast<double>(W.W.cols()) *
                 std::pow(10.0, snr_db / 10.0);
  for (int k = 0; k < H.K; ++k) {
    double sig_energy = (H.slice(k) * W.W).squaredNorm();
    if (!(sig_energy > 0.0))
      throw std::invalid_argument("snr_to_sigma: zero signal energy on subcarrier " +
                                  std::to_string(k));
    spec.sigma[k] = std::sqrt(sig_energy / denom);
  }
  return spec;
}

Eigen::MatrixXcd transmit(const Eigen::MatrixXcd& H_k, const Eigen::MatrixXcd& W_k,
                          double sigma, std::uint64_t seed, std::uint64_t stream_index) {
  if (H_k.cols() != W_k.rows()) throw std::invalid_argument("transmit: shape mismatch");
  if (!(sigma >= 0.0)) throw std::invalid_argument("transmit: sigma must be non-negative");
  Eigen::MatrixXcd Y = H_k * W_k;
  if (sigma > 0.0) {
    auto eng = rng::stream(seed, "chan-noise", stream_index);
    double var = sigma * sigma;
    // Row-major draw order is part of the determinism contract.
    for (Eigen::Index r = 0; r < Y.rows(); ++r)
      for (Eigen::Index c = 0; c < Y.cols(); ++c) Y(r, c) += rng::cnormal(eng, var);
  }
  return Y;
}

Eigen::MatrixXcd ls_estimate(const Eigen::MatrixXcd& Y_k, const Eigen::MatrixXcd& W_k) {
  if (Y_k.cols() != W_k.cols()) throw std::invalid_argument("ls_estimate: shape mismatch");
  Eigen::MatrixXcd gram = W_k * W_k.adjoint();
  Eigen::FullPivLU<Eigen::MatrixXcd> lu(gram);
  if (!lu.isInvertible()) throw std::invalid_argument("ls_estimate: singular pilot Gram matrix");
  return Y_k * W_k.adjoint() * lu.inverse();
}

ChannelTensor estimate_channel(const ChannelTensor& H, const PilotMatrix& W, double snr_db,
                               std::uint64_t seed) {
  NoiseSpec spec = snr_to_sigma(H, W, snr_db);
  std::vector<Eigen::MatrixXcd> slices;
  slices.reserve(H.K);
  for (int k = 0; k < H.K; ++k) {
    Eigen::MatrixXcd Y = transmit(H.slice(k), W.W, spec.sigma[k], seed,
                                  static_cast<std::uint64_t>(k));
    slices.push_back(ls_estimate(Y, W.W));
  }
  return stack_channels(slices, ChannelRole::estimated);
}

ChannelTensor stack_channels(const std::vector<Eigen::MatrixXcd>& slices, ChannelRole role) {
  if (slices.empty()) throw std::invalid_argument("stack_channels: no slices");
  int N_r = static_cast<int>(slices[0].rows());
  int N_t = static_cast<int>(slices[0].cols());
  for (const auto& s : slices)
    if (s.rows() != N_r || s.cols() != N_t)
      throw std::invalid_argument("stack_channels: inconsistent slice shapes");
  ChannelTensor t = ChannelTensor::zeros(static_cast<int>(slices.size()), N_r, N_t, role);
  for (int k = 0; k < t.K; ++k) t.set_slice(k, slices[k]);
  return t;
}

std::vector<Eigen::MatrixXcd> unstack_channels(const ChannelTensor& H) {
  std::vector<Eigen::MatrixXcd> out;
  out.reserve(H.K);
  for (int k = 0; k < H.K; ++k) out.push_back(H.slice(k));
  return out;
}

double nmse_db(const ChannelTensor& H_ref, const ChannelTensor& H_test) {
  if (H_ref.K != H_test.K || H_ref.N_r != H_test.N_r || H_ref.N_t != H_test.N_t)
    throw std::invalid_argument("nmse_db: shape mismatch");
  double ref = 0.0, err = 0.0;
  for (std::size_t i = 0; i < H_ref.data.size(); ++i) {
    ref += std::norm(H_ref.data[i]);
    err += std::norm(H_ref.data[i] - H_test.data[i]);
  }
  if (!(ref > 0.0)) throw std::invalid_argument("nmse_db: zero reference norm");
  return ratio_to_db(err / ref);
}

double nmse_db(const Eigen::MatrixXcd& ref, const Eigen::MatrixXcd& test) {
  if (ref.rows() != test.rows() || ref.cols() != test.cols())
    throw std::invalid_argument("nmse_db: shape mismatch");
  double r = ref.squaredNorm();
  if (!(r > 0.0)) throw std::invalid_argument("nmse_db: zero reference norm");
  return ratio_to_db((ref - test).squaredNorm() / r);
}

} // namespace embridge::chan
