#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embridge/channel.hpp"
#include "embridge/nn.hpp"
#include "embridge/pointcloud.hpp"

namespace embridge::ae {

// Target position embedded channel-wise: D_p/3 sinusoidal channels per
// coordinate, each constant across the N_r x N_t plane.
nn::PlaneStack positional_embedding(const Eigen::Vector3d& position, int D_p, int N_r,
                                    int N_t);

struct AeSpec {
  int K = 4, N_r = 8, N_t = 8, M = 64, D_p = 48;
  // Compensate geometric spreading by scaling inputs with ||position||^2
  // before encoding (undone after decoding); keeps far targets in the same
  // numeric range as near ones.
  bool range_gain = true;

  void validate() const;
};

struct AeSample {
  chan::ChannelTensor H;
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
};

struct AeTrainOptions {
  int epochs = 60;
  int batch = 32;
  double lr = 1e-3;
  std::uint64_t seed = 0;
  // Optional receiver-noise augmentation of training inputs; quiet NaN = off.
  double noise_snr_db = std::numeric_limits<double>::quiet_NaN();
  double divergence_factor = 10.0;
  // Epochs already completed before this call (resume). RNG streams key on
  // the absolute epoch index, so a resumed run replays the uninterrupted one
  // when parameters and optimizer state were restored.
  int first_epoch = 0;
};

struct AeEpochRow {
  int epoch = 0;
  double train_nmse_db = 0.0;
  double val_nmse_db = 0.0;
};

struct AeTrainResult {
  std::vector<AeEpochRow> history;
  bool diverged = false;
  std::string message;
  double final_val_nmse_db = 0.0;
};

// Channel <-> latent autoencoder. The encoder splits a channel tensor into
// real/imaginary planes, concatenates the positional embedding, and runs a
// strided conv stack down to a 5M-vector reshaped to M x 5. The decoder
// mirrors it with transposed convolutions, re-concatenates the positional
// embedding at full plane resolution, and recombines to a complex tensor.
class AutoEncoder {
 public:
  AutoEncoder(const AeSpec& spec, std::uint64_t seed);

  pc::PointCloud5D encode(const chan::ChannelTensor& H, const Eigen::Vector3d& position);
  chan::ChannelTensor decode(const pc::PointCloud5D& Z, const Eigen::Vector3d& position);

  // Mean linear-scale NMSE of decode(encode(H)) over a set.
  double eval_nmse_linear(const std::vector<AeSample>& samples);

  // resume_adam: externally held optimizer state for resumed runs (already
  // loaded, lr set by the caller); nullptr trains with a fresh internal one.
  AeTrainResult train(const std::vector<AeSample>& train_set,
                      const std::vector<AeSample>& val_set, const AeTrainOptions& opts,
                      nn::AdamState* resume_adam = nullptr);

  std::vector<nn::Param*> params();       // trainable
  std::vector<nn::Param*> state_params(); // trainable + range-gain calibration
  const AeSpec& spec() const { return spec_; }
  double calibration() const { return c0_.value(0, 0); }
  void set_calibration(double c0);

  // Single-sample training path, exposed for gradient checking: forward to
  // the compensated output planes, then backward from their cotangent.
  nn::PlaneStack forward_cached(const chan::ChannelTensor& H, const Eigen::Vector3d& position);
  void backward_cached(const nn::PlaneStack& d_out);

 private:
  nn::PlaneStack build_input(const chan::ChannelTensor& H, const Eigen::Vector3d& position,
                             double comp) const;
  double compensation(const Eigen::Vector3d& position) const;
  Eigen::MatrixXd encode_cached(const nn::PlaneStack& input);
  nn::PlaneStack decode_cached(const Eigen::MatrixXd& Z, const Eigen::Vector3d& position);

  AeSpec spec_;
  int stages_ = 0;

  nn::Conv2d enc_transfer_;
  std::vector<nn::Conv2d> enc_down_;
  std::vector<nn::PlaneSoftplus> enc_acts_;
  nn::PlaneSoftplus enc_transfer_act_;
  nn::AvgPool2d enc_pool_;
  nn::Dense enc_head_;

  nn::Dense dec_head_;
  std::vector<nn::ConvT2d> dec_up_;
  std::vector<nn::PlaneSoftplus> dec_acts_;
  nn::Conv2d dec_final_;

  nn::Param c0_;  // range-gain calibration, set from the training set
};

} // namespace embridge::ae
