#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embridge/autoencoder.hpp"
#include "embridge/channel.hpp"
#include "embridge/nn.hpp"
#include "embridge/pointcloud.hpp"

namespace embridge::dsb {

// Per-step noise scales gamma_1..gamma_N (gamma(i) is 1-based).
struct GammaSchedule {
  std::vector<double> g;

  // Triangle profile: linear rise lo -> hi over the first half, peak at
  // i = N/2, linear fall back to lo at i = N.
  static GammaSchedule triangle(int N, double lo = 0.001, double hi = 0.05);
  static GammaSchedule constant(int N, double value); // value 0 = test mode

  int N() const { return static_cast<int>(g.size()); }
  double gamma(int i) const { return g.at(static_cast<std::size_t>(i) - 1); }
  void validate() const; // finite, non-negative, non-empty
};

// Markov-step network: apply(i, X) = X + (1/N) * core(i, X), with core a
// pointwise concatsquash MLP over rows conditioned on the sinusoidal
// embedding of i/N. The residual form makes the initial map near-identity
// and lets flow-matching train core() directly on endpoint displacements.
class BridgeNet {
 public:
  BridgeNet(const std::string& name, int d, const std::vector<int>& hidden, int N,
            std::uint64_t seed, int ctx_width = 32);

  Eigen::MatrixXd apply(int i, const Eigen::MatrixXd& X);
  Eigen::MatrixXd apply_backward(const Eigen::MatrixXd& dY);

  // Displacement head without the residual skip; rows of X may carry
  // different timesteps (one entry of is per row-block of size block_rows).
  Eigen::MatrixXd core(const std::vector<int>& is, const Eigen::MatrixXd& X,
                       int block_rows);
  Eigen::MatrixXd core(int i, const Eigen::MatrixXd& X);
  Eigen::MatrixXd core_backward(const Eigen::MatrixXd& dY);

  std::vector<nn::Param*> params();
  int d() const { return d_; }
  int N() const { return N_; }

 private:
  Eigen::MatrixXd context_rows(const std::vector<int>& is, Eigen::Index rows,
                               int block_rows) const;
  nn::CsMlp mlp_;
  int d_ = 0, N_ = 0, ctx_width_ = 32;
};

enum class Direction { forward, backward };

// Trajectory X_0..X_N, each state the same shape.
struct BridgeState {
  std::vector<Eigen::MatrixXd> X;
  Direction direction = Direction::forward;

  const Eigen::MatrixXd& start() const { return X.front(); }
  const Eigen::MatrixXd& end() const { return X.back(); }
};

using StepFn = std::function<Eigen::MatrixXd(int, const Eigen::MatrixXd&)>;

// X_{i+1} = F(i, X_i) + sqrt(2 gamma_{i+1}) eps, i = 0..N-1.
BridgeState forward_rollout(const StepFn& F, const GammaSchedule& sched,
                            const Eigen::MatrixXd& X0, std::uint64_t seed,
                            std::uint64_t stream_index = 0);
BridgeState forward_rollout(BridgeNet& F, const GammaSchedule& sched,
                            const Eigen::MatrixXd& X0, std::uint64_t seed,
                            std::uint64_t stream_index = 0);

// X_{i-1} = B(i, X_i) + sqrt(2 gamma_i) eps, i = N..1; the i=1 step omits the
// noise unless last_step_noiseless is false.
BridgeState backward_rollout(const StepFn& B, const GammaSchedule& sched,
                             const Eigen::MatrixXd& XN, std::uint64_t seed,
                             std::uint64_t stream_index = 0,
                             bool last_step_noiseless = true);
BridgeState backward_rollout(BridgeNet& B, const GammaSchedule& sched,
                             const Eigen::MatrixXd& XN, std::uint64_t seed,
                             std::uint64_t stream_index = 0,
                             bool last_step_noiseless = true);

struct FmOptions {
  int rounds = 8;
  int steps_per_round = 250;
  int batch = 128; // trajectories per step
  double lr = 1e-3;
  std::uint64_t seed = 0;
  double divergence_factor = 10.0;
  // Endpoint coupling: false draws data and prior independently; true pairs
  // index-aligned samples (the pipeline pairs each cloud with its own
  // channel latent).
  bool paired = false;
};

struct FmResult {
  std::vector<double> round_loss; // mean displacement-regression loss per round
  bool diverged = false;
  std::string message;
};

// Flow-matching initialization: draws independently coupled endpoint pairs,
// interpolates X_i = (1-i/N) X_0 + (i/N) X_N at a uniform i per trajectory,
// and regresses core(i, X_i) onto X_N - X_0.
FmResult fm_pretrain(BridgeNet& F, const std::vector<Eigen::MatrixXd>& data,
                     const std::vector<Eigen::MatrixXd>& prior, const FmOptions& opts);

struct DsbTrainOptions {
  int epochs = 10;          // IPF passes (one backward + one forward half-epoch each)
  int steps_per_half = 150; // Adam steps per half-epoch
  int batch = 64;           // trajectories per step
  double lr = 1e-3;
  std::uint64_t seed = 0;
  bool last_step_noiseless = true;
  double divergence_factor = 10.0;
  // Early stop of a half-epoch when the trailing-window mean loss stops
  // improving by more than plateau_rel relative.
  int plateau_window = 25;
  double plateau_rel = 1e-3;
};

struct DsbHistoryRow {
  int epoch = 0;
  Direction direction = Direction::backward;
  double mean_loss = 0.0;
  double val_metric = std::numeric_limits<double>::quiet_NaN();
};

struct DsbTrainResult {
  std::vector<DsbHistoryRow> history;
  bool diverged = false;
  std::string message;
};

// One IPF half-epoch of backward training: forward rollouts from data
// samples, regression of B(i+1, X_{i+1}) onto X_i over every transition of
// each sampled trajectory. Returns the mean loss.
double train_backward_epoch(BridgeNet& F, BridgeNet& B, const GammaSchedule& sched,
                            const std::vector<Eigen::MatrixXd>& data,
                            nn::AdamState& adam, const DsbTrainOptions& opts,
                            std::uint64_t epoch_index);

// Mirror: backward rollouts from prior samples, F(i, X_i) regressed onto
// X_{i+1}.
double train_forward_epoch(BridgeNet& B, BridgeNet& F, const GammaSchedule& sched,
                           const std::vector<Eigen::MatrixXd>& prior,
                           nn::AdamState& adam, const DsbTrainOptions& opts,
                           std::uint64_t epoch_index);

// Alternating IPF training (backward half-epoch then forward half-epoch per
// epoch). F must already be flow-matching pretrained. Checkpoints both nets
// after each good half-epoch when checkpoint_dir is non-empty; on divergence
// restores the last good parameters and reports.
DsbTrainResult dsb_train(BridgeNet& F, BridgeNet& B, const GammaSchedule& sched,
                         const std::vector<Eigen::MatrixXd>& data,
                         const std::vector<Eigen::MatrixXd>& prior,
                         const DsbTrainOptions& opts,
                         const std::function<double()>& validator = nullptr,
                         const std::string& checkpoint_dir = "");

struct SenseResult {
  pc::PointCloud5D normalized; // bridge output X_0
  pc::PointCloud5D physical;   // denormalized EM point cloud
};

// Scenario 1: channel estimate -> encoder latent -> backward bridge -> EM
// property cloud. Optionally perturbs the deterministic latent start with
// N(0, 2 gamma_N) noise.
SenseResult sense(const chan::ChannelTensor& H_est, const Eigen::Vector3d& position,
                  BridgeNet& B, const GammaSchedule& sched, ae::AutoEncoder& coder,
                  const pc::NormalizationSpec& norm, std::uint64_t seed,
                  bool last_step_noiseless = true, bool perturb_start = false);

// Scenario 2: raw EM cloud -> normalize -> forward bridge -> latent ->
// decoded channel (no pilots involved).
chan::ChannelTensor reconstruct(const pc::PointCloud5D& cloud_raw,
                                const Eigen::Vector3d& position, BridgeNet& F,
                                const GammaSchedule& sched, ae::AutoEncoder& coder,
                                const pc::NormalizationSpec& norm, std::uint64_t seed);

// Squared energy distance between two sample sets (rows = samples): the
// statistic 2 E|x-y| - E|x-x'| - E|y-y'| with unbiased within-set means.
double energy_distance_sq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

} // namespace embridge::dsb
