#include "embridge/dsb.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "embridge/rng.hpp"

namespace embridge::dsb {

namespace {

std::size_t draw_index(std::mt19937_64& eng, std::size_t size) {
  auto idx = static_cast<std::size_t>(rng::uniform(eng) * static_cast<double>(size));
  return idx >= size ? size - 1 : idx;
}

void add_noise(Eigen::MatrixXd& X, double variance, std::mt19937_64& eng) {
  double s = std::sqrt(variance);
  for (Eigen::Index r = 0; r < X.rows(); ++r)
    for (Eigen::Index c = 0; c < X.cols(); ++c) X(r, c) += s * rng::normal(eng);
}

void check_same_shape(const std::vector<Eigen::MatrixXd>& set, const char* what) {
  if (set.empty()) throw std::invalid_argument(std::string(what) + " set is empty");
  for (const auto& s : set)
    if (s.rows() != set.front().rows() || s.cols() != set.front().cols())
      throw std::invalid_argument(std::string(what) + " samples differ in shape");
}

Eigen::MatrixXd stack_draws(const std::vector<Eigen::MatrixXd>& set,
                            const std::vector<std::size_t>& idx) {
  Eigen::Index m = set.front().rows(), d = set.front().cols();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()) * m, d);
  for (std::size_t b = 0; b < idx.size(); ++b)
    out.middleRows(static_cast<Eigen::Index>(b) * m, m) = set[idx[b]];
  return out;
}

} // namespace

GammaSchedule GammaSchedule::triangle(int N, double lo, double hi) {
  if (N < 2 || N % 2 != 0)
    throw std::invalid_argument("GammaSchedule: triangle profile needs even N >= 2");
  if (!(lo > 0.0) || !(hi >= lo))
    throw std::invalid_argument("GammaSchedule: need 0 < lo <= hi");
  GammaSchedule s;
  s.g.resize(static_cast<std::size_t>(N));
  int half = N / 2;
  for (int i = 1; i <= half; ++i)
    s.g[i - 1] = half == 1 ? hi : lo + (hi - lo) * (i - 1) / (half - 1);
  for (int i = half + 1; i <= N; ++i) s.g[i - 1] = hi - (hi - lo) * (i - half) / half;
  return s;
}

GammaSchedule GammaSchedule::constant(int N, double value) {
  if (N < 1) throw std::invalid_argument("GammaSchedule: N must be positive");
  GammaSchedule s;
  s.g.assign(static_cast<std::size_t>(N), value);
  s.validate();
  return s;
}

void GammaSchedule::validate() const {
  if (g.empty()) throw std::invalid_argument("GammaSchedule: empty schedule");
  for (double v : g)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw std::invalid_argument("GammaSchedule: steps must be finite and >= 0");
}

BridgeNet::BridgeNet(const std::string& name, int d, const std::vector<int>& hidden,
                     int N, std::uint64_t seed, int ctx_width)
    : mlp_(name, d, hidden, d, ctx_width, seed), d_(d), N_(N), ctx_width_(ctx_width) {
  if (d < 1 || N < 1) throw std::invalid_argument("BridgeNet: d and N must be positive");
}

Eigen::MatrixXd BridgeNet::context_rows(const std::vector<int>& is, Eigen::Index rows,
                                        int block_rows) const {
  if (block_rows < 1 || is.empty() ||
      static_cast<Eigen::Index>(is.size()) * block_rows != rows)
    throw std::invalid_argument("BridgeNet: timestep blocks do not cover the rows");
  Eigen::MatrixXd ctx(rows, ctx_width_);
  for (std::size_t b = 0; b < is.size(); ++b) {
    int i = is[b];
    if (i < 0 || i > N_)
      throw std::invalid_argument("BridgeNet: timestep out of range 0..N");
    Eigen::VectorXd emb =
        nn::sinusoidal_embed(static_cast<double>(i) / static_cast<double>(N_), ctx_width_);
    for (int r = 0; r < block_rows; ++r)
      ctx.row(static_cast<Eigen::Index>(b) * block_rows + r) = emb.transpose();
  }
  return ctx;
}

Eigen::MatrixXd BridgeNet::core(const std::vector<int>& is, const Eigen::MatrixXd& X,
                                int block_rows) {
  if (X.cols() != d_) throw std::invalid_argument("BridgeNet: state width != d");
  return mlp_.forward(X, context_rows(is, X.rows(), block_rows));
}

Eigen::MatrixXd BridgeNet::core(int i, const Eigen::MatrixXd& X) {
  return core(std::vector<int>{i}, X, static_cast<int>(X.rows()));
}

Eigen::MatrixXd BridgeNet::core_backward(const Eigen::MatrixXd& dY) {
  return mlp_.backward(dY);
}

Eigen::MatrixXd BridgeNet::apply(int i, const Eigen::MatrixXd& X) {
  return X + core(i, X) / static_cast<double>(N_);
}

Eigen::MatrixXd BridgeNet::apply_backward(const Eigen::MatrixXd& dY) {
  // Scale the cotangent before it enters the core so the accumulated
  // parameter gradients carry the residual-step 1/N factor too.
  return dY + mlp_.backward(dY / static_cast<double>(N_));
}

std::vector<nn::Param*> BridgeNet::params() { return mlp_.params(); }

namespace {

BridgeState rollout_impl(const StepFn& step, const GammaSchedule& sched,
                         const Eigen::MatrixXd& start, std::uint64_t seed,
                         std::uint64_t stream_index, Direction dir,
                         bool last_step_noiseless) {
  sched.validate();
  if (!start.allFinite())
    throw std::invalid_argument("rollout: start state is not finite");
  int N = sched.N();
  BridgeState traj;
  traj.direction = dir;
  traj.X.resize(static_cast<std::size_t>(N) + 1);
  const char* tag = dir == Direction::forward ? "dsb-forward" : "dsb-backward";
  auto eng = rng::stream(seed, tag, stream_index);
  if (dir == Direction::forward) {
    traj.X[0] = start;
    for (int i = 0; i < N; ++i) {
      Eigen::MatrixXd next = step(i, traj.X[static_cast<std::size_t>(i)]);
      add_noise(next, 2.0 * sched.gamma(i + 1), eng);
      if (!next.allFinite())
        throw std::runtime_error("forward rollout produced a non-finite state at step " +
                                 std::to_string(i + 1));
      traj.X[static_cast<std::size_t>(i) + 1] = std::move(next);
    }
  } else {
    traj.X[static_cast<std::size_t>(N)] = start;
    for (int i = N; i >= 1; --i) {
      Eigen::MatrixXd prev = step(i, traj.X[static_cast<std::size_t>(i)]);
      if (!(i == 1 && last_step_noiseless))
        add_noise(prev, 2.0 * sched.gamma(i), eng);
      if (!prev.allFinite())
        throw std::runtime_error("backward rollout produced a non-finite state at step " +
                                 std::to_string(i));
      traj.X[static_cast<std::size_t>(i) - 1] = std::move(prev);
    }
  }
  return traj;
}

} // namespace

BridgeState forward_rollout(const StepFn& F, const GammaSchedule& sched,
                            const Eigen::MatrixXd& X0, std::uint64_t seed,
                            std::uint64_t stream_index) {
  return rollout_impl(F, sched, X0, seed, stream_index, Direction::forward, false);
}

BridgeState forward_rollout(BridgeNet& F, const GammaSchedule& sched,
                            const Eigen::MatrixXd& X0, std::uint64_t seed,
                            std::uint64_t stream_index) {
  if (F.N() != sched.N())
    throw std::invalid_argument("forward_rollout: net and schedule disagree on N");
  return forward_rollout(
      [&F](int i, const Eigen::MatrixXd& X) { return F.apply(i, X); }, sched, X0, seed,
      stream_index);
}

BridgeState backward_rollout(const StepFn& B, const GammaSchedule& sched,
                             const Eigen::MatrixXd& XN, std::uint64_t seed,
                             std::uint64_t stream_index, bool last_step_noiseless) {
  return rollout_impl(B, sched, XN, seed, stream_index, Direction::backward,
                      last_step_noiseless);
}

BridgeState backward_rollout(BridgeNet& B, const GammaSchedule& sched,
                             const Eigen::MatrixXd& XN, std::uint64_t seed,
                             std::uint64_t stream_index, bool last_step_noiseless) {
  if (B.N() != sched.N())
    throw std::invalid_argument("backward_rollout: net and schedule disagree on N");
  return backward_rollout(
      [&B](int i, const Eigen::MatrixXd& X) { return B.apply(i, X); }, sched, XN, seed,
      stream_index, last_step_noiseless);
}

FmResult fm_pretrain(BridgeNet& F, const std::vector<Eigen::MatrixXd>& data,
                     const std::vector<Eigen::MatrixXd>& prior, const FmOptions& opts) {
  check_same_shape(data, "data");
  check_same_shape(prior, "prior");
  if (data.front().rows() != prior.front().rows() ||
      data.front().cols() != prior.front().cols())
    throw std::invalid_argument("fm_pretrain: data and prior shapes differ");
  if (opts.rounds < 1 || opts.steps_per_round < 1 || opts.batch < 1 || !(opts.lr > 0.0))
    throw std::invalid_argument("fm_pretrain: bad options");
  if (opts.paired && data.size() != prior.size())
    throw std::invalid_argument("fm_pretrain: paired coupling needs equal set sizes");

  int M = static_cast<int>(data.front().rows());
  int N = F.N();
  auto ps = F.params();
  nn::AdamState adam;
  adam.lr = opts.lr;
  adam.init(ps);

  FmResult result;
  for (int round = 0; round < opts.rounds; ++round) {
    double acc = 0.0;
    for (int s = 0; s < opts.steps_per_round; ++s) {
      std::uint64_t step_id =
          static_cast<std::uint64_t>(round) * opts.steps_per_round + s;
      auto eng = rng::stream(opts.seed, "fm-batch", step_id);
      std::vector<std::size_t> di(opts.batch), pi(opts.batch);
      std::vector<int> is(opts.batch);
      for (int b = 0; b < opts.batch; ++b) {
        di[b] = draw_index(eng, data.size());
        pi[b] = opts.paired ? di[b] : draw_index(eng, prior.size());
        is[b] = static_cast<int>(draw_index(eng, static_cast<std::size_t>(N)));
      }
      Eigen::MatrixXd X0 = stack_draws(data, di);
      Eigen::MatrixXd XN = stack_draws(prior, pi);
      Eigen::MatrixXd Xi(X0.rows(), X0.cols());
      for (int b = 0; b < opts.batch; ++b) {
        double t = static_cast<double>(is[b]) / static_cast<double>(N);
        Xi.middleRows(static_cast<Eigen::Index>(b) * M, M) =
            (1.0 - t) * X0.middleRows(static_cast<Eigen::Index>(b) * M, M) +
            t * XN.middleRows(static_cast<Eigen::Index>(b) * M, M);
      }
      Eigen::MatrixXd Y = XN - X0;
      for (auto* p : ps) p->zero_grad();
      Eigen::MatrixXd pred = F.core(is, Xi, M);
      Eigen::MatrixXd r = pred - Y;
      double loss = r.squaredNorm() / opts.batch;
      acc += loss;
      F.core_backward(2.0 / opts.batch * r);
      adam.step(ps);
    }
    double mean = acc / opts.steps_per_round;
    result.round_loss.push_back(mean);
    if (!std::isfinite(mean) ||
        mean > opts.divergence_factor * result.round_loss.front()) {
      result.diverged = true;
      result.message = "flow-matching loss diverged in round " + std::to_string(round + 1);
      break;
    }
  }
  return result;
}

namespace {

// Shared IPF half-epoch: rollouts from one side, transition regression of the
// trained net over every step of each sampled trajectory.
double ipf_half_epoch(BridgeNet& frozen, BridgeNet& trained, const GammaSchedule& sched,
                      const std::vector<Eigen::MatrixXd>& endpoints,
                      nn::AdamState& adam, const DsbTrainOptions& opts,
                      std::uint64_t epoch_index, Direction trained_dir) {
  check_same_shape(endpoints, trained_dir == Direction::backward ? "data" : "prior");
  if (opts.steps_per_half < 1 || opts.batch < 1)
    throw std::invalid_argument("dsb training: bad options");
  int N = sched.N();
  int M = static_cast<int>(endpoints.front().rows());
  auto ps = trained.params();
  const char* batch_tag =
      trained_dir == Direction::backward ? "dsb-bwd-batch" : "dsb-fwd-batch";

  double acc = 0.0;
  int done = 0;
  double best_window = std::numeric_limits<double>::infinity();
  double window_acc = 0.0;
  int stalled = 0;
  for (int s = 0; s < opts.steps_per_half; ++s) {
    std::uint64_t step_id =
        epoch_index * static_cast<std::uint64_t>(opts.steps_per_half) + s;
    auto eng = rng::stream(opts.seed, batch_tag, step_id);
    std::vector<std::size_t> idx(opts.batch);
    for (int b = 0; b < opts.batch; ++b) idx[b] = draw_index(eng, endpoints.size());
    Eigen::MatrixXd start = stack_draws(endpoints, idx);

    // Training trajectories keep the Algorithm-2 Gaussian transitions at
    // every step; the noiseless-final-step option concerns generation only.
    BridgeState traj =
        trained_dir == Direction::backward
            ? forward_rollout(frozen, sched, start, opts.seed, step_id)
            : backward_rollout(frozen, sched, start, opts.seed, step_id, false);

    for (auto* p : ps) p->zero_grad();
    double loss = 0.0;
    double scale = 1.0 / (static_cast<double>(opts.batch) * N);
    for (int i = 0; i < N; ++i) {
      Eigen::MatrixXd pred, target;
      if (trained_dir == Direction::backward) {
        pred = trained.apply(i + 1, traj.X[static_cast<std::size_t>(i) + 1]);
        target = traj.X[static_cast<std::size_t>(i)];
      } else {
        pred = trained.apply(i, traj.X[static_cast<std::size_t>(i)]);
        target = traj.X[static_cast<std::size_t>(i) + 1];
      }
      Eigen::MatrixXd r = pred - target;
      loss += r.squaredNorm() * scale;
      trained.apply_backward(2.0 * scale * r);
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("dsb training loss became non-finite at step " +
                               std::to_string(s + 1));
    adam.step(ps);
    acc += loss;
    ++done;

    window_acc += loss;
    if (opts.plateau_window > 0 && (s + 1) % opts.plateau_window == 0) {
      double window = window_acc / opts.plateau_window;
      window_acc = 0.0;
      // Two consecutive windows without a new best: batch noise makes a
      // single flat window a weak signal.
      if (window > best_window * (1.0 - opts.plateau_rel)) {
        if (++stalled >= 2) break;
      } else {
        stalled = 0;
      }
      best_window = std::min(best_window, window);
    }
  }
  return acc / done;
}

std::vector<Eigen::MatrixXd> snapshot_values(std::vector<nn::Param*> ps) {
  std::vector<Eigen::MatrixXd> vals;
  vals.reserve(ps.size());
  for (auto* p : ps) vals.push_back(p->value);
  return vals;
}

void restore_values(std::vector<nn::Param*> ps, const std::vector<Eigen::MatrixXd>& vals) {
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i]->value = vals[i];
}

} // namespace

double train_backward_epoch(BridgeNet& F, BridgeNet& B, const GammaSchedule& sched,
                            const std::vector<Eigen::MatrixXd>& data,
                            nn::AdamState& adam, const DsbTrainOptions& opts,
                            std::uint64_t epoch_index) {
  return ipf_half_epoch(F, B, sched, data, adam, opts, epoch_index,
                        Direction::backward);
}

double train_forward_epoch(BridgeNet& B, BridgeNet& F, const GammaSchedule& sched,
                           const std::vector<Eigen::MatrixXd>& prior,
                           nn::AdamState& adam, const DsbTrainOptions& opts,
                           std::uint64_t epoch_index) {
  return ipf_half_epoch(B, F, sched, prior, adam, opts, epoch_index,
                        Direction::forward);
}

DsbTrainResult dsb_train(BridgeNet& F, BridgeNet& B, const GammaSchedule& sched,
                         const std::vector<Eigen::MatrixXd>& data,
                         const std::vector<Eigen::MatrixXd>& prior,
                         const DsbTrainOptions& opts,
                         const std::function<double()>& validator,
                         const std::string& checkpoint_dir) {
  if (F.N() != sched.N() || B.N() != sched.N())
    throw std::invalid_argument("dsb_train: nets and schedule disagree on N");
  if (F.d() != B.d()) throw std::invalid_argument("dsb_train: nets disagree on d");
  check_same_shape(data, "data");
  check_same_shape(prior, "prior");
  if (opts.epochs < 1) throw std::invalid_argument("dsb_train: epochs must be positive");

  nn::AdamState adam_b, adam_f;
  adam_b.lr = adam_f.lr = opts.lr;
  adam_b.init(B.params());
  adam_f.init(F.params());

  DsbTrainResult result;
  std::vector<Eigen::MatrixXd> good_f = snapshot_values(F.params());
  std::vector<Eigen::MatrixXd> good_b = snapshot_values(B.params());
  double base_b = std::numeric_limits<double>::quiet_NaN();
  double base_f = std::numeric_limits<double>::quiet_NaN();

  auto run_half = [&](int epoch, Direction dir) -> bool {
    double loss;
    try {
      loss = dir == Direction::backward
                 ? train_backward_epoch(F, B, sched, data, adam_b, opts,
                                        static_cast<std::uint64_t>(epoch - 1))
                 : train_forward_epoch(B, F, sched, prior, adam_f, opts,
                                       static_cast<std::uint64_t>(epoch - 1));
    } catch (const std::runtime_error& e) {
      restore_values(F.params(), good_f);
      restore_values(B.params(), good_b);
      result.diverged = true;
      result.message = e.what();
      return false;
    }
    double& base = dir == Direction::backward ? base_b : base_f;
    if (std::isnan(base)) base = loss;
    if (!std::isfinite(loss) || loss > opts.divergence_factor * base) {
      restore_values(F.params(), good_f);
      restore_values(B.params(), good_b);
      result.diverged = true;
      result.message = std::string(dir == Direction::backward ? "backward" : "forward") +
                       " half-epoch " + std::to_string(epoch) + " diverged (loss " +
                       std::to_string(loss) + " vs baseline " + std::to_string(base) + ")";
      return false;
    }
    good_f = snapshot_values(F.params());
    good_b = snapshot_values(B.params());
    if (!checkpoint_dir.empty()) {
      nn::save_checkpoint(checkpoint_dir + "/forward", F.params());
      nn::save_checkpoint(checkpoint_dir + "/backward", B.params());
    }
    DsbHistoryRow row;
    row.epoch = epoch;
    row.direction = dir;
    row.mean_loss = loss;
    if (validator) row.val_metric = validator();
    result.history.push_back(row);
    return true;
  };

  for (int e = 1; e <= opts.epochs; ++e) {
    if (!run_half(e, Direction::backward)) break;
    if (!run_half(e, Direction::forward)) break;
  }
  return result;
}

SenseResult sense(const chan::ChannelTensor& H_est, const Eigen::Vector3d& position,
                  BridgeNet& B, const GammaSchedule& sched, ae::AutoEncoder& coder,
                  const pc::NormalizationSpec& norm, std::uint64_t seed,
                  bool last_step_noiseless, bool perturb_start) {
  pc::PointCloud5D Z = coder.encode(H_est, position);
  Eigen::MatrixXd start = Z;
  if (perturb_start) {
    auto eng = rng::stream(seed, "sense-start", 0);
    add_noise(start, 2.0 * sched.gamma(sched.N()), eng);
  }
  BridgeState traj = backward_rollout(B, sched, start, seed, 0, last_step_noiseless);
  SenseResult out;
  out.normalized = traj.X.front();
  out.physical = pc::denormalize(out.normalized, norm);
  return out;
}

chan::ChannelTensor reconstruct(const pc::PointCloud5D& cloud_raw,
                                const Eigen::Vector3d& position, BridgeNet& F,
                                const GammaSchedule& sched, ae::AutoEncoder& coder,
                                const pc::NormalizationSpec& norm, std::uint64_t seed) {
  pc::PointCloud5D X0 = pc::normalize(cloud_raw, norm);
  BridgeState traj = forward_rollout(F, sched, Eigen::MatrixXd(X0), seed, 0);
  pc::PointCloud5D Z = traj.X.back();
  return coder.decode(Z, position);
}

double energy_distance_sq(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols())
    throw std::invalid_argument("energy_distance_sq: dimension mismatch");
  Eigen::Index n = a.rows(), m = b.rows();
  if (n < 2 || m < 2)
    throw std::invalid_argument("energy_distance_sq: need at least 2 samples per set");
  double cross = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) cross += (a.row(i) - b.row(j)).norm();
  double within_a = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j) within_a += (a.row(i) - a.row(j)).norm();
  double within_b = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i + 1; j < m; ++j) within_b += (b.row(i) - b.row(j)).norm();
  double nd = static_cast<double>(n), md = static_cast<double>(m);
  return 2.0 * cross / (nd * md) - 2.0 * within_a / (nd * (nd - 1.0)) -
         2.0 * within_b / (md * (md - 1.0));
}

} // namespace embridge::dsb
