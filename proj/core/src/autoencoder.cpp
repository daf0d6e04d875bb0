#include "embridge/autoencoder.hpp"

#include <cmath>
#include <stdexcept>

#include "embridge/rng.hpp"

namespace embridge::ae {

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

double to_db(double linear) {
  return 10.0 * std::log10(std::max(linear, 1e-30));
}

} // namespace

nn::PlaneStack positional_embedding(const Eigen::Vector3d& position, int D_p, int N_r,
                                    int N_t) {
  if (D_p < 6 || D_p % 6 != 0)
    throw std::invalid_argument(
        "positional_embedding: D_p must be a positive multiple of 6 (three "
        "coordinates, even sinusoidal width each)");
  int per = D_p / 3;
  nn::PlaneStack out = nn::PlaneStack::zeros(D_p, N_r, N_t);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd emb = nn::sinusoidal_embed(position(c), per);
    for (int j = 0; j < per; ++j) out.m.row(c * per + j).setConstant(emb(j));
  }
  return out;
}

void AeSpec::validate() const {
  if (K < 1) throw std::invalid_argument("AeSpec: K must be positive");
  if (M < 1) throw std::invalid_argument("AeSpec: M must be positive");
  if (N_r != N_t)
    throw std::invalid_argument("AeSpec: conv stack requires a square N_r x N_t plane");
  if (N_r < 4 || !power_of_two(N_r))
    throw std::invalid_argument("AeSpec: plane size must be a power of two >= 4");
  if (D_p < 6 || D_p % 6 != 0)
    throw std::invalid_argument("AeSpec: D_p must be a positive multiple of 6");
}

AutoEncoder::AutoEncoder(const AeSpec& spec, std::uint64_t seed)
    : spec_(spec), enc_pool_(2), c0_("ae.c0", 1, 1) {
  spec_.validate();
  c0_.value(0, 0) = 1.0;

  stages_ = 0;
  for (int s = spec_.N_r; s > 2; s /= 2) ++stages_;

  std::vector<int> chain;
  chain.push_back(32);
  for (int st = 0; st < stages_; ++st) chain.push_back(st == 0 ? 48 : 64);

  enc_transfer_ = nn::Conv2d("ae.enc.transfer", 2 * spec_.K + spec_.D_p, chain[0], 3, 1,
                             1, seed);
  for (int st = 0; st < stages_; ++st)
    enc_down_.emplace_back("ae.enc.down" + std::to_string(st), chain[st], chain[st + 1],
                           4, 2, 1, seed);
  enc_acts_.resize(stages_);
  enc_head_ = nn::Dense("ae.enc.head", chain.back(), 5 * spec_.M, seed);

  dec_head_ = nn::Dense("ae.dec.head", 5 * spec_.M, chain.back(), seed);
  int c_in = chain.back();
  for (int i = 0; i <= stages_; ++i) {
    int c_out = (i == 0) ? chain.back() : chain[stages_ - i];
    dec_up_.emplace_back("ae.dec.up" + std::to_string(i), c_in, c_out, 4, 2, 1, seed);
    c_in = c_out;
  }
  dec_acts_.resize(stages_ + 1);
  dec_final_ = nn::Conv2d("ae.dec.final", chain[0] + spec_.D_p, 2 * spec_.K, 3, 1, 1,
                          seed);
}

double AutoEncoder::compensation(const Eigen::Vector3d& position) const {
  double c0 = c0_.value(0, 0);
  if (c0 <= 0.0) throw std::logic_error("AutoEncoder: calibration must be positive");
  if (!spec_.range_gain) return 1.0 / c0;
  double r = std::max(position.norm(), 1.0);
  return r * r / c0;
}

void AutoEncoder::set_calibration(double c0) {
  if (!(c0 > 0.0) || !std::isfinite(c0))
    throw std::invalid_argument("AutoEncoder: calibration must be positive and finite");
  c0_.value(0, 0) = c0;
}

nn::PlaneStack AutoEncoder::build_input(const chan::ChannelTensor& H,
                                        const Eigen::Vector3d& position,
                                        double comp) const {
  if (H.K != spec_.K || H.N_r != spec_.N_r || H.N_t != spec_.N_t)
    throw std::invalid_argument("AutoEncoder: channel tensor shape does not match spec");
  nn::PlaneStack in = nn::PlaneStack::zeros(2 * spec_.K + spec_.D_p, spec_.N_r, spec_.N_t);
  for (int k = 0; k < spec_.K; ++k)
    for (int y = 0; y < spec_.N_r; ++y)
      for (int x = 0; x < spec_.N_t; ++x) {
        cplx h = H.at(k, y, x);
        in.at(k, y, x) = h.real() * comp;
        in.at(spec_.K + k, y, x) = h.imag() * comp;
      }
  nn::PlaneStack pos = positional_embedding(position, spec_.D_p, spec_.N_r, spec_.N_t);
  in.m.bottomRows(spec_.D_p) = pos.m;
  return in;
}

Eigen::MatrixXd AutoEncoder::encode_cached(const nn::PlaneStack& input) {
  nn::PlaneStack x = enc_transfer_.forward(input);
  x = enc_transfer_act_.forward(x);
  for (int st = 0; st < stages_; ++st) {
    x = enc_down_[st].forward(x);
    x = enc_acts_[st].forward(x);
  }
  x = enc_pool_.forward(x);
  Eigen::MatrixXd flat = x.m.transpose(); // 1 x c_last
  Eigen::MatrixXd z_flat = enc_head_.forward(flat);
  Eigen::MatrixXd Z(spec_.M, 5);
  for (int i = 0; i < spec_.M; ++i)
    for (int j = 0; j < 5; ++j) Z(i, j) = z_flat(0, i * 5 + j);
  return Z;
}

nn::PlaneStack AutoEncoder::decode_cached(const Eigen::MatrixXd& Z,
                                          const Eigen::Vector3d& position) {
  if (Z.rows() != spec_.M || Z.cols() != 5)
    throw std::invalid_argument("AutoEncoder: latent must be M x 5");
  Eigen::MatrixXd z_flat(1, 5 * spec_.M);
  for (int i = 0; i < spec_.M; ++i)
    for (int j = 0; j < 5; ++j) z_flat(0, i * 5 + j) = Z(i, j);
  Eigen::MatrixXd h = dec_head_.forward(z_flat);
  nn::PlaneStack x = nn::PlaneStack::zeros(static_cast<int>(h.cols()), 1, 1);
  x.m = h.transpose();
  for (int i = 0; i <= stages_; ++i) {
    x = dec_up_[i].forward(x);
    x = dec_acts_[i].forward(x);
  }
  nn::PlaneStack pos = positional_embedding(position, spec_.D_p, spec_.N_r, spec_.N_t);
  nn::PlaneStack cat = nn::PlaneStack::zeros(x.c + spec_.D_p, x.h, x.w);
  cat.m.topRows(x.c) = x.m;
  cat.m.bottomRows(spec_.D_p) = pos.m;
  return dec_final_.forward(cat);
}

nn::PlaneStack AutoEncoder::forward_cached(const chan::ChannelTensor& H,
                                           const Eigen::Vector3d& position) {
  double comp = compensation(position);
  Eigen::MatrixXd Z = encode_cached(build_input(H, position, comp));
  return decode_cached(Z, position);
}

void AutoEncoder::backward_cached(const nn::PlaneStack& d_out) {
  nn::PlaneStack d = dec_final_.backward(d_out);
  nn::PlaneStack d_main = nn::PlaneStack::zeros(d.c - spec_.D_p, d.h, d.w);
  d_main.m = d.m.topRows(d.c - spec_.D_p); // positional planes have no producer
  for (int i = stages_; i >= 0; --i) {
    d_main = dec_acts_[i].backward(d_main);
    d_main = dec_up_[i].backward(d_main);
  }
  Eigen::MatrixXd d_flat = d_main.m.transpose();
  Eigen::MatrixXd dz = dec_head_.backward(d_flat);
  Eigen::MatrixXd d_latent = enc_head_.backward(dz);
  nn::PlaneStack dp = nn::PlaneStack::zeros(static_cast<int>(d_latent.cols()), 1, 1);
  dp.m = d_latent.transpose();
  dp = enc_pool_.backward(dp);
  for (int st = stages_ - 1; st >= 0; --st) {
    dp = enc_acts_[st].backward(dp);
    dp = enc_down_[st].backward(dp);
  }
  dp = enc_transfer_act_.backward(dp);
  enc_transfer_.backward(dp); // input cotangent unused
}

pc::PointCloud5D AutoEncoder::encode(const chan::ChannelTensor& H,
                                     const Eigen::Vector3d& position) {
  double comp = compensation(position);
  Eigen::MatrixXd Z = encode_cached(build_input(H, position, comp));
  pc::PointCloud5D cloud(spec_.M, 5);
  cloud = Z;
  return cloud;
}

chan::ChannelTensor AutoEncoder::decode(const pc::PointCloud5D& Z,
                                        const Eigen::Vector3d& position) {
  double comp = compensation(position);
  nn::PlaneStack planes = decode_cached(Z, position);
  chan::ChannelTensor H = chan::ChannelTensor::zeros(spec_.K, spec_.N_r, spec_.N_t,
                                                     chan::ChannelRole::reconstructed);
  for (int k = 0; k < spec_.K; ++k)
    for (int y = 0; y < spec_.N_r; ++y)
      for (int x = 0; x < spec_.N_t; ++x)
        H.at(k, y, x) = cplx(planes.at(k, y, x), planes.at(spec_.K + k, y, x)) / comp;
  return H;
}

std::vector<nn::Param*> AutoEncoder::params() {
  std::vector<nn::Param*> ps;
  auto append = [&ps](std::vector<nn::Param*> v) {
    ps.insert(ps.end(), v.begin(), v.end());
  };
  append(enc_transfer_.params());
  for (auto& l : enc_down_) append(l.params());
  append(enc_head_.params());
  append(dec_head_.params());
  for (auto& l : dec_up_) append(l.params());
  append(dec_final_.params());
  return ps;
}

std::vector<nn::Param*> AutoEncoder::state_params() {
  std::vector<nn::Param*> ps = params();
  ps.push_back(&c0_);
  return ps;
}

double AutoEncoder::eval_nmse_linear(const std::vector<AeSample>& samples) {
  if (samples.empty())
    throw std::invalid_argument("AutoEncoder: cannot evaluate an empty sample set");
  double acc = 0.0;
  for (const auto& s : samples) {
    double comp = compensation(s.position);
    nn::PlaneStack in = build_input(s.H, s.position, comp);
    Eigen::MatrixXd target = in.m.topRows(2 * spec_.K);
    nn::PlaneStack out = decode_cached(encode_cached(in), s.position);
    double denom = target.squaredNorm();
    if (denom == 0.0)
      throw std::invalid_argument("AutoEncoder: zero-norm reference channel");
    acc += (out.m - target).squaredNorm() / denom;
  }
  return acc / static_cast<double>(samples.size());
}

AeTrainResult AutoEncoder::train(const std::vector<AeSample>& train_set,
                                 const std::vector<AeSample>& val_set,
                                 const AeTrainOptions& opts, nn::AdamState* resume_adam) {
  if (train_set.empty() || val_set.empty())
    throw std::invalid_argument("AutoEncoder: training needs non-empty train and val sets");
  if (opts.epochs < 1 || opts.batch < 1 || !(opts.lr > 0.0))
    throw std::invalid_argument("AutoEncoder: bad training options");
  if (opts.first_epoch < 0 || opts.first_epoch >= opts.epochs)
    throw std::invalid_argument("AutoEncoder: first_epoch out of range");

  // Calibrate the input scale so compensated entries have ~unit RMS.
  double sumsq = 0.0;
  std::size_t count = 0;
  for (const auto& s : train_set) {
    double r = spec_.range_gain ? std::max(s.position.norm(), 1.0) : 1.0;
    for (const auto& h : s.H.data) sumsq += std::norm(h) * r * r * r * r;
    count += s.H.data.size() * 2;
  }
  double rms = std::sqrt(sumsq / static_cast<double>(count));
  if (!(rms > 0.0) || !std::isfinite(rms))
    throw std::invalid_argument("AutoEncoder: training set has zero or non-finite power");
  set_calibration(rms);

  auto ps = params();
  nn::AdamState local_adam;
  nn::AdamState& adam = resume_adam ? *resume_adam : local_adam;
  if (!resume_adam) {
    adam.lr = opts.lr;
    adam.init(ps);
  }

  bool augment = std::isfinite(opts.noise_snr_db);
  double initial_val = eval_nmse_linear(val_set);

  AeTrainResult result;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = opts.first_epoch + 1; epoch <= opts.epochs; ++epoch) {
    auto eng = rng::stream(opts.seed, "ae-shuffle", static_cast<std::uint64_t>(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(rng::uniform(eng) * static_cast<double>(i));
      if (j >= i) j = i - 1;
      std::swap(order[i - 1], order[j]);
    }

    double train_acc = 0.0;
    for (std::size_t start = 0; start < order.size(); start += opts.batch) {
      std::size_t stop = std::min(order.size(), start + opts.batch);
      double inv_b = 1.0 / static_cast<double>(stop - start);
      for (auto* p : ps) p->zero_grad();
      for (std::size_t pos = start; pos < stop; ++pos) {
        const AeSample& s = train_set[order[pos]];
        chan::ChannelTensor H_in = s.H;
        if (augment) {
          double sigma2 = 0.0;
          for (const auto& h : s.H.data) sigma2 += std::norm(h);
          sigma2 /= static_cast<double>(s.H.data.size()) *
                    std::pow(10.0, opts.noise_snr_db / 10.0);
          auto neng = rng::stream(opts.seed, "ae-noise",
                                  static_cast<std::uint64_t>(epoch) * train_set.size() +
                                      order[pos]);
          for (auto& h : H_in.data) h += rng::cnormal(neng, sigma2);
        }
        double comp = compensation(s.position);
        nn::PlaneStack in = build_input(H_in, s.position, comp);
        Eigen::MatrixXd target = build_input(s.H, s.position, comp).m.topRows(2 * spec_.K);
        nn::PlaneStack out = decode_cached(encode_cached(in), s.position);
        double denom = target.squaredNorm();
        if (denom == 0.0)
          throw std::invalid_argument("AutoEncoder: zero-norm reference channel");
        train_acc += (out.m - target).squaredNorm() / denom;
        nn::PlaneStack d_out = nn::PlaneStack::zeros(out.c, out.h, out.w);
        d_out.m = 2.0 * inv_b / denom * (out.m - target);
        backward_cached(d_out);
      }
      adam.step(ps);
    }

    double train_lin = train_acc / static_cast<double>(order.size());
    double val_lin = eval_nmse_linear(val_set);
    result.history.push_back({epoch, to_db(train_lin), to_db(val_lin)});
    result.final_val_nmse_db = to_db(val_lin);

    if (val_lin > opts.divergence_factor * initial_val) {
      result.diverged = true;
      result.message = "validation NMSE diverged at epoch " + std::to_string(epoch) +
                       " (" + std::to_string(to_db(val_lin)) + " dB vs initial " +
                       std::to_string(to_db(initial_val)) + " dB)";
      break;
    }
  }
  return result;
}

} // namespace embridge::ae
