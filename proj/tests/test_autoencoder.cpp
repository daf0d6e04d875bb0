#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "embridge/autoencoder.hpp"
#include "embridge/nn.hpp"
#include "embridge/rng.hpp"

using namespace embridge;
using namespace embridge::ae;

namespace {

chan::ChannelTensor random_channel(std::uint64_t seed, int K, int Nr, int Nt) {
  auto eng = rng::stream(seed, "ae-test-H");
  chan::ChannelTensor H = chan::ChannelTensor::zeros(K, Nr, Nt);
  for (auto& h : H.data) h = rng::cnormal(eng);
  return H;
}

std::vector<AeSample> random_samples(std::uint64_t seed, const AeSpec& spec, int n) {
  std::vector<AeSample> out;
  auto eng = rng::stream(seed, "ae-test-pos");
  for (int i = 0; i < n; ++i) {
    AeSample s;
    s.H = random_channel(seed + 100 + i, spec.K, spec.N_r, spec.N_t);
    s.position = Eigen::Vector3d(2.0 + rng::uniform(eng, 0.0, 8.0),
                                 rng::uniform(eng, -3.0, 3.0),
                                 rng::uniform(eng, -1.0, 1.0));
    out.push_back(std::move(s));
  }
  return out;
}

AeSpec small_spec() {
  AeSpec spec;
  spec.K = 2;
  spec.N_r = spec.N_t = 4;
  spec.M = 16;
  spec.D_p = 6;
  return spec;
}

} // namespace

TEST_CASE("positional embedding matches the scalar closed form") {
  int D_p = 48, N_r = 8, N_t = 8;
  nn::PlaneStack zero = positional_embedding(Eigen::Vector3d::Zero(), D_p, N_r, N_t);
  CHECK(zero.c == D_p);
  CHECK(zero.h == N_r);
  CHECK(zero.w == N_t);
  int per = D_p / 3;
  for (int ch = 0; ch < D_p; ++ch) {
    double expect = (ch % 2 == 0) ? 0.0 : 1.0; // interleaved sin/cos of zero
    for (int y = 0; y < N_r; ++y)
      for (int x = 0; x < N_t; ++x) CHECK(zero.at(ch, y, x) == expect);
  }

  Eigen::Vector3d p(1.5, -2.0, 0.25);
  nn::PlaneStack t = positional_embedding(p, D_p, N_r, N_t);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd emb = nn::sinusoidal_embed(p(c), per);
    for (int j = 0; j < per; ++j) {
      CHECK(t.at(c * per + j, 0, 0) == emb(j));
      CHECK(t.at(c * per + j, N_r - 1, N_t - 1) == emb(j)); // constant over plane
    }
  }

  Eigen::Vector3d q = p + Eigen::Vector3d(0.0, 10.0, 0.0);
  nn::PlaneStack t2 = positional_embedding(q, D_p, N_r, N_t);
  CHECK((t.m - t2.m).norm() > 0.0);

  CHECK_THROWS_AS(positional_embedding(p, 9, N_r, N_t), std::invalid_argument);
  CHECK_THROWS_AS(positional_embedding(p, 0, N_r, N_t), std::invalid_argument);
}

TEST_CASE("autoencoder spec validation rejects unsupported geometry") {
  AeSpec spec; // desk defaults are valid
  CHECK_NOTHROW(spec.validate());

  AeSpec bad = spec;
  bad.N_t = 4;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // non-square
  bad = spec;
  bad.N_r = bad.N_t = 6;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // not a power of two
  bad = spec;
  bad.N_r = bad.N_t = 2;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument); // too small
  bad = spec;
  bad.D_p = 20;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.K = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  bad = spec;
  bad.M = 0;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("encoder and decoder honor shape contracts across config sizes") {
  struct Cfg {
    int K, N, M, D_p;
  };
  for (Cfg c : {Cfg{1, 4, 8, 6}, Cfg{4, 8, 64, 48}, Cfg{2, 16, 32, 12}}) {
    AeSpec spec;
    spec.K = c.K;
    spec.N_r = spec.N_t = c.N;
    spec.M = c.M;
    spec.D_p = c.D_p;
    AutoEncoder auto_enc(spec, 7);
    chan::ChannelTensor H = random_channel(1, c.K, c.N, c.N);
    Eigen::Vector3d pos(3.0, 1.0, 0.0);
    pc::PointCloud5D Z = auto_enc.encode(H, pos);
    CHECK(Z.rows() == c.M);
    CHECK(Z.cols() == 5);
    chan::ChannelTensor R = auto_enc.decode(Z, pos);
    CHECK(R.K == c.K);
    CHECK(R.N_r == c.N);
    CHECK(R.N_t == c.N);
    CHECK(R.role == chan::ChannelRole::reconstructed);
    CHECK(R.finite());
  }
}

TEST_CASE("autoencoder forwards are deterministic and seed-separated") {
  AeSpec spec = small_spec();
  AutoEncoder a(spec, 42), b(spec, 42), c(spec, 43);
  chan::ChannelTensor H = random_channel(5, spec.K, spec.N_r, spec.N_t);
  Eigen::Vector3d pos(4.0, -1.0, 0.5);
  pc::PointCloud5D za = a.encode(H, pos);
  pc::PointCloud5D zb = b.encode(H, pos);
  pc::PointCloud5D zc = c.encode(H, pos);
  CHECK((za - zb).norm() == 0.0);
  CHECK((za - zc).norm() > 0.0);
  CHECK((za - a.encode(H, pos)).norm() == 0.0); // repeat call identical
}

TEST_CASE("encode and decode reject mismatched shapes and bad calibration") {
  AeSpec spec = small_spec();
  AutoEncoder auto_enc(spec, 1);
  Eigen::Vector3d pos(2.0, 0.0, 0.0);
  chan::ChannelTensor wrong = random_channel(2, spec.K + 1, spec.N_r, spec.N_t);
  CHECK_THROWS_AS(auto_enc.encode(wrong, pos), std::invalid_argument);
  pc::PointCloud5D bad_latent(spec.M + 3, 5);
  bad_latent.setZero();
  CHECK_THROWS_AS(auto_enc.decode(bad_latent, pos), std::invalid_argument);
  CHECK_THROWS_AS(auto_enc.set_calibration(0.0), std::invalid_argument);
  CHECK_THROWS_AS(auto_enc.set_calibration(-2.0), std::invalid_argument);
  CHECK_THROWS_AS(auto_enc.set_calibration(std::nan("")), std::invalid_argument);
  CHECK_THROWS_AS(auto_enc.eval_nmse_linear({}), std::invalid_argument);
  AeTrainOptions opts;
  std::vector<AeSample> one = random_samples(3, spec, 1);
  CHECK_THROWS_AS(auto_enc.train({}, one, opts), std::invalid_argument);
  CHECK_THROWS_AS(auto_enc.train(one, {}, opts), std::invalid_argument);
}

TEST_CASE("calibration equals the rms of range-compensated training inputs") {
  AeSpec spec;
  spec.K = 1;
  spec.N_r = spec.N_t = 4;
  spec.M = 8;
  spec.D_p = 6;
  AeSample s;
  s.H = chan::ChannelTensor::zeros(1, 4, 4);
  for (auto& h : s.H.data) h = cplx(3.0, 4.0); // |h|^2 = 25
  s.position = Eigen::Vector3d(2.0, 0.0, 0.0);

  AeTrainOptions opts;
  opts.epochs = 1;
  opts.lr = 1e-9;
  opts.seed = 1;

  AutoEncoder with_gain(spec, 2);
  with_gain.train({s}, {s}, opts);
  // sum |h|^2 r^4 = 16*25*16, over 32 real dims -> rms = sqrt(200)
  CHECK(with_gain.calibration() == doctest::Approx(std::sqrt(200.0)).epsilon(1e-12));

  AeSpec flat = spec;
  flat.range_gain = false;
  AutoEncoder no_gain(flat, 2);
  no_gain.train({s}, {s}, opts);
  CHECK(no_gain.calibration() == doctest::Approx(std::sqrt(12.5)).epsilon(1e-12));
}

TEST_CASE("training loss pipeline is invariant to a power-of-two dataset scale") {
  AeSpec spec = small_spec();
  std::vector<AeSample> base = random_samples(11, spec, 4);
  std::vector<AeSample> scaled = base;
  for (auto& s : scaled)
    for (auto& h : s.H.data) h *= 1024.0;

  AeTrainOptions opts;
  opts.epochs = 3;
  opts.batch = 2;
  opts.lr = 1e-3;
  opts.seed = 5;

  AutoEncoder a(spec, 21), b(spec, 21);
  AeTrainResult ra = a.train(base, base, opts);
  AeTrainResult rb = b.train(scaled, scaled, opts);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].train_nmse_db == rb.history[i].train_nmse_db);
    CHECK(ra.history[i].val_nmse_db == rb.history[i].val_nmse_db);
  }
  CHECK(b.calibration() == 1024.0 * a.calibration());

  // Latents agree bit for bit: the calibrated compensation cancels the scale.
  pc::PointCloud5D za = a.encode(base[0].H, base[0].position);
  pc::PointCloud5D zb = b.encode(scaled[0].H, scaled[0].position);
  CHECK((za - zb).norm() == 0.0);
}

TEST_CASE("single sample overfit drives the round trip toward an exact fit") {
  AeSpec spec = small_spec();
  std::vector<AeSample> one = random_samples(17, spec, 1);
  AutoEncoder auto_enc(spec, 3);
  AeTrainOptions opts;
  opts.epochs = 300;
  opts.batch = 1;
  opts.lr = 3e-3;
  opts.seed = 4;
  AeTrainResult r = auto_enc.train(one, one, opts);
  REQUIRE(!r.diverged);
  REQUIRE(r.history.size() == 300);
  CHECK(r.final_val_nmse_db <= -25.0);
  CHECK(r.history.back().train_nmse_db < r.history.front().train_nmse_db);
}

TEST_CASE("absurd learning rate triggers the divergence abort") {
  AeSpec spec = small_spec();
  std::vector<AeSample> data = random_samples(23, spec, 3);
  AutoEncoder auto_enc(spec, 6);
  AeTrainOptions opts;
  opts.epochs = 40;
  opts.batch = 3;
  opts.lr = 10.0;
  opts.seed = 7;
  AeTrainResult r = auto_enc.train(data, data, opts);
  CHECK(r.diverged);
  CHECK(r.history.size() < 40);
  CHECK(!r.message.empty());
}

TEST_CASE("training replays bit for bit under a fixed seed") {
  AeSpec spec = small_spec();
  std::vector<AeSample> data = random_samples(31, spec, 5);
  std::vector<AeSample> val = random_samples(37, spec, 2);
  AeTrainOptions opts;
  opts.epochs = 4;
  opts.batch = 2;
  opts.lr = 1e-3;
  opts.seed = 12;

  AutoEncoder a(spec, 8), b(spec, 8);
  AeTrainResult ra = a.train(data, val, opts);
  AeTrainResult rb = b.train(data, val, opts);
  REQUIRE(ra.history.size() == rb.history.size());
  CHECK(ra.final_val_nmse_db == rb.final_val_nmse_db);
  auto pa = a.state_params(), pb = b.state_params();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i)
    CHECK((pa[i]->value - pb[i]->value).norm() == 0.0);

  // Noise augmentation changes the trajectory but stays deterministic.
  AeTrainOptions noisy = opts;
  noisy.noise_snr_db = 20.0;
  AutoEncoder c(spec, 8), d(spec, 8);
  AeTrainResult rc = c.train(data, val, noisy);
  AeTrainResult rd = d.train(data, val, noisy);
  CHECK(rc.final_val_nmse_db == rd.final_val_nmse_db);
  CHECK(rc.history.front().train_nmse_db != ra.history.front().train_nmse_db);
}

TEST_CASE("end-to-end autoencoder gradient checks are sharp") {
  AeSpec spec;
  spec.K = 1;
  spec.N_r = spec.N_t = 4;
  spec.M = 8;
  spec.D_p = 6;
  AutoEncoder auto_enc(spec, 19);
  auto_enc.set_calibration(1.5);
  chan::ChannelTensor H = random_channel(41, spec.K, spec.N_r, spec.N_t);
  Eigen::Vector3d pos(3.0, -0.5, 0.25);

  // Coordinate probes need a target close to the output: the relative
  // conditioning of central differences scales with the residual, and a
  // unit-scale residual through a deep stack drowns tiny per-coordinate
  // gradients in cancellation noise.
  nn::PlaneStack target = auto_enc.forward_cached(H, pos);
  auto teng = rng::stream(43, "ae-gradcheck-target");
  for (int i = 0; i < target.m.size(); ++i)
    target.m.data()[i] += 1e-2 * rng::normal(teng);

  auto loss_fn = [&]() {
    nn::PlaneStack out = auto_enc.forward_cached(H, pos);
    nn::PlaneStack d = out;
    d.m = 2.0 * (out.m - target.m);
    double loss = (out.m - target.m).squaredNorm();
    auto_enc.backward_cached(d);
    return loss;
  };
  CHECK(nn::gradient_check(auto_enc.params(), loss_fn, 20, 11) < 1e-4);
  // Directional probes aggregate the full gradient, so they stay sharp even
  // where single coordinates are noise-limited.
  CHECK(nn::directional_gradient_check(auto_enc.params(), loss_fn, 24, 11) < 1e-5);
}

TEST_CASE("checkpoint round trip restores outputs and calibration") {
  AeSpec spec = small_spec();
  AutoEncoder a(spec, 51);
  a.set_calibration(2.75);
  std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "embridge_ae_ckpt_test";
  std::filesystem::remove_all(dir);
  nn::save_checkpoint(dir.string(), a.state_params());

  AutoEncoder b(spec, 999); // different init, then restored
  nn::load_checkpoint(dir.string(), b.state_params());
  CHECK(b.calibration() == 2.75);
  chan::ChannelTensor H = random_channel(53, spec.K, spec.N_r, spec.N_t);
  Eigen::Vector3d pos(5.0, 2.0, -0.5);
  CHECK((a.encode(H, pos) - b.encode(H, pos)).norm() == 0.0);
  chan::ChannelTensor ra = a.decode(a.encode(H, pos), pos);
  chan::ChannelTensor rb = b.decode(b.encode(H, pos), pos);
  for (std::size_t i = 0; i < ra.data.size(); ++i) CHECK(ra.data[i] == rb.data[i]);
  std::filesystem::remove_all(dir);
}

TEST_CASE("trained encoder keeps position conditioning and lipschitz sanity") {
  AeSpec spec = small_spec();
  std::vector<AeSample> data = random_samples(61, spec, 4);
  AutoEncoder auto_enc(spec, 13);
  AeTrainOptions opts;
  opts.epochs = 60;
  opts.batch = 2;
  opts.lr = 2e-3;
  opts.seed = 14;
  AeTrainResult r = auto_enc.train(data, data, opts);
  REQUIRE(!r.diverged);

  chan::ChannelTensor H = data[0].H;
  Eigen::Vector3d p1 = data[0].position;
  Eigen::Vector3d p2 = p1 + Eigen::Vector3d(0.0, 10.0, 0.0);
  pc::PointCloud5D z1 = auto_enc.encode(H, p1);
  pc::PointCloud5D z2 = auto_enc.encode(H, p2);
  CHECK((z1 - z2).norm() > 0.0);

  // Frobenius-1e-6 input perturbation must move the latent by < 1e-2.
  chan::ChannelTensor Hp = H;
  auto eng = rng::stream(67, "ae-lipschitz");
  double nrm = 0.0;
  std::vector<cplx> delta(H.data.size());
  for (auto& d : delta) {
    d = rng::cnormal(eng);
    nrm += std::norm(d);
  }
  double scale = 1e-6 / std::sqrt(nrm);
  for (std::size_t i = 0; i < Hp.data.size(); ++i) Hp.data[i] += delta[i] * scale;
  pc::PointCloud5D zp = auto_enc.encode(Hp, p1);
  CHECK((zp - z1).norm() < 1e-2);
  CHECK((zp - z1).norm() > 0.0);
}
