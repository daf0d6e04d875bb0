#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "embridge/nn.hpp"
#include "embridge/rng.hpp"

using namespace embridge;
using namespace embridge::nn;

namespace {

Eigen::MatrixXd random_mat(std::uint64_t seed, int r, int c) {
  auto eng = rng::stream(seed, "test-mat");
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) m(i, j) = rng::normal(eng);
  return m;
}

PlaneStack random_plane(std::uint64_t seed, int c, int h, int w) {
  PlaneStack p = PlaneStack::zeros(c, h, w);
  auto eng = rng::stream(seed, "test-plane");
  for (int i = 0; i < c; ++i)
    for (Eigen::Index j = 0; j < p.m.cols(); ++j) p.m(i, j) = rng::normal(eng);
  return p;
}

double dot(const PlaneStack& a, const PlaneStack& b) {
  return (a.m.array() * b.m.array()).sum();
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("embridge_nn_" + std::to_string(::getpid()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace

TEST_CASE("sinusoidal embedding matches its closed form") {
  Eigen::VectorXd zero = sinusoidal_embed(0.0, 8);
  for (int p = 0; p < 4; ++p) {
    CHECK(zero[2 * p] == 0.0);
    CHECK(zero[2 * p + 1] == 1.0);
  }
  Eigen::VectorXd e = sinusoidal_embed(1.0, 4);
  CHECK(e[0] == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(e[1] == doctest::Approx(std::cos(1.0)).epsilon(1e-15));
  CHECK(e[2] == doctest::Approx(std::sin(1e-4)).epsilon(1e-15));
  CHECK(e[3] == doctest::Approx(std::cos(1e-4)).epsilon(1e-15));
  // Distinct timesteps separate.
  for (int i = 0; i < 19; ++i) {
    Eigen::VectorXd a = sinusoidal_embed(i / 20.0, 32);
    Eigen::VectorXd b = sinusoidal_embed((i + 1) / 20.0, 32);
    CHECK((a - b).norm() > 0.0);
  }
  // Vector inputs concatenate per-component embeddings.
  Eigen::Vector3d v(0.5, -1.0, 2.0);
  Eigen::VectorXd ve = sinusoidal_embed(v, 12);
  CHECK(ve.size() == 12);
  CHECK(ve.segment(0, 4) == sinusoidal_embed(0.5, 4));
  CHECK(ve.segment(4, 4) == sinusoidal_embed(-1.0, 4));
  CHECK(ve.segment(8, 4) == sinusoidal_embed(2.0, 4));
  CHECK_THROWS(sinusoidal_embed(1.0, 5));
  CHECK_THROWS(sinusoidal_embed(v, 8));
}

TEST_CASE("concatsquash forward matches a scalar reference and its edge cases") {
  ConcatSquash cs("cs", 3, 4, 2, 7);
  Eigen::MatrixXd X = random_mat(1, 5, 3), C = random_mat(2, 5, 2);

  Eigen::MatrixXd Y = cs.forward(X, C);
  for (int r = 0; r < 5; ++r)
    for (int o = 0; o < 4; ++o) {
      double main = 0.0;
      for (int i = 0; i < 3; ++i) main += cs.W.value(o, i) * X(r, i);
      double gate_pre = cs.bg.value(o, 0);
      double bias = 0.0;
      for (int j = 0; j < 2; ++j) {
        gate_pre += cs.Wg.value(o, j) * C(r, j);
        bias += cs.Wb.value(o, j) * C(r, j);
      }
      double expect = main * (1.0 / (1.0 + std::exp(-gate_pre))) + bias;
      CHECK(Y(r, o) == doctest::Approx(expect).epsilon(1e-14));
    }

  // Zero gate parameters halve the main path.
  ConcatSquash half("half", 3, 4, 2, 7);
  half.Wg.value.setZero();
  half.bg.value.setZero();
  half.Wb.value.setZero();
  Eigen::MatrixXd Yh = half.forward(X, C);
  Eigen::MatrixXd expect = 0.5 * (X * half.W.value.transpose());
  CHECK((Yh - expect).cwiseAbs().maxCoeff() < 1e-15);

  // Zero input leaves only the context bias.
  Eigen::MatrixXd Y0 = cs.forward(Eigen::MatrixXd::Zero(5, 3), C);
  CHECK((Y0 - C * cs.Wb.value.transpose()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("dense gradients equal the closed form and zero cotangents vanish") {
  Dense d("d", 4, 3, 11);
  Eigen::MatrixXd X = random_mat(3, 6, 4);
  Eigen::MatrixXd Y = d.forward(X);
  Eigen::MatrixXd delta = random_mat(4, 6, 3);
  d.W.zero_grad();
  d.b.zero_grad();
  Eigen::MatrixXd dX = d.backward(delta);
  CHECK((d.W.grad - delta.transpose() * X).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((d.b.grad.col(0) - delta.colwise().sum().transpose()).cwiseAbs().maxCoeff() < 1e-14);
  CHECK((dX - delta * d.W.value).cwiseAbs().maxCoeff() < 1e-14);

  d.W.zero_grad();
  d.b.zero_grad();
  d.forward(X);
  d.backward(Eigen::MatrixXd::Zero(6, 3));
  CHECK(d.W.grad.cwiseAbs().maxCoeff() == 0.0);
  CHECK(d.b.grad.cwiseAbs().maxCoeff() == 0.0);

  Dense fresh("fresh", 4, 3, 1);
  CHECK_THROWS(fresh.backward(delta));
}

TEST_CASE("dense and concatsquash pass central-difference gradient checks") {
  Dense d("d", 5, 3, 21);
  Eigen::MatrixXd X = random_mat(31, 4, 5);
  auto dense_loss = [&]() {
    Eigen::MatrixXd Y = d.forward(X);
    double loss = Y.squaredNorm();
    d.backward(2.0 * Y);
    return loss;
  };
  CHECK(gradient_check(d.params(), dense_loss, 12, 1) < 1e-4);

  ConcatSquash cs("cs", 5, 4, 6, 22);
  Eigen::MatrixXd C = random_mat(32, 4, 6);
  auto cs_loss = [&]() {
    Eigen::MatrixXd Y = cs.forward(X, C);
    double loss = Y.squaredNorm();
    cs.backward(2.0 * Y);
    return loss;
  };
  CHECK(gradient_check(cs.params(), cs_loss, 12, 2) < 1e-4);
}

TEST_CASE("concatsquash MLP with softplus passes the gradient check") {
  CsMlp net("net", 5, {16, 16}, 5, 8, 33);
  Eigen::MatrixXd X = random_mat(41, 6, 5);
  Eigen::MatrixXd C = random_mat(42, 6, 8);
  Eigen::MatrixXd target = random_mat(43, 6, 5);
  auto loss_fn = [&]() {
    Eigen::MatrixXd Y = net.forward(X, C);
    Eigen::MatrixXd r = Y - target;
    net.backward(2.0 * r);
    return r.squaredNorm();
  };
  CHECK(gradient_check(net.params(), loss_fn, 8, 3) < 1e-4);
}

TEST_CASE("convolution primitives satisfy the adjoint identities") {
  // <conv(x, W), y> == <x, conv_backward_data(y, W)> == <W, conv_backward_weights(x, y)>.
  for (auto [stride, pad, k] : {std::tuple{1, 1, 3}, std::tuple{2, 1, 4}}) {
    PlaneStack x = random_plane(50 + stride, 3, 8, 8);
    Eigen::MatrixXd W = random_mat(51 + stride, 5, 3 * k * k);
    PlaneStack y0 = conv_forward(x, W, k, k, stride, pad);
    PlaneStack y = random_plane(52 + stride, y0.c, y0.h, y0.w);
    double lhs = dot(y0, y);
    PlaneStack xadj = conv_backward_data(y, W, 3, 8, 8, k, k, stride, pad);
    CHECK(dot(x, xadj) == doctest::Approx(lhs).epsilon(1e-12));
    Eigen::MatrixXd gW = conv_backward_weights(x, y, k, k, stride, pad);
    CHECK((W.array() * gW.array()).sum() == doctest::Approx(lhs).epsilon(1e-12));
  }
}

TEST_CASE("convolution matches a direct quadruple-loop evaluation") {
  PlaneStack x = random_plane(60, 2, 4, 4);
  Eigen::MatrixXd W = random_mat(61, 3, 2 * 3 * 3);
  PlaneStack y = conv_forward(x, W, 3, 3, 1, 1);
  REQUIRE(y.c == 3);
  REQUIRE(y.h == 4);
  REQUIRE(y.w == 4);
  for (int co = 0; co < 3; ++co)
    for (int oy = 0; oy < 4; ++oy)
      for (int ox = 0; ox < 4; ++ox) {
        double acc = 0.0;
        for (int ci = 0; ci < 2; ++ci)
          for (int ky = 0; ky < 3; ++ky)
            for (int kx = 0; kx < 3; ++kx) {
              int iy = oy + ky - 1, ix = ox + kx - 1;
              if (iy < 0 || iy >= 4 || ix < 0 || ix >= 4) continue;
              acc += W(co, (ci * 3 + ky) * 3 + kx) * x.at(ci, iy, ix);
            }
        CHECK(y.at(co, oy, ox) == doctest::Approx(acc).epsilon(1e-13));
      }
}

TEST_CASE("conv and transposed-conv layers pass gradient checks and invert shapes") {
  Conv2d conv("conv", 2, 4, 4, 2, 1, 71);
  PlaneStack x = random_plane(72, 2, 8, 8);
  PlaneStack y = conv.forward(x);
  CHECK(y.c == 4);
  CHECK(y.h == 4);
  CHECK(y.w == 4);
  auto conv_loss = [&]() {
    PlaneStack out = conv.forward(x);
    double loss = out.m.squaredNorm();
    PlaneStack dy = out;
    dy.m = 2.0 * out.m;
    conv.backward(dy);
    return loss;
  };
  CHECK(gradient_check(conv.params(), conv_loss, 10, 4) < 1e-4);

  ConvT2d tconv("tconv", 4, 2, 4, 2, 1, 73);
  PlaneStack z = random_plane(74, 4, 4, 4);
  PlaneStack up = tconv.forward(z);
  CHECK(up.c == 2);
  CHECK(up.h == 8);
  CHECK(up.w == 8);
  auto tconv_loss = [&]() {
    PlaneStack out = tconv.forward(z);
    double loss = out.m.squaredNorm();
    PlaneStack dy = out;
    dy.m = 2.0 * out.m;
    tconv.backward(dy);
    return loss;
  };
  CHECK(gradient_check(tconv.params(), tconv_loss, 10, 5) < 1e-4);
}

TEST_CASE("avg pooling averages blocks and spreads gradients evenly") {
  AvgPool2d pool(2);
  PlaneStack x = PlaneStack::zeros(1, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) x.at(0, y, xx) = y * 4 + xx;
  PlaneStack y = pool.forward(x);
  CHECK(y.h == 2);
  CHECK(y.at(0, 0, 0) == doctest::Approx((0.0 + 1 + 4 + 5) / 4).epsilon(1e-15));
  CHECK(y.at(0, 1, 1) == doctest::Approx((10.0 + 11 + 14 + 15) / 4).epsilon(1e-15));
  PlaneStack dy = PlaneStack::zeros(1, 2, 2);
  dy.at(0, 0, 0) = 4.0;
  PlaneStack dx = pool.backward(dy);
  CHECK(dx.at(0, 0, 0) == 1.0);
  CHECK(dx.at(0, 1, 1) == 1.0);
  CHECK(dx.at(0, 2, 2) == 0.0);

  // Adjoint identity for the pooling pair.
  PlaneStack a = random_plane(81, 3, 6, 6);
  PlaneStack pa = pool.forward(a);
  PlaneStack cb = random_plane(82, 3, 3, 3);
  double lhs = dot(pa, cb);
  PlaneStack ab = pool.backward(cb);
  CHECK(dot(a, ab) == doctest::Approx(lhs).epsilon(1e-12));
}

TEST_CASE("composite conv chain end-to-end gradient check") {
  Conv2d c1("c1", 2, 3, 3, 1, 1, 91);
  PlaneSoftplus sp;
  AvgPool2d pool(2);
  Dense head("head", 3 * 2 * 2, 4, 92);
  PlaneStack x = random_plane(93, 2, 4, 4);
  auto loss_fn = [&]() {
    PlaneStack h = pool.forward(sp.forward(c1.forward(x)));
    Eigen::MatrixXd flat(1, h.m.size());
    for (int ci = 0; ci < h.c; ++ci)
      flat.block(0, ci * h.h * h.w, 1, h.h * h.w) = h.m.row(ci);
    Eigen::MatrixXd out = head.forward(flat);
    double loss = out.squaredNorm();
    Eigen::MatrixXd dflat = head.backward(2.0 * out);
    PlaneStack dh = PlaneStack::zeros(h.c, h.h, h.w);
    for (int ci = 0; ci < h.c; ++ci)
      dh.m.row(ci) = dflat.block(0, ci * h.h * h.w, 1, h.h * h.w);
    c1.backward(sp.backward(pool.backward(dh)));
    return loss;
  };
  std::vector<Param*> ps = c1.params();
  for (Param* p : head.params()) ps.push_back(p);
  CHECK(gradient_check(ps, loss_fn, 10, 6) < 1e-4);
}

TEST_CASE("adam follows the bias-corrected closed form") {
  Param p("p", 2, 1);
  p.value << 1.0, -2.0;
  AdamState adam;
  adam.lr = 0.01;
  std::vector<Param*> ps{&p};
  adam.init(ps);

  // Zero gradient: parameters unchanged.
  p.zero_grad();
  adam.step(ps);
  CHECK(p.value(0) == 1.0);
  CHECK(p.value(1) == -2.0);

  // Constant gradient at step 1 (fresh state): update is -lr * g/(|g| + eps).
  AdamState fresh;
  fresh.lr = 0.01;
  Param q("q", 2, 1);
  q.value << 1.0, -2.0;
  std::vector<Param*> qs{&q};
  fresh.init(qs);
  q.grad << 0.5, -3.0;
  fresh.step(qs);
  CHECK(q.value(0) == doctest::Approx(1.0 - 0.01 * 0.5 / (0.5 + fresh.eps)).epsilon(1e-12));
  CHECK(q.value(1) == doctest::Approx(-2.0 + 0.01 * 3.0 / (3.0 + fresh.eps)).epsilon(1e-12));
}

TEST_CASE("identically seeded training steps are bit-reproducible") {
  auto run = [](std::uint64_t seed) {
    Dense d("d", 4, 4, seed);
    AdamState adam;
    auto ps = d.params();
    adam.init(ps);
    Eigen::MatrixXd X = random_mat(seed + 1, 8, 4);
    Eigen::MatrixXd T = random_mat(seed + 2, 8, 4);
    for (int it = 0; it < 5; ++it) {
      d.W.zero_grad();
      d.b.zero_grad();
      Eigen::MatrixXd Y = d.forward(X);
      d.backward(2.0 * (Y - T));
      adam.step(ps);
    }
    return d.W.value;
  };
  Eigen::MatrixXd a = run(5), b = run(5), c = run(6);
  CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject mismatched models") {
  TempDir tmp;
  CsMlp net("net", 5, {8}, 5, 4, 101);
  auto ps = net.params();
  std::vector<Eigen::MatrixXd> saved;
  for (Param* p : ps) saved.push_back(p->value);
  save_checkpoint((tmp.path / "ckpt").string(), ps);
  for (Param* p : ps) p->value.setZero();
  load_checkpoint((tmp.path / "ckpt").string(), ps);
  for (std::size_t i = 0; i < ps.size(); ++i)
    CHECK((ps[i]->value - saved[i]).cwiseAbs().maxCoeff() == 0.0);

  CsMlp other("other", 5, {8}, 5, 4, 102);
  CHECK_THROWS(load_checkpoint((tmp.path / "ckpt").string(), other.params()));
  CsMlp bigger("net", 5, {8, 8}, 5, 4, 103);
  CHECK_THROWS(load_checkpoint((tmp.path / "ckpt").string(), bigger.params()));
  CHECK_THROWS(load_checkpoint((tmp.path / "missing").string(), ps));
}

TEST_CASE("glorot initialization is deterministic per name and seed") {
  Dense a("same", 6, 6, 7), b("same", 6, 6, 7), c("same", 6, 6, 8), d("else", 6, 6, 7);
  CHECK((a.W.value - b.W.value).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.W.value - c.W.value).cwiseAbs().maxCoeff() > 0.0);
  CHECK((a.W.value - d.W.value).cwiseAbs().maxCoeff() > 0.0);
  double limit = std::sqrt(6.0 / 12.0);
  CHECK(a.W.value.cwiseAbs().maxCoeff() <= limit);
}
