#include "embridge/nn.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "embridge/rng.hpp"
#include "embridge/tensor_io.hpp"

namespace embridge::nn {

namespace fs = std::filesystem;

Param::Param(std::string n, int rows, int cols)
    : name(std::move(n)),
      value(Eigen::MatrixXd::Zero(rows, cols)),
      grad(Eigen::MatrixXd::Zero(rows, cols)) {}

void glorot_init(Param& p, std::uint64_t seed, int fan_in, int fan_out) {
  double limit = std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out));
  auto eng = rng::stream(seed, "init-" + p.name, 0);
  for (Eigen::Index r = 0; r < p.value.rows(); ++r)
    for (Eigen::Index c = 0; c < p.value.cols(); ++c)
      p.value(r, c) = rng::uniform(eng, -limit, limit);
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

Eigen::VectorXd sinusoidal_embed(const Eigen::VectorXd& value, int width) {
  int dim = static_cast<int>(value.size());
  if (dim <= 0) throw std::invalid_argument("sinusoidal_embed: empty input");
  if (width <= 0 || width % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: width must be positive and even");
  if (width % dim != 0 || (width / dim) % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: width must split evenly across components");
  int per = width / dim;
  Eigen::VectorXd out(width);
  for (int d = 0; d < dim; ++d)
    for (int p = 0; p < per / 2; ++p) {
      double freq = std::pow(10000.0, -2.0 * (2.0 * p) / per);
      out[d * per + 2 * p] = std::sin(freq * value[d]);
      out[d * per + 2 * p + 1] = std::cos(freq * value[d]);
    }
  return out;
}

Eigen::VectorXd sinusoidal_embed(double value, int width) {
  Eigen::VectorXd v(1);
  v[0] = value;
  return sinusoidal_embed(v, width);
}

// ---------------------------------------------------------------------------

Dense::Dense(const std::string& name, int d_in, int d_out, std::uint64_t seed, bool bias)
    : W(name + ".W", d_out, d_in), b(name + ".b", d_out, 1), with_bias(bias) {
  glorot_init(W, seed, d_in, d_out);
}

Eigen::MatrixXd Dense::forward(const Eigen::MatrixXd& X) {
  if (X.cols() != W.value.cols()) throw std::invalid_argument("Dense: input width mismatch");
  x_cache_ = X;
  has_cache_ = true;
  Eigen::MatrixXd Y = X * W.value.transpose();
  if (with_bias) Y.rowwise() += b.value.col(0).transpose();
  return Y;
}

Eigen::MatrixXd Dense::backward(const Eigen::MatrixXd& dY) {
  if (!has_cache_) throw std::logic_error("Dense: backward without recorded forward");
  W.grad += dY.transpose() * x_cache_;
  if (with_bias) b.grad.col(0) += dY.colwise().sum().transpose();
  return dY * W.value;
}

std::vector<Param*> Dense::params() {
  std::vector<Param*> ps{&W};
  if (with_bias) ps.push_back(&b);
  return ps;
}

Eigen::MatrixXd SoftplusLayer::forward(const Eigen::MatrixXd& X) {
  x_cache_ = X;
  has_cache_ = true;
  return X.unaryExpr([](double v) { return softplus(v); });
}

Eigen::MatrixXd SoftplusLayer::backward(const Eigen::MatrixXd& dY) {
  if (!has_cache_) throw std::logic_error("SoftplusLayer: backward without recorded forward");
  return dY.cwiseProduct(x_cache_.unaryExpr([](double v) { return sigmoid(v); }));
}

ConcatSquash::ConcatSquash(const std::string& name, int d_in, int d_out, int d_ctx,
                           std::uint64_t seed)
    : W(name + ".W", d_out, d_in),
      Wg(name + ".Wg", d_out, d_ctx),
      bg(name + ".bg", d_out, 1),
      Wb(name + ".Wb", d_out, d_ctx) {
  glorot_init(W, seed, d_in, d_out);
  glorot_init(Wg, seed, d_ctx, d_out);
  glorot_init(Wb, seed, d_ctx, d_out);
}

Eigen::MatrixXd ConcatSquash::forward(const Eigen::MatrixXd& X, const Eigen::MatrixXd& ctx) {
  if (X.cols() != W.value.cols()) throw std::invalid_argument("ConcatSquash: input width mismatch");
  if (ctx.cols() != Wg.value.cols() || ctx.rows() != X.rows())
    throw std::invalid_argument("ConcatSquash: context shape mismatch");
  x_cache_ = X;
  ctx_cache_ = ctx;
  main_cache_ = X * W.value.transpose();
  Eigen::MatrixXd gate_pre = ctx * Wg.value.transpose();
  gate_pre.rowwise() += bg.value.col(0).transpose();
  gate_cache_ = gate_pre.unaryExpr([](double v) { return sigmoid(v); });
  has_cache_ = true;
  return main_cache_.cwiseProduct(gate_cache_) + ctx * Wb.value.transpose();
}

Eigen::MatrixXd ConcatSquash::backward(const Eigen::MatrixXd& dY) {
  if (!has_cache_) throw std::logic_error("ConcatSquash: backward without recorded forward");
  Eigen::MatrixXd d_main = dY.cwiseProduct(gate_cache_);
  W.grad += d_main.transpose() * x_cache_;
  Eigen::MatrixXd d_gate_pre = dY.cwiseProduct(main_cache_)
                                   .cwiseProduct(gate_cache_)
                                   .cwiseProduct(Eigen::MatrixXd::Ones(gate_cache_.rows(),
                                                                       gate_cache_.cols()) -
                                                 gate_cache_);
  Wg.grad += d_gate_pre.transpose() * ctx_cache_;
  bg.grad.col(0) += d_gate_pre.colwise().sum().transpose();
  Wb.grad += dY.transpose() * ctx_cache_;
  return d_main * W.value;
}

std::vector<Param*> ConcatSquash::params() { return {&W, &Wg, &bg, &Wb}; }

CsMlp::CsMlp(const std::string& name, int d_in, const std::vector<int>& hidden, int d_out,
             int d_ctx, std::uint64_t seed)
    : d_in_(d_in), d_ctx_(d_ctx) {
  int prev = d_in;
  int idx = 0;
  for (int h : hidden) {
    blocks_.emplace_back(name + ".cs" + std::to_string(idx), prev, h, d_ctx, seed);
    prev = h;
    ++idx;
  }
  blocks_.emplace_back(name + ".cs" + std::to_string(idx), prev, d_out, d_ctx, seed);
  acts_.resize(blocks_.size() - 1);
}

Eigen::MatrixXd CsMlp::forward(const Eigen::MatrixXd& X, const Eigen::MatrixXd& ctx) {
  Eigen::MatrixXd h = X;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    h = blocks_[i].forward(h, ctx);
    if (i + 1 < blocks_.size()) h = acts_[i].forward(h);
  }
  return h;
}

Eigen::MatrixXd CsMlp::backward(const Eigen::MatrixXd& dY) {
  Eigen::MatrixXd d = dY;
  for (std::size_t i = blocks_.size(); i-- > 0;) {
    if (i + 1 < blocks_.size()) d = acts_[i].backward(d);
    d = blocks_[i].backward(d);
  }
  return d;
}

std::vector<Param*> CsMlp::params() {
  std::vector<Param*> ps;
  for (auto& b : blocks_)
    for (Param* p : b.params()) ps.push_back(p);
  return ps;
}

// ---------------------------------------------------------------------------

PlaneStack PlaneStack::zeros(int c, int h, int w) {
  PlaneStack p;
  p.c = c;
  p.h = h;
  p.w = w;
  p.m = Eigen::MatrixXd::Zero(c, static_cast<Eigen::Index>(h) * w);
  return p;
}

namespace {

int conv_out_dim(int in, int k, int stride, int pad) {
  int num = in + 2 * pad - k;
  if (num < 0 || num % stride != 0)
    throw std::invalid_argument("conv: incompatible geometry (in=" + std::to_string(in) +
                                " k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                                " pad=" + std::to_string(pad) + ")");
  return num / stride + 1;
}

// col(x): (c*kh*kw) x (ho*wo), column-major over output pixels, row
// (ci*kh + ky)*kw + kx.
Eigen::MatrixXd im2col(const PlaneStack& x, int kh, int kw, int stride, int pad, int ho,
                       int wo) {
  Eigen::MatrixXd col = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(x.c) * kh * kw,
                                              static_cast<Eigen::Index>(ho) * wo);
  for (int ci = 0; ci < x.c; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        Eigen::Index row = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= x.h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= x.w) continue;
            col(row, static_cast<Eigen::Index>(oy) * wo + ox) = x.at(ci, iy, ix);
          }
        }
      }
  return col;
}

// Exact adjoint of im2col: scatter-add columns back into the image.
PlaneStack col2im(const Eigen::MatrixXd& col, int c, int h, int w, int kh, int kw, int stride,
                  int pad, int ho, int wo) {
  PlaneStack x = PlaneStack::zeros(c, h, w);
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx) {
        Eigen::Index row = (static_cast<Eigen::Index>(ci) * kh + ky) * kw + kx;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - pad;
            if (ix < 0 || ix >= w) continue;
            x.at(ci, iy, ix) += col(row, static_cast<Eigen::Index>(oy) * wo + ox);
          }
        }
      }
  return x;
}

} // namespace

PlaneStack conv_forward(const PlaneStack& x, const Eigen::MatrixXd& W, int kh, int kw,
                        int stride, int pad) {
  if (W.cols() != static_cast<Eigen::Index>(x.c) * kh * kw)
    throw std::invalid_argument("conv_forward: weight/input channel mismatch");
  int ho = conv_out_dim(x.h, kh, stride, pad);
  int wo = conv_out_dim(x.w, kw, stride, pad);
  PlaneStack y;
  y.c = static_cast<int>(W.rows());
  y.h = ho;
  y.w = wo;
  y.m = W * im2col(x, kh, kw, stride, pad, ho, wo);
  return y;
}

PlaneStack conv_backward_data(const PlaneStack& dy, const Eigen::MatrixXd& W, int c_in,
                              int h_in, int w_in, int kh, int kw, int stride, int pad) {
  if (W.rows() != dy.c) throw std::invalid_argument("conv_backward_data: channel mismatch");
  if (W.cols() != static_cast<Eigen::Index>(c_in) * kh * kw)
    throw std::invalid_argument("conv_backward_data: weight geometry mismatch");
  int ho = conv_out_dim(h_in, kh, stride, pad);
  int wo = conv_out_dim(w_in, kw, stride, pad);
  if (ho != dy.h || wo != dy.w)
    throw std::invalid_argument("conv_backward_data: cotangent shape mismatch");
  Eigen::MatrixXd col_grad = W.transpose() * dy.m;
  return col2im(col_grad, c_in, h_in, w_in, kh, kw, stride, pad, ho, wo);
}

Eigen::MatrixXd conv_backward_weights(const PlaneStack& x, const PlaneStack& dy, int kh,
                                      int kw, int stride, int pad) {
  int ho = conv_out_dim(x.h, kh, stride, pad);
  int wo = conv_out_dim(x.w, kw, stride, pad);
  if (ho != dy.h || wo != dy.w)
    throw std::invalid_argument("conv_backward_weights: cotangent shape mismatch");
  return dy.m * im2col(x, kh, kw, stride, pad, ho, wo).transpose();
}

Conv2d::Conv2d(const std::string& name, int c_in, int c_out, int k, int stride, int pad,
               std::uint64_t seed)
    : c_in(c_in),
      c_out(c_out),
      k(k),
      stride(stride),
      pad(pad),
      W(name + ".W", c_out, c_in * k * k),
      b(name + ".b", c_out, 1) {
  glorot_init(W, seed, c_in * k * k, c_out);
}

PlaneStack Conv2d::forward(const PlaneStack& x) {
  if (x.c != c_in) throw std::invalid_argument("Conv2d: channel mismatch");
  x_cache_ = x;
  has_cache_ = true;
  PlaneStack y = conv_forward(x, W.value, k, k, stride, pad);
  y.m.colwise() += b.value.col(0);
  return y;
}

PlaneStack Conv2d::backward(const PlaneStack& dy) {
  if (!has_cache_) throw std::logic_error("Conv2d: backward without recorded forward");
  W.grad += conv_backward_weights(x_cache_, dy, k, k, stride, pad);
  b.grad.col(0) += dy.m.rowwise().sum();
  return conv_backward_data(dy, W.value, c_in, x_cache_.h, x_cache_.w, k, k, stride, pad);
}

std::vector<Param*> Conv2d::params() { return {&W, &b}; }

ConvT2d::ConvT2d(const std::string& name, int c_in, int c_out, int k, int stride, int pad,
                 std::uint64_t seed)
    : c_in(c_in),
      c_out(c_out),
      k(k),
      stride(stride),
      pad(pad),
      W(name + ".W", c_in, c_out * k * k),
      b(name + ".b", c_out, 1) {
  glorot_init(W, seed, c_in * k * k, c_out);
}

PlaneStack ConvT2d::forward(const PlaneStack& x) {
  if (x.c != c_in) throw std::invalid_argument("ConvT2d: channel mismatch");
  x_cache_ = x;
  has_cache_ = true;
  int h_out = (x.h - 1) * stride - 2 * pad + k;
  int w_out = (x.w - 1) * stride - 2 * pad + k;
  if (h_out <= 0 || w_out <= 0) throw std::invalid_argument("ConvT2d: degenerate output");
  PlaneStack y = conv_backward_data(x, W.value, c_out, h_out, w_out, k, k, stride, pad);
  y.m.colwise() += b.value.col(0);
  return y;
}

PlaneStack ConvT2d::backward(const PlaneStack& dy) {
  if (!has_cache_) throw std::logic_error("ConvT2d: backward without recorded forward");
  W.grad += conv_backward_weights(dy, x_cache_, k, k, stride, pad);
  b.grad.col(0) += dy.m.rowwise().sum();
  return conv_forward(dy, W.value, k, k, stride, pad);
}

std::vector<Param*> ConvT2d::params() { return {&W, &b}; }

PlaneStack AvgPool2d::forward(const PlaneStack& x) {
  if (x.h % k != 0 || x.w % k != 0)
    throw std::invalid_argument("AvgPool2d: dimensions must divide the window");
  c_ = x.c;
  h_ = x.h;
  w_ = x.w;
  has_cache_ = true;
  PlaneStack y = PlaneStack::zeros(x.c, x.h / k, x.w / k);
  double inv = 1.0 / (static_cast<double>(k) * k);
  for (int ci = 0; ci < x.c; ++ci)
    for (int oy = 0; oy < y.h; ++oy)
      for (int ox = 0; ox < y.w; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx) acc += x.at(ci, oy * k + dy, ox * k + dx);
        y.at(ci, oy, ox) = acc * inv;
      }
  return y;
}

PlaneStack AvgPool2d::backward(const PlaneStack& dy) {
  if (!has_cache_) throw std::logic_error("AvgPool2d: backward without recorded forward");
  PlaneStack dx = PlaneStack::zeros(c_, h_, w_);
  double inv = 1.0 / (static_cast<double>(k) * k);
  for (int ci = 0; ci < c_; ++ci)
    for (int oy = 0; oy < dy.h; ++oy)
      for (int ox = 0; ox < dy.w; ++ox) {
        double g = dy.at(ci, oy, ox) * inv;
        for (int ddy = 0; ddy < k; ++ddy)
          for (int ddx = 0; ddx < k; ++ddx) dx.at(ci, oy * k + ddy, ox * k + ddx) += g;
      }
  return dx;
}

PlaneStack PlaneSoftplus::forward(const PlaneStack& x) {
  x_cache_ = x;
  has_cache_ = true;
  PlaneStack y = x;
  y.m = x.m.unaryExpr([](double v) { return softplus(v); });
  return y;
}

PlaneStack PlaneSoftplus::backward(const PlaneStack& dy) {
  if (!has_cache_) throw std::logic_error("PlaneSoftplus: backward without recorded forward");
  PlaneStack dx = dy;
  dx.m = dy.m.cwiseProduct(x_cache_.m.unaryExpr([](double v) { return sigmoid(v); }));
  return dx;
}

// ---------------------------------------------------------------------------

void AdamState::init(const std::vector<Param*>& params) {
  m_.clear();
  v_.clear();
  for (const Param* p : params) {
    m_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
  }
  count_ = params.size();
  t = 0;
}

void AdamState::step(const std::vector<Param*>& params) {
  if (params.size() != count_) throw std::invalid_argument("AdamState: parameter list changed");
  ++t;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    m_[i] = beta1 * m_[i] + (1.0 - beta1) * p.grad;
    v_[i] = beta2 * v_[i] + (1.0 - beta2) * p.grad.cwiseAbs2();
    Eigen::MatrixXd mhat = m_[i] / bc1;
    Eigen::MatrixXd denom = (v_[i] / bc2).cwiseSqrt();
    denom.array() += eps;
    p.value -= lr * mhat.cwiseQuotient(denom);
  }
}

namespace {

void write_matrix_tensor(const std::string& path, const Eigen::MatrixXd& m) {
  TensorF64 t;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  t.data.resize(m.size());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.data[static_cast<std::size_t>(r) * m.cols() + c] = m(r, c);
  write_tensor(path, t);
}

Eigen::MatrixXd read_matrix_tensor(const std::string& path, Eigen::Index rows,
                                   Eigen::Index cols) {
  TensorF64 t = read_tensor_f64(path);
  if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(rows) ||
      t.dims[1] != static_cast<std::uint64_t>(cols))
    throw std::runtime_error("tensor dims mismatch in " + path);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c)
      m(r, c) = t.data[static_cast<std::size_t>(r) * cols + c];
  return m;
}

} // namespace

void AdamState::save(const std::string& dir) const {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < count_; ++i) {
    char fname[32];
    std::snprintf(fname, sizeof(fname), "m%04zu.emt", i);
    write_matrix_tensor((fs::path(dir) / fname).string(), m_[i]);
    std::snprintf(fname, sizeof(fname), "v%04zu.emt", i);
    write_matrix_tensor((fs::path(dir) / fname).string(), v_[i]);
  }
  nlohmann::json manifest;
  manifest["t"] = t;
  manifest["count"] = count_;
  fs::path tmp = fs::path(dir) / "adam.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("AdamState::save: cannot write " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, fs::path(dir) / "adam.json");
}

void AdamState::load(const std::string& dir, const std::vector<Param*>& params) {
  fs::path mpath = fs::path(dir) / "adam.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("AdamState::load: missing manifest " + mpath.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  if (manifest.at("count").get<std::size_t>() != params.size())
    throw std::runtime_error("AdamState::load: slot count mismatch");
  init(params);
  t = manifest.at("t").get<std::int64_t>();
  for (std::size_t i = 0; i < count_; ++i) {
    char fname[32];
    std::snprintf(fname, sizeof(fname), "m%04zu.emt", i);
    m_[i] = read_matrix_tensor((fs::path(dir) / fname).string(), params[i]->value.rows(),
                               params[i]->value.cols());
    std::snprintf(fname, sizeof(fname), "v%04zu.emt", i);
    v_[i] = read_matrix_tensor((fs::path(dir) / fname).string(), params[i]->value.rows(),
                               params[i]->value.cols());
  }
}

// ---------------------------------------------------------------------------

void save_checkpoint(const std::string& dir, const std::vector<Param*>& params) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  manifest["params"] = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Param& p = *params[i];
    char fname[32];
    std::snprintf(fname, sizeof(fname), "p%04zu.emt", i);
    TensorF64 t;
    t.dims = {static_cast<std::uint64_t>(p.value.rows()),
              static_cast<std::uint64_t>(p.value.cols())};
    t.data.resize(p.value.size());
    for (Eigen::Index r = 0; r < p.value.rows(); ++r)
      for (Eigen::Index c = 0; c < p.value.cols(); ++c)
        t.data[static_cast<std::size_t>(r) * p.value.cols() + c] = p.value(r, c);
    write_tensor((fs::path(dir) / fname).string(), t);
    manifest["params"].push_back({{"name", p.name},
                                  {"rows", p.value.rows()},
                                  {"cols", p.value.cols()},
                                  {"file", fname}});
  }
  fs::path tmp = fs::path(dir) / "manifest.json.tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("save_checkpoint: cannot write " + tmp.string());
    out << manifest.dump(2) << "\n";
  }
  fs::rename(tmp, fs::path(dir) / "manifest.json");
}

void load_checkpoint(const std::string& dir, const std::vector<Param*>& params) {
  fs::path mpath = fs::path(dir) / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw std::runtime_error("load_checkpoint: missing manifest " + mpath.string());
  nlohmann::json manifest = nlohmann::json::parse(in);
  const auto& list = manifest.at("params");
  if (list.size() != params.size())
    throw std::runtime_error("load_checkpoint: parameter count mismatch (" +
                             std::to_string(list.size()) + " on disk, " +
                             std::to_string(params.size()) + " live)");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Param& p = *params[i];
    const auto& entry = list.at(i);
    if (entry.at("name").get<std::string>() != p.name)
      throw std::runtime_error("load_checkpoint: name mismatch at slot " + std::to_string(i) +
                               " (" + entry.at("name").get<std::string>() + " vs " + p.name + ")");
    auto rows = entry.at("rows").get<Eigen::Index>();
    auto cols = entry.at("cols").get<Eigen::Index>();
    if (rows != p.value.rows() || cols != p.value.cols())
      throw std::runtime_error("load_checkpoint: shape mismatch for " + p.name);
    TensorF64 t =
        read_tensor_f64((fs::path(dir) / entry.at("file").get<std::string>()).string());
    if (t.dims.size() != 2 || t.dims[0] != static_cast<std::uint64_t>(rows) ||
        t.dims[1] != static_cast<std::uint64_t>(cols))
      throw std::runtime_error("load_checkpoint: tensor dims mismatch for " + p.name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c)
        p.value(r, c) = t.data[static_cast<std::size_t>(r) * cols + c];
  }
}

double gradient_check(const std::vector<Param*>& params,
                      const std::function<double()>& loss_fn, int probe_count,
                      std::uint64_t seed) {
  for (Param* p : params) p->zero_grad();
  loss_fn();
  std::vector<Eigen::MatrixXd> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    auto eng = rng::stream(seed, "gradcheck-" + p.name, 0);
    int probes = std::min<int>(probe_count, static_cast<int>(p.value.size()));
    for (int q = 0; q < probes; ++q) {
      Eigen::Index idx =
          static_cast<Eigen::Index>(rng::uniform(eng) * static_cast<double>(p.value.size()));
      if (idx >= p.value.size()) idx = p.value.size() - 1;
      double saved = p.value(idx);
      p.value(idx) = saved + h;
      double lp = loss_fn();
      p.value(idx) = saved - h;
      double lm = loss_fn();
      p.value(idx) = saved;
      double fd = (lp - lm) / (2.0 * h);
      double an = analytic[pi](idx);
      double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  // Restore the analytic gradients the probe loop overwrote.
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return worst;
}

double directional_gradient_check(const std::vector<Param*>& params,
                                  const std::function<double()>& loss_fn,
                                  int probe_count, std::uint64_t seed) {
  for (Param* p : params) p->zero_grad();
  loss_fn();
  std::vector<Eigen::MatrixXd> analytic, saved;
  analytic.reserve(params.size());
  saved.reserve(params.size());
  for (Param* p : params) {
    analytic.push_back(p->grad);
    saved.push_back(p->value);
  }

  const double h = 1e-5;
  double worst = 0.0;
  for (int q = 0; q < probe_count; ++q) {
    auto eng = rng::stream(seed, "dirgradcheck", static_cast<std::uint64_t>(q));
    std::vector<Eigen::MatrixXd> dir;
    dir.reserve(params.size());
    double nrm2 = 0.0;
    for (Param* p : params) {
      Eigen::MatrixXd v(p->value.rows(), p->value.cols());
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = rng::normal(eng);
      nrm2 += v.squaredNorm();
      dir.push_back(std::move(v));
    }
    double inv = 1.0 / std::sqrt(nrm2);
    double an = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      dir[pi] *= inv;
      an += (analytic[pi].array() * dir[pi].array()).sum();
    }
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      params[pi]->value = saved[pi] + h * dir[pi];
    double lp = loss_fn();
    for (std::size_t pi = 0; pi < params.size(); ++pi)
      params[pi]->value = saved[pi] - h * dir[pi];
    double lm = loss_fn();
    for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->value = saved[pi];
    double fd = (lp - lm) / (2.0 * h);
    double denom = std::max({std::abs(fd), std::abs(an), 1e-8});
    worst = std::max(worst, std::abs(fd - an) / denom);
  }
  for (std::size_t pi = 0; pi < params.size(); ++pi) params[pi]->grad = analytic[pi];
  return worst;
}

} // namespace embridge::nn
