#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embridge/common.hpp"

namespace embridge::nn {

// Named trainable tensor; backward passes accumulate into grad until
// zero_grad. All math is double precision so finite-difference checks and
// cross-run determinism share one code path.
struct Param {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;

  Param() = default;
  Param(std::string n, int rows, int cols);
  void zero_grad() { grad.setZero(); }
};

// Glorot-uniform fill, deterministic under (seed, param name).
void glorot_init(Param& p, std::uint64_t seed, int fan_in, int fan_out);

double sigmoid(double x);
double softplus(double x);

// Interleaved [sin(f_p v), cos(f_p v), ...] per input component with
// geometric frequencies f_p = 10000^(-2 * (2p) / per_component_width).
// width must be even and divisible by the input dimensionality.
Eigen::VectorXd sinusoidal_embed(const Eigen::VectorXd& value, int width);
Eigen::VectorXd sinusoidal_embed(double value, int width);

// ---------------------------------------------------------------------------
// Row-batched dense layers: X is batch x d_in, parameters W (d_out x d_in).

struct Dense {
  Param W, b;
  bool with_bias = true;

  Dense() = default;
  Dense(const std::string& name, int d_in, int d_out, std::uint64_t seed, bool bias = true);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X);
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dY);
  std::vector<Param*> params();

 private:
  Eigen::MatrixXd x_cache_;
  bool has_cache_ = false;
};

struct SoftplusLayer {
  Eigen::MatrixXd forward(const Eigen::MatrixXd& X);
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dY);

 private:
  Eigen::MatrixXd x_cache_;
  bool has_cache_ = false;
};

// y = (W x) * sigmoid(W_g c + b_g) + W_b c, per batch row; the main path has
// no bias of its own.
struct ConcatSquash {
  Param W, Wg, bg, Wb;

  ConcatSquash() = default;
  ConcatSquash(const std::string& name, int d_in, int d_out, int d_ctx, std::uint64_t seed);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, const Eigen::MatrixXd& ctx);
  // Returns dX; context feeds no trainable producer in this artifact, so its
  // cotangent is folded into the parameter gradients only.
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dY);
  std::vector<Param*> params();

 private:
  Eigen::MatrixXd x_cache_, ctx_cache_, gate_cache_, main_cache_;
  bool has_cache_ = false;
};

// Stack of concatsquash blocks with softplus between (last block linear).
struct CsMlp {
  CsMlp() = default;
  CsMlp(const std::string& name, int d_in, const std::vector<int>& hidden, int d_out,
        int d_ctx, std::uint64_t seed);

  Eigen::MatrixXd forward(const Eigen::MatrixXd& X, const Eigen::MatrixXd& ctx);
  Eigen::MatrixXd backward(const Eigen::MatrixXd& dY);
  std::vector<Param*> params();
  int d_in() const { return d_in_; }
  int d_ctx() const { return d_ctx_; }

 private:
  std::vector<ConcatSquash> blocks_;
  std::vector<SoftplusLayer> acts_;
  int d_in_ = 0, d_ctx_ = 0;
};

// ---------------------------------------------------------------------------
// Channel-major planar images: row ch of m is that channel's h*w plane,
// row-major spatial layout.

struct PlaneStack {
  int c = 0, h = 0, w = 0;
  Eigen::MatrixXd m;  // c x (h*w)

  static PlaneStack zeros(int c, int h, int w);
  double& at(int ch, int y, int x) { return m(ch, y * w + x); }
  double at(int ch, int y, int x) const { return m(ch, y * w + x); }
};

// The three convolution primitives. Weight layout: c_out x (c_in*kh*kw) with
// column (ci*kh + ky)*kw + kx. conv_backward_data is the exact adjoint of
// conv_forward in the image argument; conv_backward_weights in the weights.
PlaneStack conv_forward(const PlaneStack& x, const Eigen::MatrixXd& W, int kh, int kw,
                        int stride, int pad);
PlaneStack conv_backward_data(const PlaneStack& dy, const Eigen::MatrixXd& W, int c_in,
                              int h_in, int w_in, int kh, int kw, int stride, int pad);
Eigen::MatrixXd conv_backward_weights(const PlaneStack& x, const PlaneStack& dy, int kh,
                                      int kw, int stride, int pad);

struct Conv2d {
  int c_in = 0, c_out = 0, k = 1, stride = 1, pad = 0;
  Param W, b;

  Conv2d() = default;
  Conv2d(const std::string& name, int c_in, int c_out, int k, int stride, int pad,
         std::uint64_t seed);

  PlaneStack forward(const PlaneStack& x);
  PlaneStack backward(const PlaneStack& dy);
  std::vector<Param*> params();

 private:
  PlaneStack x_cache_;
  bool has_cache_ = false;
};

// Transposed convolution: forward = adjoint of a stride-s convolution, so
// output is (h-1)*stride - 2*pad + k per axis. Weights are stored in the
// adjoint convolution's orientation: c_in x (c_out*k*k).
struct ConvT2d {
  int c_in = 0, c_out = 0, k = 1, stride = 1, pad = 0;
  Param W, b;

  ConvT2d() = default;
  ConvT2d(const std::string& name, int c_in, int c_out, int k, int stride, int pad,
          std::uint64_t seed);

  PlaneStack forward(const PlaneStack& x);
  PlaneStack backward(const PlaneStack& dy);
  std::vector<Param*> params();

 private:
  PlaneStack x_cache_;
  bool has_cache_ = false;
};

struct AvgPool2d {
  int k = 2;

  explicit AvgPool2d(int k = 2) : k(k) {}
  PlaneStack forward(const PlaneStack& x);
  PlaneStack backward(const PlaneStack& dy);

 private:
  int c_ = 0, h_ = 0, w_ = 0;
  bool has_cache_ = false;
};

struct PlaneSoftplus {
  PlaneStack forward(const PlaneStack& x);
  PlaneStack backward(const PlaneStack& dy);

 private:
  PlaneStack x_cache_;
  bool has_cache_ = false;
};

// ---------------------------------------------------------------------------

// Standard bias-corrected Adam over a fixed parameter list.
struct AdamState {
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;

  void init(const std::vector<Param*>& params);
  void step(const std::vector<Param*>& params);

  // Moment persistence for training resume: tensors per slot plus a JSON
  // manifest carrying the step count. Hyperparameters stay with the live
  // object. load() validates slot count and shapes against `params`.
  void save(const std::string& dir) const;
  void load(const std::string& dir, const std::vector<Param*>& params);

 private:
  std::vector<Eigen::MatrixXd> m_, v_;
  std::size_t count_ = 0;
};

// Checkpoints: one tensor file per parameter plus a JSON manifest of names
// and shapes; load verifies both against the live model.
void save_checkpoint(const std::string& dir, const std::vector<Param*>& params);
void load_checkpoint(const std::string& dir, const std::vector<Param*>& params);

// Max relative error between analytic parameter gradients of loss_fn and
// central finite differences (h = 1e-5) over up to probe_count entries per
// parameter. loss_fn must run forward+backward with grads freshly accumulated.
double gradient_check(const std::vector<Param*>& params,
                      const std::function<double()>& loss_fn, int probe_count,
                      std::uint64_t seed);

// Same comparison along random unit directions in the joint parameter space:
// analytic <grad, v> vs central differences of the scalar loss. Aggregating
// over all parameters keeps the probe well-conditioned for deep compositions
// whose individual coordinates carry tiny gradients.
double directional_gradient_check(const std::vector<Param*>& params,
                                  const std::function<double()>& loss_fn,
                                  int probe_count, std::uint64_t seed);

} // namespace embridge::nn
