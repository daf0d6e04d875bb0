#include "embridge/solver.hpp"

#include <cmath>

namespace embridge::em {

namespace {

using Vec = Eigen::VectorXcd;
using MapVec = Eigen::Map<const Vec>;

Vec as_vector(const FieldGrid& f) {
  return MapVec(f.data.data(), static_cast<Eigen::Index>(f.data.size()));
}

FieldGrid as_field(const Vec& x, std::size_t nvox) {
  FieldGrid f(nvox);
  Eigen::Map<Vec>(f.data.data(), x.size()) = x;
  return f;
}

} // namespace

FieldGrid solve_total_field(const ContrastSlice& chi, const FieldGrid& E_inc,
                            const GreenKernel& kernel, const SolveOptions& opts,
                            SolveInfo* info) {
  std::size_t nvox = kernel.grid().size();
  if (chi.size() != nvox || E_inc.nvox != nvox)
    throw std::invalid_argument("solve_total_field: shape mismatch");
  if (!(opts.tol > 0.0)) throw std::invalid_argument("solve_total_field: tol must be positive");
  if (opts.max_iter <= 0)
    throw std::invalid_argument("solve_total_field: max_iter must be positive");

  if (info) *info = SolveInfo{};
  // Zero contrast: the operator is the identity.
  if (chi.all_zero()) return E_inc;

  auto apply = [&](const Vec& x) {
    FieldGrid fx = as_field(x, nvox);
    FieldGrid ax = apply_ls_operator(chi, fx, kernel);
    return as_vector(ax);
  };

  Vec b = as_vector(E_inc);
  double bnorm = b.norm();
  if (bnorm == 0.0) return FieldGrid(nvox);

  auto true_residual = [&](const Vec& x) { return (b - apply(x)).norm() / bnorm; };

  Vec x = Vec::Zero(b.size());
  Vec r = b;
  Vec r0 = r;
  Vec p = Vec::Zero(b.size());
  Vec v = Vec::Zero(b.size());
  cplx rho(1.0, 0.0), alpha(1.0, 0.0), omega(1.0, 0.0);
  int it = 0;
  while (it < opts.max_iter) {
    ++it;
    cplx rho_new = r0.dot(r);  // conjugated inner product
    if (std::abs(rho_new) == 0.0)
      throw SolverError("solve_total_field: BiCGStab breakdown (rho = 0)", it,
                        r.norm() / bnorm);
    if (it == 1) {
      p = r;
    } else {
      cplx beta = (rho_new / rho) * (alpha / omega);
      p = r + beta * (p - omega * v);
    }
    v = apply(p);
    cplx r0v = r0.dot(v);
    if (std::abs(r0v) == 0.0)
      throw SolverError("solve_total_field: BiCGStab breakdown (r0'v = 0)", it,
                        r.norm() / bnorm);
    alpha = rho_new / r0v;
    Vec s = r - alpha * v;
    if (s.norm() / bnorm <= opts.tol) {
      x += alpha * p;
      double res = true_residual(x);
      if (res <= opts.tol) {
        if (info) *info = SolveInfo{it, res};
        return as_field(x, nvox);
      }
      r = b - apply(x);
      r0 = r;
      rho = alpha = omega = cplx(1.0, 0.0);
      p.setZero();
      v.setZero();
      continue;
    }
    Vec t = apply(s);
    cplx tt = t.dot(t);
    if (std::abs(tt) == 0.0)
      throw SolverError("solve_total_field: BiCGStab breakdown (t = 0)", it,
                        s.norm() / bnorm);
    omega = t.dot(s) / tt;
    x += alpha * p + omega * s;
    r = s - omega * t;
    rho = rho_new;
    if (r.norm() / bnorm <= opts.tol) {
      double res = true_residual(x);
      if (res <= opts.tol) {
        if (info) *info = SolveInfo{it, res};
        return as_field(x, nvox);
      }
    }
  }
  throw SolverError("solve_total_field: no convergence within max_iter", opts.max_iter,
                    true_residual(x));
}

FieldGrid solve_total_field(const ContrastSlice& chi, const FieldGrid& E_inc,
                            const VoxelGrid& grid, double k_wav, const SolveOptions& opts,
                            SolveInfo* info) {
  GreenKernel kernel(grid, k_wav);
  return solve_total_field(chi, E_inc, kernel, opts, info);
}

FieldGrid solve_total_field_dense(const ContrastSlice& chi, const FieldGrid& E_inc,
                                  const VoxelGrid& grid, double k_wav) {
  std::size_t nvox = grid.size();
  if (chi.size() != nvox || E_inc.nvox != nvox)
    throw std::invalid_argument("solve_total_field_dense: shape mismatch");
  if (chi.all_zero()) return E_inc;
  Eigen::MatrixXcd A = assemble_dense_system(chi, grid, k_wav);
  Eigen::VectorXcd b = field_to_vector(E_inc);
  Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
  Eigen::VectorXcd x = lu.solve(b);
  double bnorm = b.norm();
  if (bnorm > 0.0) {
    double res = (A * x - b).norm() / bnorm;
    if (!(res < 1e-6) || !x.allFinite())
      throw std::runtime_error("solve_total_field_dense: singular or ill-conditioned system");
  }
  return vector_to_field(x);
}

} // namespace embridge::em
