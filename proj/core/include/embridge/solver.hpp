#pragma once

#include "embridge/ls_operator.hpp"

namespace embridge::em {

struct SolveOptions {
  double tol = 1e-8;     // relative residual target
  int max_iter = 500;
};

struct SolveInfo {
  int iterations = 0;
  double residual = 0.0;  // relative, verified against the operator
};

class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& msg, int iterations, double residual)
      : std::runtime_error(msg), iterations(iterations), residual(residual) {}
  int iterations;
  double residual;
};

// BiCGStab on the FFT-applied total-field operator, zero initial guess.
// Returns E_tot with verified relative residual <= tol; throws SolverError
// (carrying the final residual) if max_iter is exhausted.
FieldGrid solve_total_field(const ContrastSlice& chi, const FieldGrid& E_inc,
                            const GreenKernel& kernel, const SolveOptions& opts = {},
                            SolveInfo* info = nullptr);

// Convenience overload building a throwaway kernel.
FieldGrid solve_total_field(const ContrastSlice& chi, const FieldGrid& E_inc,
                            const VoxelGrid& grid, double k_wav,
                            const SolveOptions& opts = {}, SolveInfo* info = nullptr);

// Direct factorization of the identically assembled dense system (oracle
// path, grids of at most 8^3 voxels). Reports singular systems instead of
// regularizing them.
FieldGrid solve_total_field_dense(const ContrastSlice& chi, const FieldGrid& E_inc,
                                  const VoxelGrid& grid, double k_wav);

} // namespace embridge::em
