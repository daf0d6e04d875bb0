#include <cmath>

#include "doctest.h"
#include "embridge/rng.hpp"
#include "embridge/solver.hpp"

using namespace embridge;
using namespace embridge::em;

namespace {

ContrastSlice random_contrast(std::mt19937_64& eng, std::size_t n, double max_abs) {
  ContrastSlice chi;
  chi.chi.resize(n);
  for (auto& c : chi.chi) {
    c = cplx(rng::uniform(eng, 0.0, max_abs), -rng::uniform(eng, 0.0, max_abs));
    if (std::abs(c) > max_abs) c *= max_abs / std::abs(c);
  }
  return chi;
}

FieldGrid random_field(std::mt19937_64& eng, std::size_t n) {
  FieldGrid f(n);
  for (auto& x : f.data) x = rng::cnormal(eng);
  return f;
}

} // namespace

TEST_CASE("zero contrast returns the incident field in zero iterations") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 4);
  double k = 2.0 * kPi / 2.0;
  ContrastSlice chi;
  chi.chi.assign(grid.size(), cplx(0.0, 0.0));
  auto eng = rng::stream(1, "solve-id");
  FieldGrid E = random_field(eng, grid.size());
  SolveInfo info;
  FieldGrid sol = solve_total_field(chi, E, grid, k, {}, &info);
  CHECK(field_distance(sol, E) == 0.0);
  CHECK(info.iterations == 0);
  FieldGrid dense = solve_total_field_dense(chi, E, grid, k);
  CHECK(field_distance(dense, E) == 0.0);
}

TEST_CASE("iterative solve matches the dense oracle on random contrasts") {
  auto eng = rng::stream(2, "solve-oracle");
  for (int n : {3, 4}) {
    auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, n);
    double k = 2.0 * kPi / 2.0;  // voxel well below the wavelength
    GreenKernel kernel(grid, k);
    for (int trial = 0; trial < 4; ++trial) {
      ContrastSlice chi = random_contrast(eng, grid.size(), 2.0);
      FieldGrid E = random_field(eng, grid.size());
      SolveInfo info;
      FieldGrid fast = solve_total_field(chi, E, kernel, {1e-8, 500}, &info);
      FieldGrid dense = solve_total_field_dense(chi, E, grid, k);
      double rel = field_distance(fast, dense) / dense.norm();
      CHECK(rel < 1e-6);
      CHECK(info.iterations > 0);
      CHECK(info.residual <= 1e-8);
    }
  }
}

TEST_CASE("returned solution satisfies the operator equation") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 4);
  double k = 2.0 * kPi / 1.8;
  auto eng = rng::stream(3, "solve-res");
  ContrastSlice chi = random_contrast(eng, grid.size(), 2.0);
  FieldGrid E = random_field(eng, grid.size());
  GreenKernel kernel(grid, k);
  FieldGrid sol = solve_total_field(chi, E, kernel);
  FieldGrid back = apply_ls_operator(chi, sol, kernel);
  CHECK(field_distance(back, E) / E.norm() < 1e-8);
  // Dense solutions satisfy the same equation even tighter.
  FieldGrid dense = solve_total_field_dense(chi, E, grid, k);
  FieldGrid back2 = apply_ls_operator(chi, dense, kernel);
  CHECK(field_distance(back2, E) / E.norm() < 1e-10);
}

TEST_CASE("Born regime: scattered part scales linearly for small contrast") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 4);
  double k = 2.0 * kPi / 2.0;
  auto eng = rng::stream(4, "solve-born");
  ContrastSlice base = random_contrast(eng, grid.size(), 1.0);
  FieldGrid E = random_field(eng, grid.size());
  GreenKernel kernel(grid, k);

  auto scattered_over_alpha = [&](double alpha) {
    ContrastSlice chi = base;
    for (auto& c : chi.chi) c *= alpha;
    FieldGrid sol = solve_total_field(chi, E, kernel, {1e-12, 500});
    FieldGrid out(grid.size());
    for (std::size_t i = 0; i < out.data.size(); ++i)
      out.data[i] = (sol.data[i] - E.data[i]) / alpha;
    return out;
  };

  FieldGrid s3 = scattered_over_alpha(1e-3);
  FieldGrid s4 = scattered_over_alpha(1e-4);
  CHECK(field_distance(s3, s4) / s3.norm() < 1e-2);
  // First-order perturbation: ||E_t - E_inc|| / ||E_inc|| = O(alpha).
  ContrastSlice chi = base;
  for (auto& c : chi.chi) c *= 1e-3;
  FieldGrid sol = solve_total_field(chi, E, kernel, {1e-12, 500});
  CHECK(field_distance(sol, E) / E.norm() < 0.05);
}

TEST_CASE("exhausting max_iter reports the residual") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 4);
  double k = 2.0 * kPi / 1.5;
  auto eng = rng::stream(5, "solve-fail");
  ContrastSlice chi = random_contrast(eng, grid.size(), 2.0);
  FieldGrid E = random_field(eng, grid.size());
  try {
    solve_total_field(chi, E, grid, k, {1e-14, 1});
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK(e.iterations == 1);
    CHECK(e.residual > 0.0);
    CHECK(std::isfinite(e.residual));
  }
}

TEST_CASE("zero incident field solves to zero") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 3);
  double k = 2.0 * kPi;
  auto eng = rng::stream(6, "solve-zero");
  ContrastSlice chi = random_contrast(eng, grid.size(), 1.0);
  FieldGrid E(grid.size());
  FieldGrid sol = solve_total_field(chi, E, grid, k);
  CHECK(sol.norm() == 0.0);
}

TEST_CASE("invalid options are rejected") {
  auto grid = VoxelGrid::cube({0, 0, 0}, 1.0, 2);
  ContrastSlice chi;
  chi.chi.assign(grid.size(), cplx(0.5, 0.0));
  FieldGrid E(grid.size());
  E.at(0, 0) = cplx(1.0, 0.0);
  GreenKernel kernel(grid, 3.0);
  CHECK_THROWS_AS(solve_total_field(chi, E, kernel, {0.0, 10}), std::invalid_argument);
  CHECK_THROWS_AS(solve_total_field(chi, E, kernel, {1e-8, 0}), std::invalid_argument);
}
