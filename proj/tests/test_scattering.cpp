#include <cmath>

#include "doctest.h"
#include "embridge/green.hpp"
#include "embridge/rng.hpp"
#include "embridge/scattering.hpp"

using namespace embridge;
using namespace embridge::em;

namespace {

struct Setup {
  VoxelGrid grid = VoxelGrid::cube({3.0, 0.0, 0.0}, 1.0, 4);
  FrequencyPlan plan = FrequencyPlan::centered(3e8, 2, 2e6);
  AntennaArray tx = AntennaArray::ula(4, {0, 0, 0}, {0, 1, 0}, 0.5, {0, 0, 1});
  AntennaArray rx = AntennaArray::ula(4, {0, 0, 0}, {0, 0, 1}, 0.5, {0, 1, 0});
};

MaterialGrid ball_material(const VoxelGrid& grid, double radius, double eps, double sig) {
  MaterialGrid mat = MaterialGrid::background(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v)
    if ((grid.voxel_center(v) - grid.center).norm() <= radius) {
      mat.eps_r[v] = eps;
      mat.sigma[v] = sig;
    }
  return mat;
}

} // namespace

TEST_CASE("incident field is zero for zero weights and homogeneous of degree one") {
  Setup s;
  double k = s.plan.k[0];
  Eigen::VectorXcd w0 = Eigen::VectorXcd::Zero(4);
  FieldGrid e0 = incident_field(s.tx, w0, s.grid, k);
  CHECK(e0.norm() == 0.0);

  Eigen::VectorXcd e1 = Eigen::VectorXcd::Zero(4);
  e1(1) = cplx(1.0, 0.0);
  FieldGrid f1 = incident_field(s.tx, e1, s.grid, k);
  FieldGrid f2 = incident_field(s.tx, 2.0 * e1, s.grid, k);
  for (std::size_t i = 0; i < f1.data.size(); ++i)
    CHECK(std::abs(f2.data[i] - 2.0 * f1.data[i]) <= 1e-15 * std::abs(f2.data[i]));
}

TEST_CASE("incident field superposes single-antenna contributions") {
  Setup s;
  double k = s.plan.k[1];
  auto eng = rng::stream(1, "inc-super");
  Eigen::VectorXcd w(4);
  for (int i = 0; i < 4; ++i) w(i) = rng::cnormal(eng);
  FieldGrid whole = incident_field(s.tx, w, s.grid, k);
  FieldGrid sum(s.grid.size());
  for (int j = 0; j < 4; ++j) {
    Eigen::VectorXcd ej = Eigen::VectorXcd::Zero(4);
    ej(j) = w(j);
    FieldGrid fj = incident_field(s.tx, ej, s.grid, k);
    for (std::size_t i = 0; i < sum.data.size(); ++i) sum.data[i] += fj.data[i];
  }
  CHECK(field_distance(whole, sum) / whole.norm() < 1e-12);
}

TEST_CASE("incident field matches the direct dyadic formula") {
  Setup s;
  double k = s.plan.k[0];
  Eigen::VectorXcd w = Eigen::VectorXcd::Zero(4);
  w(2) = cplx(0.3, -0.8);
  FieldGrid f = incident_field(s.tx, w, s.grid, k);
  for (std::size_t v : {std::size_t(0), std::size_t(17), std::size_t(63)}) {
    Eigen::Vector3cd expect =
        w(2) * (dyadic_green(s.grid.voxel_center(v), s.tx.position(2), k) *
                Eigen::Vector3cd(0, 0, 1));
    CHECK((f.vec(v) - expect).norm() <= 1e-14 * expect.norm());
  }
}

TEST_CASE("scattered field vanishes for zero contrast and is linear in chi * E") {
  Setup s;
  double k = s.plan.k[0];
  ContrastSlice chi;
  chi.chi.assign(s.grid.size(), cplx(0.0, 0.0));
  FieldGrid E(s.grid.size());
  for (auto& x : E.data) x = cplx(1.0, 0.5);
  Eigen::Vector3d obs{0.0, 0.2, 0.1};
  CHECK(scattered_field_at(obs, chi, E, s.grid, k).norm() == 0.0);

  auto eng = rng::stream(2, "scat-lin");
  for (auto& c : chi.chi) c = rng::cnormal(eng);
  Eigen::Vector3cd once = scattered_field_at(obs, chi, E, s.grid, k);
  for (auto& c : chi.chi) c *= 2.0;
  Eigen::Vector3cd twice = scattered_field_at(obs, chi, E, s.grid, k);
  CHECK((twice - 2.0 * once).norm() <= 1e-12 * twice.norm());
}

TEST_CASE("scattered field equals an independent triple-loop summation") {
  Setup s;
  double k = s.plan.k[1];
  auto eng = rng::stream(3, "scat-oracle");
  ContrastSlice chi;
  chi.chi.resize(s.grid.size());
  for (auto& c : chi.chi) c = rng::cnormal(eng);
  FieldGrid E(s.grid.size());
  for (auto& x : E.data) x = rng::cnormal(eng);
  Eigen::Vector3d obs{-0.4, 1.0, 0.3};
  Eigen::Vector3cd got = scattered_field_at(obs, chi, E, s.grid, k);
  // Oracle: naive per-voxel loop over explicit matrix-vector products.
  Eigen::Vector3cd want = Eigen::Vector3cd::Zero();
  for (int iz = 0; iz < s.grid.nz; ++iz)
    for (int iy = 0; iy < s.grid.ny; ++iy)
      for (int ix = 0; ix < s.grid.nx; ++ix) {
        std::size_t v = s.grid.index(ix, iy, iz);
        Eigen::Matrix3cd g = dyadic_green(obs, s.grid.voxel_center(ix, iy, iz), k);
        want += k * k * s.grid.voxel_volume() * (g * (chi.chi[v] * E.vec(v)));
      }
  CHECK((got - want).norm() <= 1e-12 * want.norm());
}

TEST_CASE("observation point inside the region is rejected") {
  Setup s;
  ContrastSlice chi;
  chi.chi.assign(s.grid.size(), cplx(1.0, 0.0));
  FieldGrid E(s.grid.size());
  CHECK_THROWS_AS(scattered_field_at(s.grid.center, chi, E, s.grid, s.plan.k[0]),
                  std::domain_error);
}

TEST_CASE("zero-contrast target yields a zero echo channel") {
  Setup s;
  MaterialGrid mat = MaterialGrid::background(s.grid.size());
  KernelCache cache;
  auto H = synthesize_channel(mat, s.grid, s.tx, s.rx, s.plan, cache);
  CHECK(H.norm() == 0.0);
  CHECK(H.K == s.plan.K);
  CHECK(H.N_r == 4);
  CHECK(H.N_t == 4);
}

TEST_CASE("channel columns reproduce the end-to-end pilot simulation") {
  Setup s;
  MaterialGrid mat = ball_material(s.grid, 0.3, 2.5, 0.002);
  KernelCache cache;
  SolveOptions tight{1e-12, 500};
  auto H = synthesize_channel(mat, s.grid, s.tx, s.rx, s.plan, cache, tight);
  CHECK(H.finite());
  CHECK(H.norm() > 0.0);

  auto eng = rng::stream(4, "chan-w");
  for (int k = 0; k < s.plan.K; ++k) {
    ContrastSlice chi = contrast_from_materials(mat, s.plan, k);
    auto kernel = cache.get(s.grid, s.plan.k[k]);
    for (int trial = 0; trial < 5; ++trial) {
      Eigen::VectorXcd w(4);
      for (int i = 0; i < 4; ++i) w(i) = rng::cnormal(eng);
      // End-to-end: drive the full pilot through the composite map.
      FieldGrid E_inc = incident_field(s.tx, w, s.grid, s.plan.k[k]);
      FieldGrid E_tot = solve_total_field(chi, E_inc, *kernel, tight);
      Eigen::VectorXcd y(4);
      for (int n = 0; n < 4; ++n) {
        Eigen::Vector3cd es =
            scattered_field_at(s.rx.position(n), chi, E_tot, s.grid, s.plan.k[k]);
        y(n) = s.rx.gain * (s.rx.polarization.cast<cplx>().transpose() * es)(0);
      }
      Eigen::VectorXcd via_H = H.slice(k) * w;
      CHECK((via_H - y).norm() / y.norm() < 1e-10);
    }
  }
}

TEST_CASE("permuting receive elements permutes channel rows identically") {
  Setup s;
  MaterialGrid mat = ball_material(s.grid, 0.25, 3.0, 0.0);
  KernelCache cache;
  auto H = synthesize_channel(mat, s.grid, s.tx, s.rx, s.plan, cache);
  AntennaArray rx2 = s.rx;
  rx2.positions.row(0).swap(rx2.positions.row(3));
  auto H2 = synthesize_channel(mat, s.grid, s.tx, rx2, s.plan, cache);
  for (int k = 0; k < s.plan.K; ++k) {
    Eigen::MatrixXcd a = H.slice(k);
    Eigen::MatrixXcd b = H2.slice(k);
    CHECK((a.row(0) - b.row(3)).norm() == 0.0);
    CHECK((a.row(3) - b.row(0)).norm() == 0.0);
    CHECK((a.row(1) - b.row(1)).norm() == 0.0);
  }
}

TEST_CASE("arrays inside the region are rejected") {
  Setup s;
  MaterialGrid mat = MaterialGrid::background(s.grid.size());
  AntennaArray bad = AntennaArray::ula(2, s.grid.center, {0, 1, 0}, 0.1, {0, 0, 1});
  KernelCache cache;
  CHECK_THROWS_AS(synthesize_channel(mat, s.grid, bad, s.rx, s.plan, cache),
                  std::invalid_argument);
}
