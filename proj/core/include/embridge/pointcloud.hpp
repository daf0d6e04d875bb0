#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "embridge/common.hpp"
#include "embridge/em.hpp"

namespace embridge::pc {

// Rows are [x, y, z, eps_r, sigma]; physical units for raw clouds,
// dimensionless after normalize().
using PointCloud5D = Eigen::Matrix<double, Eigen::Dynamic, 5, Eigen::RowMajor>;

struct Point5D {
  double x = 0, y = 0, z = 0, eps = 0, sig = 0;
};

Point5D cloud_row(const PointCloud5D& cloud, int i);

// Affine map (v - center) / scale applied per column; invertible since all
// scales are positive.
struct NormalizationSpec {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // x_c, y_c, z_c [m]
  Eigen::Vector3d scale = Eigen::Vector3d::Constant(0.25);  // x_d, y_d, z_d [m]
  double eps_c = 3.0;
  double eps_d = 1.5;
  double sig_c = 0.025;  // [S/m]
  double sig_d = 0.015;  // [S/m]

  static NormalizationSpec defaults(const Eigen::Vector3d& center);
  void validate() const;
};

PointCloud5D normalize(const PointCloud5D& raw, const NormalizationSpec& spec);
PointCloud5D denormalize(const PointCloud5D& normed, const NormalizationSpec& spec);

enum class ShapeKind { sphere, box, ellipsoid, blobs };

struct Blob {
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // in the shape frame [m]
  double radius = 0.0;
  double eps_r = 1.0;
  double sigma = 0.0;  // [S/m]
};

// Procedural target: a homogeneous sphere/box/ellipsoid or a union of
// material-tagged spherical blobs, positioned inside the cubic imaging
// region D (edge region_extent, centered at `center`), which itself sits in
// the sensing sector (radius <= 30 m, azimuth within +/-60 degrees).
struct TargetSpec {
  ShapeKind kind = ShapeKind::sphere;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // region D center, world [m]
  Eigen::Vector3d offset = Eigen::Vector3d::Zero();  // shape center within D [m]
  Eigen::Vector3d size = Eigen::Vector3d::Zero();    // radius / half-extents / semiaxes [m]
  Eigen::Vector3d euler = Eigen::Vector3d::Zero();   // yaw, pitch, roll [rad]
  double eps_r = 1.0;
  double sigma = 0.0;  // [S/m]
  std::vector<Blob> blobs;
  double region_extent = 1.0;  // edge of cubic region D [m]

  Eigen::Matrix3d rotation() const;
  double volume() const;  // blob overlap not subtracted
  bool contains(const Eigen::Vector3d& world) const;
  // Material at an interior world point (blob overlaps average); background
  // (eps_r = 1, sigma = 0) outside.
  void material_at(const Eigen::Vector3d& world, double& eps, double& sig) const;
  void validate() const;
};

struct GeneratedTarget {
  PointCloud5D cloud;         // M x 5 physical units
  em::MaterialGrid materials; // analytic rasterization on the given grid
};

// Samples M points uniformly inside the shape (rejection from the bounding
// box) with their local materials attached, and rasterizes the shape onto
// `grid` by voxel-center membership. Deterministic under (seed).
GeneratedTarget generate_target(const TargetSpec& spec, int M, const em::VoxelGrid& grid,
                                std::uint64_t seed);

// Voxel material = mean of contained points' materials; empty voxels stay
// background. Throws if any point lies outside the grid.
em::MaterialGrid voxelize(const PointCloud5D& raw, const em::VoxelGrid& grid);

// Symmetric mean-min squared distance over all five dimensions:
// (1/M_x) sum_x min_y ||x-y||^2 + (1/M_y) sum_y min_x ||x-y||^2.
double chamfer_sq(const PointCloud5D& x, const PointCloud5D& y);
double chamfer_sq(const PointCloud5D& x, const PointCloud5D& y,
                  const Eigen::Array<double, 5, 1>& weights);

// 10 log10(mean chamfer_sq) over a test set; identical-cloud sets hit the
// -300 dB floor sentinel.
double mcd_db(const std::vector<double>& chamfer_values);

} // namespace embridge::pc
