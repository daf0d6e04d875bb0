#include "embridge/pointcloud.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "embridge/rng.hpp"

namespace embridge::pc {

Point5D cloud_row(const PointCloud5D& cloud, int i) {
  if (i < 0 || i >= cloud.rows()) throw std::out_of_range("cloud_row: index out of range");
  return Point5D{cloud(i, 0), cloud(i, 1), cloud(i, 2), cloud(i, 3), cloud(i, 4)};
}

NormalizationSpec NormalizationSpec::defaults(const Eigen::Vector3d& center) {
  NormalizationSpec spec;
  spec.center = center;
  return spec;
}

void NormalizationSpec::validate() const {
  if (!center.allFinite() || !scale.allFinite())
    throw std::invalid_argument("NormalizationSpec: non-finite center or scale");
  if (!(scale.minCoeff() > 0.0) || !(eps_d > 0.0) || !(sig_d > 0.0))
    throw std::invalid_argument("NormalizationSpec: scales must be positive");
  if (!std::isfinite(eps_c) || !std::isfinite(sig_c))
    throw std::invalid_argument("NormalizationSpec: non-finite material center");
}

PointCloud5D normalize(const PointCloud5D& raw, const NormalizationSpec& spec) {
  spec.validate();
  PointCloud5D out(raw.rows(), 5);
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    for (int c = 0; c < 3; ++c) out(i, c) = (raw(i, c) - spec.center[c]) / spec.scale[c];
    out(i, 3) = (raw(i, 3) - spec.eps_c) / spec.eps_d;
    out(i, 4) = (raw(i, 4) - spec.sig_c) / spec.sig_d;
  }
  return out;
}

PointCloud5D denormalize(const PointCloud5D& normed, const NormalizationSpec& spec) {
  spec.validate();
  PointCloud5D out(normed.rows(), 5);
  for (Eigen::Index i = 0; i < normed.rows(); ++i) {
    for (int c = 0; c < 3; ++c) out(i, c) = normed(i, c) * spec.scale[c] + spec.center[c];
    out(i, 3) = normed(i, 3) * spec.eps_d + spec.eps_c;
    out(i, 4) = normed(i, 4) * spec.sig_d + spec.sig_c;
  }
  return out;
}

Eigen::Matrix3d TargetSpec::rotation() const {
  using Eigen::AngleAxisd;
  using Eigen::Vector3d;
  return (AngleAxisd(euler[0], Vector3d::UnitZ()) * AngleAxisd(euler[1], Vector3d::UnitY()) *
          AngleAxisd(euler[2], Vector3d::UnitX()))
      .toRotationMatrix();
}

double TargetSpec::volume() const {
  switch (kind) {
    case ShapeKind::sphere:
      return 4.0 / 3.0 * kPi * std::pow(size[0], 3);
    case ShapeKind::box:
      return 8.0 * size[0] * size[1] * size[2];
    case ShapeKind::ellipsoid:
      return 4.0 / 3.0 * kPi * size[0] * size[1] * size[2];
    case ShapeKind::blobs: {
      double v = 0.0;
      for (const auto& b : blobs) v += 4.0 / 3.0 * kPi * std::pow(b.radius, 3);
      return v;
    }
  }
  return 0.0;
}

namespace {

bool frame_contains(const TargetSpec& spec, const Eigen::Vector3d& pf) {
  switch (spec.kind) {
    case ShapeKind::sphere:
      return pf.norm() <= spec.size[0];
    case ShapeKind::box:
      return std::abs(pf[0]) <= spec.size[0] && std::abs(pf[1]) <= spec.size[1] &&
             std::abs(pf[2]) <= spec.size[2];
    case ShapeKind::ellipsoid: {
      double q = 0.0;
      for (int c = 0; c < 3; ++c) q += (pf[c] / spec.size[c]) * (pf[c] / spec.size[c]);
      return q <= 1.0;
    }
    case ShapeKind::blobs:
      for (const auto& b : spec.blobs)
        if ((pf - b.offset).norm() <= b.radius) return true;
      return false;
  }
  return false;
}

Eigen::Vector3d to_frame(const TargetSpec& spec, const Eigen::Vector3d& world) {
  return spec.rotation().transpose() * (world - spec.center - spec.offset);
}

// Axis-aligned bounds of the shape in its own frame.
void frame_bounds(const TargetSpec& spec, Eigen::Vector3d& lo, Eigen::Vector3d& hi) {
  switch (spec.kind) {
    case ShapeKind::sphere:
      lo = Eigen::Vector3d::Constant(-spec.size[0]);
      hi = Eigen::Vector3d::Constant(spec.size[0]);
      return;
    case ShapeKind::box:
    case ShapeKind::ellipsoid:
      lo = -spec.size;
      hi = spec.size;
      return;
    case ShapeKind::blobs: {
      lo = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
      hi = -lo;
      for (const auto& b : spec.blobs) {
        lo = lo.cwiseMin(b.offset - Eigen::Vector3d::Constant(b.radius));
        hi = hi.cwiseMax(b.offset + Eigen::Vector3d::Constant(b.radius));
      }
      return;
    }
  }
}

void check_material_range(double eps, double sig, const char* what) {
  if (!(eps >= 1.0) || !(eps <= 5.0))
    throw std::invalid_argument(std::string(what) + ": eps_r must lie in [1, 5]");
  if (!(sig >= 0.0) || !(sig <= 0.05))
    throw std::invalid_argument(std::string(what) + ": sigma must lie in [0, 0.05] S/m");
}

} // namespace

bool TargetSpec::contains(const Eigen::Vector3d& world) const {
  return frame_contains(*this, to_frame(*this, world));
}

void TargetSpec::material_at(const Eigen::Vector3d& world, double& eps, double& sig) const {
  Eigen::Vector3d pf = to_frame(*this, world);
  if (!frame_contains(*this, pf)) {
    eps = 1.0;
    sig = 0.0;
    return;
  }
  if (kind != ShapeKind::blobs) {
    eps = eps_r;
    sig = sigma;
    return;
  }
  int hits = 0;
  eps = 0.0;
  sig = 0.0;
  for (const auto& b : blobs)
    if ((pf - b.offset).norm() <= b.radius) {
      ++hits;
      eps += b.eps_r;
      sig += b.sigma;
    }
  eps /= hits;
  sig /= hits;
}

void TargetSpec::validate() const {
  if (!center.allFinite() || !offset.allFinite() || !size.allFinite() || !euler.allFinite())
    throw std::invalid_argument("TargetSpec: non-finite geometry");
  if (!(region_extent > 0.0)) throw std::invalid_argument("TargetSpec: region extent must be positive");
  if (kind == ShapeKind::blobs) {
    if (blobs.empty()) throw std::invalid_argument("TargetSpec: blobs shape needs at least one blob");
    for (const auto& b : blobs) {
      if (!(b.radius > 0.0)) throw std::invalid_argument("TargetSpec: blob radius must be positive");
      check_material_range(b.eps_r, b.sigma, "TargetSpec blob");
    }
  } else {
    int needed = kind == ShapeKind::sphere ? 1 : 3;
    for (int c = 0; c < needed; ++c)
      if (!(size[c] > 0.0)) throw std::invalid_argument("TargetSpec: shape size must be positive");
    check_material_range(eps_r, sigma, "TargetSpec");
  }
  if (!(volume() > 0.0)) throw std::invalid_argument("TargetSpec: degenerate shape volume");

  // The shape (via its rotated frame box) must fit inside region D.
  Eigen::Vector3d lo, hi;
  frame_bounds(*this, lo, hi);
  Eigen::Matrix3d R = rotation();
  double half = region_extent / 2.0;
  for (int cx = 0; cx < 2; ++cx)
    for (int cy = 0; cy < 2; ++cy)
      for (int cz = 0; cz < 2; ++cz) {
        Eigen::Vector3d corner(cx ? hi[0] : lo[0], cy ? hi[1] : lo[1], cz ? hi[2] : lo[2]);
        Eigen::Vector3d w = R * corner + offset;
        for (int c = 0; c < 3; ++c)
          if (std::abs(w[c]) > half + 1e-12)
            throw std::invalid_argument("TargetSpec: shape does not fit inside region D");
      }

  // Region center must sit in the sensing sector.
  double range = center.norm();
  if (range > 30.0) throw std::invalid_argument("TargetSpec: location beyond 30 m sector radius");
  double az = std::atan2(center.y(), center.x());
  if (std::abs(az) > deg2rad(60.0) + 1e-12)
    throw std::invalid_argument("TargetSpec: location outside +/-60 degree sector");
}

GeneratedTarget generate_target(const TargetSpec& spec, int M, const em::VoxelGrid& grid,
                                std::uint64_t seed) {
  spec.validate();
  if (M <= 0) throw std::invalid_argument("generate_target: M must be positive");

  Eigen::Vector3d lo, hi;
  frame_bounds(spec, lo, hi);
  Eigen::Matrix3d R = spec.rotation();

  auto eng = rng::stream(seed, "cloud-points", 0);
  GeneratedTarget out;
  out.cloud.resize(M, 5);
  std::uint64_t attempts = 0;
  const std::uint64_t max_attempts = 10000ull + 10000ull * static_cast<std::uint64_t>(M);
  for (int i = 0; i < M;) {
    if (++attempts > max_attempts)
      throw std::runtime_error("generate_target: rejection sampling failed (degenerate shape volume)");
    Eigen::Vector3d pf;
    for (int c = 0; c < 3; ++c) pf[c] = rng::uniform(eng, lo[c], hi[c]);
    if (!frame_contains(spec, pf)) continue;
    Eigen::Vector3d world = R * pf + spec.center + spec.offset;
    double eps, sig;
    spec.material_at(world, eps, sig);
    out.cloud(i, 0) = world[0];
    out.cloud(i, 1) = world[1];
    out.cloud(i, 2) = world[2];
    out.cloud(i, 3) = eps;
    out.cloud(i, 4) = sig;
    ++i;
  }

  out.materials = em::MaterialGrid::background(grid.size());
  for (std::size_t v = 0; v < grid.size(); ++v) {
    Eigen::Vector3d c = grid.voxel_center(v);
    if (!spec.contains(c)) continue;
    double eps, sig;
    spec.material_at(c, eps, sig);
    out.materials.eps_r[v] = eps;
    out.materials.sigma[v] = sig;
  }
  return out;
}

em::MaterialGrid voxelize(const PointCloud5D& raw, const em::VoxelGrid& grid) {
  em::MaterialGrid mat = em::MaterialGrid::background(grid.size());
  std::vector<double> eps_acc(grid.size(), 0.0), sig_acc(grid.size(), 0.0);
  std::vector<double> eps_min(grid.size()), eps_max(grid.size());
  std::vector<double> sig_min(grid.size()), sig_max(grid.size());
  std::vector<std::uint32_t> count(grid.size(), 0);
  Eigen::Vector3d lower = grid.lower_corner();
  Eigen::Vector3d h = grid.spacing();
  for (Eigen::Index i = 0; i < raw.rows(); ++i) {
    Eigen::Vector3d p(raw(i, 0), raw(i, 1), raw(i, 2));
    if (!grid.contains(p))
      throw std::invalid_argument("voxelize: point " + std::to_string(i) + " lies outside the grid");
    int ix = std::min(static_cast<int>((p[0] - lower[0]) / h[0]), grid.nx - 1);
    int iy = std::min(static_cast<int>((p[1] - lower[1]) / h[1]), grid.ny - 1);
    int iz = std::min(static_cast<int>((p[2] - lower[2]) / h[2]), grid.nz - 1);
    std::size_t v = grid.index(ix, iy, iz);
    double eps = raw(i, 3), sig = raw(i, 4);
    if (count[v] == 0) {
      eps_min[v] = eps_max[v] = eps;
      sig_min[v] = sig_max[v] = sig;
    } else {
      eps_min[v] = std::min(eps_min[v], eps);
      eps_max[v] = std::max(eps_max[v], eps);
      sig_min[v] = std::min(sig_min[v], sig);
      sig_max[v] = std::max(sig_max[v], sig);
    }
    eps_acc[v] += eps;
    sig_acc[v] += sig;
    ++count[v];
  }
  for (std::size_t v = 0; v < grid.size(); ++v)
    if (count[v] > 0) {
      // Unanimous voxels keep the exact value; mixed voxels take the mean.
      mat.eps_r[v] = eps_min[v] == eps_max[v] ? eps_min[v] : eps_acc[v] / count[v];
      mat.sigma[v] = sig_min[v] == sig_max[v] ? sig_min[v] : sig_acc[v] / count[v];
    }
  return mat;
}

namespace {

double directed_mean_min(const PointCloud5D& x, const PointCloud5D& y,
                         const Eigen::Array<double, 5, 1>& w) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < y.rows(); ++j) {
      double d = 0.0;
      for (int c = 0; c < 5; ++c) {
        double t = x(i, c) - y(j, c);
        d += w[c] * t * t;
      }
      if (d < best) best = d;
    }
    total += best;
  }
  return total / static_cast<double>(x.rows());
}

} // namespace

double chamfer_sq(const PointCloud5D& x, const PointCloud5D& y,
                  const Eigen::Array<double, 5, 1>& weights) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("chamfer_sq: empty cloud");
  if (!(weights >= 0.0).all() || !weights.isFinite().all())
    throw std::invalid_argument("chamfer_sq: weights must be finite and non-negative");
  return directed_mean_min(x, y, weights) + directed_mean_min(y, x, weights);
}

double chamfer_sq(const PointCloud5D& x, const PointCloud5D& y) {
  return chamfer_sq(x, y, Eigen::Array<double, 5, 1>::Ones());
}

double mcd_db(const std::vector<double>& chamfer_values) {
  if (chamfer_values.empty()) throw std::invalid_argument("mcd_db: empty test set");
  double mean = 0.0;
  for (double v : chamfer_values) {
    if (!std::isfinite(v) || v < 0.0)
      throw std::invalid_argument("mcd_db: chamfer values must be finite and non-negative");
    mean += v;
  }
  mean /= static_cast<double>(chamfer_values.size());
  if (mean == 0.0) return kDbFloor;
  return 10.0 * std::log10(mean);
}

} // namespace embridge::pc
