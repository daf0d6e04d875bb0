#include "embridge/ls_operator.hpp"

#include <fftw3.h>

#include <cmath>
#include <cstring>

#include "embridge/green.hpp"

namespace embridge::em {

namespace {

std::mutex& planner_mutex() {
  static std::mutex m;  // FFTW planning is not thread-safe; execution is
  return m;
}

int padded(int n) { return n > 1 ? 2 * n : 1; }

} // namespace

struct GreenKernel::Fft {
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
  // Six aligned buffers: 0..2 hold component spectra of the source field,
  // 3..5 accumulate output spectra.
  std::array<fftw_complex*, 6> buf{};

  ~Fft() {
    std::lock_guard<std::mutex> lock(planner_mutex());
    if (fwd) fftw_destroy_plan(fwd);
    if (bwd) fftw_destroy_plan(bwd);
    for (auto* b : buf)
      if (b) fftw_free(b);
  }
};

GreenKernel::GreenKernel(const VoxelGrid& grid, double k_wav) : grid_(grid), k_(k_wav) {
  if (!(k_wav > 0.0)) throw std::invalid_argument("GreenKernel: wavenumber must be positive");
  px_ = padded(grid.nx);
  py_ = padded(grid.ny);
  pz_ = padded(grid.nz);
  pvox_ = static_cast<std::size_t>(px_) * py_ * pz_;

  fft_ = std::make_unique<Fft>();
  {
    std::lock_guard<std::mutex> lock(planner_mutex());
    for (auto& b : fft_->buf)
      b = fftw_alloc_complex(pvox_);
    // In-place c2c 3D transforms; index (iz*py + iy)*px + ix, x fastest.
    fft_->fwd = fftw_plan_dft_3d(pz_, py_, px_, fft_->buf[0], fft_->buf[0], FFTW_FORWARD,
                                 FFTW_ESTIMATE);
    fft_->bwd = fftw_plan_dft_3d(pz_, py_, px_, fft_->buf[0], fft_->buf[0], FFTW_BACKWARD,
                                 FFTW_ESTIMATE);
    if (!fft_->fwd || !fft_->bwd) throw std::runtime_error("GreenKernel: FFT planning failed");
  }

  // Assemble the six unique kernel components over signed voxel offsets and
  // transform each once.
  Eigen::Vector3d h = grid.spacing();
  double dv = grid.voxel_volume();
  Eigen::Matrix3cd self = self_dyadic_integral(k_wav, dv);
  std::vector<cplx> comp[6];
  for (auto& c : comp) c.assign(pvox_, cplx(0.0, 0.0));
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  for (int iz = 0; iz < pz_; ++iz) {
    int oz = iz < grid.nz ? iz : iz - pz_;
    if (oz <= -grid.nz) continue;  // padding dead zone
    for (int iy = 0; iy < py_; ++iy) {
      int oy = iy < grid.ny ? iy : iy - py_;
      if (oy <= -grid.ny) continue;
      for (int ix = 0; ix < px_; ++ix) {
        int ox = ix < grid.nx ? ix : ix - px_;
        if (ox <= -grid.nx) continue;
        std::size_t p = (static_cast<std::size_t>(iz) * py_ + iy) * px_ + ix;
        Eigen::Matrix3cd g;
        if (ox == 0 && oy == 0 && oz == 0) {
          g = self;
        } else {
          Eigen::Vector3d offset{ox * h.x(), oy * h.y(), oz * h.z()};
          g = dyadic_green(offset, origin, k_wav) * dv;
        }
        comp[0][p] = g(0, 0);
        comp[1][p] = g(1, 1);
        comp[2][p] = g(2, 2);
        comp[3][p] = g(0, 1);
        comp[4][p] = g(0, 2);
        comp[5][p] = g(1, 2);
      }
    }
  }
  for (int c = 0; c < 6; ++c) {
    std::memcpy(fft_->buf[0], comp[c].data(), pvox_ * sizeof(fftw_complex));
    fftw_execute_dft(fft_->fwd, fft_->buf[0], fft_->buf[0]);
    spectra_[c].resize(pvox_);
    std::memcpy(spectra_[c].data(), fft_->buf[0], pvox_ * sizeof(fftw_complex));
  }
}

GreenKernel::~GreenKernel() = default;

void GreenKernel::convolve(const FieldGrid& s, FieldGrid& out) const {
  std::size_t nvox = grid_.size();
  if (s.nvox != nvox) throw std::invalid_argument("GreenKernel::convolve: field size mismatch");
  std::lock_guard<std::mutex> lock(mutex_);

  auto* bx = reinterpret_cast<cplx*>(fft_->buf[0]);
  auto* by = reinterpret_cast<cplx*>(fft_->buf[1]);
  auto* bz = reinterpret_cast<cplx*>(fft_->buf[2]);
  cplx* in[3] = {bx, by, bz};
  // Zero-pad each component into the transform grid and take its spectrum.
  for (int c = 0; c < 3; ++c) {
    std::memset(fft_->buf[c], 0, pvox_ * sizeof(fftw_complex));
    for (int iz = 0; iz < grid_.nz; ++iz)
      for (int iy = 0; iy < grid_.ny; ++iy) {
        const cplx* src = &s.data[static_cast<std::size_t>(c) * nvox +
                                  grid_.index(0, iy, iz)];
        cplx* dst = in[c] + (static_cast<std::size_t>(iz) * py_ + iy) * px_;
        std::memcpy(dst, src, grid_.nx * sizeof(cplx));
      }
    fftw_execute_dft(fft_->fwd, fft_->buf[c], fft_->buf[c]);
  }

  auto* ox = reinterpret_cast<cplx*>(fft_->buf[3]);
  auto* oy = reinterpret_cast<cplx*>(fft_->buf[4]);
  auto* oz = reinterpret_cast<cplx*>(fft_->buf[5]);
  const auto& kxx = spectra_[0];
  const auto& kyy = spectra_[1];
  const auto& kzz = spectra_[2];
  const auto& kxy = spectra_[3];
  const auto& kxz = spectra_[4];
  const auto& kyz = spectra_[5];
  for (std::size_t p = 0; p < pvox_; ++p) {
    cplx sx = bx[p], sy = by[p], sz = bz[p];
    ox[p] = kxx[p] * sx + kxy[p] * sy + kxz[p] * sz;
    oy[p] = kxy[p] * sx + kyy[p] * sy + kyz[p] * sz;
    oz[p] = kxz[p] * sx + kyz[p] * sy + kzz[p] * sz;
  }

  if (out.nvox != nvox) out = FieldGrid(nvox);
  double scale = 1.0 / static_cast<double>(pvox_);
  cplx* result[3] = {ox, oy, oz};
  for (int c = 0; c < 3; ++c) {
    fftw_execute_dft(fft_->bwd, fft_->buf[3 + c], fft_->buf[3 + c]);
    for (int iz = 0; iz < grid_.nz; ++iz)
      for (int iy = 0; iy < grid_.ny; ++iy) {
        const cplx* src = result[c] + (static_cast<std::size_t>(iz) * py_ + iy) * px_;
        cplx* dst = &out.data[static_cast<std::size_t>(c) * nvox + grid_.index(0, iy, iz)];
        for (int ix = 0; ix < grid_.nx; ++ix) dst[ix] = src[ix] * scale;
      }
  }
}

FieldGrid apply_ls_operator(const ContrastSlice& chi, const FieldGrid& E,
                            const GreenKernel& kernel) {
  std::size_t nvox = kernel.grid().size();
  if (chi.size() != nvox || E.nvox != nvox)
    throw std::invalid_argument("apply_ls_operator: shape mismatch");
  FieldGrid src(nvox);
  for (int c = 0; c < 3; ++c)
    for (std::size_t v = 0; v < nvox; ++v) src.at(c, v) = chi.chi[v] * E.at(c, v);
  FieldGrid conv;
  kernel.convolve(src, conv);
  double k2 = kernel.k_wav() * kernel.k_wav();
  FieldGrid out(nvox);
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = E.data[i] - k2 * conv.data[i];
  return out;
}

FieldGrid apply_ls_operator(const ContrastSlice& chi, const FieldGrid& E,
                            const VoxelGrid& grid, double k_wav) {
  GreenKernel kernel(grid, k_wav);
  return apply_ls_operator(chi, E, kernel);
}

Eigen::MatrixXcd assemble_dense_system(const ContrastSlice& chi, const VoxelGrid& grid,
                                       double k_wav) {
  std::size_t nvox = grid.size();
  if (nvox > 512)
    throw std::invalid_argument("assemble_dense_system: grid larger than 8^3 voxels");
  if (chi.size() != nvox)
    throw std::invalid_argument("assemble_dense_system: contrast size mismatch");
  double dv = grid.voxel_volume();
  double k2 = k_wav * k_wav;
  Eigen::Matrix3cd self = self_dyadic_integral(k_wav, dv);
  Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(3 * nvox, 3 * nvox);
  for (std::size_t m = 0; m < nvox; ++m) {
    Eigen::Vector3d rm = grid.voxel_center(m);
    for (std::size_t mp = 0; mp < nvox; ++mp) {
      Eigen::Matrix3cd gamma = (m == mp)
                                   ? self
                                   : Eigen::Matrix3cd(dyadic_green(rm, grid.voxel_center(mp),
                                                                   k_wav) *
                                                      dv);
      Eigen::Matrix3cd block = -k2 * gamma * chi.chi[mp];
      for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) A(3 * m + a, 3 * mp + b) += block(a, b);
    }
  }
  return A;
}

Eigen::VectorXcd field_to_vector(const FieldGrid& E) {
  Eigen::VectorXcd x(3 * E.nvox);
  for (std::size_t v = 0; v < E.nvox; ++v)
    for (int c = 0; c < 3; ++c) x(3 * v + c) = E.at(c, v);
  return x;
}

FieldGrid vector_to_field(const Eigen::VectorXcd& x) {
  if (x.size() % 3 != 0) throw std::invalid_argument("vector_to_field: length not 3*nvox");
  FieldGrid E(static_cast<std::size_t>(x.size() / 3));
  for (std::size_t v = 0; v < E.nvox; ++v)
    for (int c = 0; c < 3; ++c) E.at(c, v) = x(3 * v + c);
  return E;
}

std::shared_ptr<const GreenKernel> KernelCache::get(const VoxelGrid& grid, double k_wav) {
  // The kernel depends only on voxel offsets, so grids that differ by a
  // translation share one entry.
  Eigen::Vector3d h = grid.spacing();
  std::array<double, 10> key{h.x(), h.y(), h.z(),
                             static_cast<double>(grid.nx), static_cast<double>(grid.ny),
                             static_cast<double>(grid.nz), k_wav, 0.0, 0.0, 0.0};
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = cache_.find(key);
  if (it != cache_.end()) return it->second;
  auto kernel = std::make_shared<const GreenKernel>(grid, k_wav);
  cache_.emplace(key, kernel);
  return kernel;
}

std::size_t KernelCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return cache_.size();
}

} // namespace embridge::em
