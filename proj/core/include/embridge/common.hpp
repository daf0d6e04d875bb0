#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>

namespace embridge {

using cplx = std::complex<double>;

inline constexpr double kSpeedOfLight = 299792458.0; // m/s
inline constexpr double kVacuumEps = 8.8541878128e-12; // F/m
inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }

// dB floor reported instead of -inf when an error metric is exactly zero
inline constexpr double kDbFloor = -300.0;

inline double ratio_to_db(double ratio) {
  if (!(ratio > 0.0)) return kDbFloor;
  double db = 10.0 * std::log10(ratio);
  return db < kDbFloor ? kDbFloor : db;
}

} // namespace embridge
