#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "embridge/autoencoder.hpp"
#include "embridge/channel.hpp"
#include "embridge/dsb.hpp"
#include "embridge/em.hpp"
#include "embridge/pointcloud.hpp"
#include "embridge/solver.hpp"

namespace embridge::cfg {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Experiment configuration: a nested key tree seeded with desk-scale
// defaults. Files and dotted-path overrides may only touch keys that exist
// in the defaults, with matching types, so typos fail loudly instead of
// silently running the default.
class Config {
 public:
  Config(); // desk-scale defaults
  Config(const Config&);
  Config& operator=(const Config&);
  Config(Config&&) noexcept;
  Config& operator=(Config&&) noexcept;
  ~Config();

  static Config desk_defaults();
  static Config from_file(const std::filesystem::path& path);
  static Config from_text(const std::string& json_text);

  // Dotted-path override ("dsb.epochs", "5"). The value is parsed as JSON;
  // values that do not parse are taken as plain strings for string leaves.
  void set(const std::string& dotted, const std::string& value);

  bool has(const std::string& dotted) const;
  double number(const std::string& dotted) const;
  int integer(const std::string& dotted) const;
  bool boolean(const std::string& dotted) const;
  std::string text(const std::string& dotted) const;
  std::vector<double> numbers(const std::string& dotted) const;
  std::vector<int> integers(const std::string& dotted) const;

  // Stable serialization: sorted keys, shortest round-trip numbers. Equal
  // dumps mean equal configs; the dump feeds run-directory digests.
  std::string canonical_dump() const;
  std::string subtree_dump(const std::string& dotted) const;
  std::string digest_hex() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

// Typed views of the config tree.
em::FrequencyPlan plan_from(const Config& c);
// Solver grid in the target-local frame (centered at the origin); channel
// synthesis translates the antennas instead of the grid so one Green kernel
// per subcarrier serves every target.
em::VoxelGrid local_grid_from(const Config& c);

struct ArrayPair {
  em::AntennaArray tx;
  em::AntennaArray rx;
};
ArrayPair arrays_from(const Config& c);

chan::PilotMatrix pilots_from(const Config& c);
em::SolveOptions solve_options_from(const Config& c);
pc::NormalizationSpec norm_from(const Config& c, const Eigen::Vector3d& center);
ae::AeSpec ae_spec_from(const Config& c);
ae::AeTrainOptions ae_train_options_from(const Config& c, std::uint64_t seed);
dsb::GammaSchedule schedule_from(const Config& c);
dsb::FmOptions fm_options_from(const Config& c, std::uint64_t seed);
dsb::DsbTrainOptions dsb_train_options_from(const Config& c, std::uint64_t seed);

} // namespace embridge::cfg
