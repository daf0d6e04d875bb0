#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "embridge/channel.hpp"
#include "embridge/config.hpp"
#include "embridge/em.hpp"
#include "embridge/pointcloud.hpp"

namespace embridge::ds {

struct DatasetError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TargetRecord {
  int index = 0;
  std::string id; // "t0007"
  Eigen::Vector3d location = Eigen::Vector3d::Zero();
  std::string split;  // train | val | test
  std::string status; // ok | solver_failed
  std::string kind;   // sphere | box | ellipsoid | blobs
  std::string cloud_digest;
  std::string materials_digest;
  std::string channel_digest; // empty when the solve failed
};

struct Manifest {
  std::uint64_t seed = 0;
  int count = 0;
  bool partial = false; // at least one target failed to solve
  std::vector<TargetRecord> targets;
};

// World-frame target description split into a target-local shape spec
// (region centered at the origin) plus the region's world location.
struct SampledTarget {
  pc::TargetSpec local_spec;
  Eigen::Vector3d location = Eigen::Vector3d::Zero();
};

// Deterministic draw of target `index`: location uniform over the sensing
// sector (range band x azimuth fan, z = 0), one of four shape families,
// materials uniform over the configured ranges.
SampledTarget sample_target(const cfg::Config& c, std::uint64_t seed, int index);

// Builds the dataset under `dir`: per-target point cloud (world frame),
// voxelized materials, and ground-truth channel tensors, plus manifest.json
// and a DONE marker. Parallel across targets; per-target solver failures are
// recorded in the manifest and mark the dataset partial instead of aborting.
void generate(const cfg::Config& c, std::uint64_t seed, const std::filesystem::path& dir);

struct LoadedTarget {
  TargetRecord rec;
  pc::PointCloud5D cloud;      // world frame, physical units
  chan::ChannelTensor channel; // ground truth
};

struct Dataset {
  Manifest manifest;
  std::vector<LoadedTarget> targets; // status == ok only
  std::vector<int> train_ids, val_ids, test_ids; // indices into `targets`
};

Manifest read_manifest(const std::filesystem::path& dir);

// Loads every solved target, verifying file digests against the manifest.
// Requires the DONE marker (generation finished).
Dataset load(const std::filesystem::path& dir);

std::string file_digest(const std::filesystem::path& path);

} // namespace embridge::ds
