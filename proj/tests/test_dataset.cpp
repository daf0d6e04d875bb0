#include <filesystem>
#include <fstream>
#include <set>
#include <unistd.h>

#include "doctest.h"
#include "embridge/dataset.hpp"
#include "embridge/tensor_io.hpp"

using namespace embridge;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const char* tag) {
    path = fs::temp_directory_path() /
           (std::string("embridge-ds-") + tag + "-" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Tiny physics so a full build stays in the millisecond range per target.
cfg::Config tiny_config(int count = 6) {
  cfg::Config c;
  c.set("physics.grid_n", "4");
  c.set("physics.subcarriers", "2");
  c.set("arrays.n_tx", "2");
  c.set("arrays.n_rx", "2");
  c.set("pilots.count", "8");
  c.set("dataset.count", std::to_string(count));
  c.set("dataset.points", "16");
  c.set("dataset.split", "[0.5, 0.25, 0.25]");
  return c;
}

} // namespace

TEST_CASE("sampled targets stay inside the sector and the region") {
  cfg::Config c = tiny_config();
  std::set<pc::ShapeKind> kinds;
  for (int i = 0; i < 40; ++i) {
    ds::SampledTarget t = ds::sample_target(c, 11, i);
    double r = t.location.head<2>().norm();
    CHECK(r >= 2.0);
    CHECK(r <= 10.0);
    CHECK(t.location.z() == 0.0);
    CHECK(std::abs(std::atan2(t.location.y(), t.location.x())) <= deg2rad(60.0) + 1e-12);
    CHECK_NOTHROW(t.local_spec.validate());
    CHECK(t.local_spec.center.norm() == 0.0);
    kinds.insert(t.local_spec.kind);
  }
  CHECK(kinds.size() == 4); // all shape families appear in 40 draws

  // Same (seed, index) reproduces; different index differs.
  ds::SampledTarget a = ds::sample_target(c, 11, 3);
  ds::SampledTarget b = ds::sample_target(c, 11, 3);
  CHECK(a.location == b.location);
  CHECK(a.local_spec.euler == b.local_spec.euler);
  CHECK(ds::sample_target(c, 11, 4).location != a.location);
}

TEST_CASE("generated datasets load back with verified digests and splits") {
  TempDir tmp("gen");
  cfg::Config c = tiny_config(8);
  ds::generate(c, 21, tmp.path);

  CHECK(fs::exists(tmp.path / "DONE"));
  CHECK(fs::exists(tmp.path / "config.json"));

  ds::Manifest m = ds::read_manifest(tmp.path);
  CHECK(m.count == 8);
  CHECK(m.seed == 21);
  CHECK(!m.partial);
  CHECK(m.targets.size() == 8);

  ds::Dataset data = ds::load(tmp.path);
  CHECK(data.targets.size() == 8);
  CHECK(data.train_ids.size() == 4);
  CHECK(data.val_ids.size() == 2);
  CHECK(data.test_ids.size() == 2);

  for (const auto& t : data.targets) {
    CHECK(t.cloud.rows() == 16);
    CHECK(t.channel.K == 2);
    CHECK(t.channel.N_r == 2);
    CHECK(t.channel.N_t == 2);
    CHECK(t.channel.finite());
    CHECK(t.channel.norm() > 0.0);
    // World-frame cloud sits inside the region cube around the location.
    Eigen::Vector3d mean = t.cloud.leftCols<3>().colwise().mean();
    CHECK((mean - t.rec.location).cwiseAbs().maxCoeff() < 0.5);
  }

  // Materials tensor matches the grid and holds a real scatterer.
  TensorF64 mat = read_tensor_f64(tmp.path / "targets" / "t0000.mat.emt");
  REQUIRE(mat.dims == std::vector<std::uint64_t>{2, 4, 4, 4});
  double max_eps = 0.0;
  for (std::size_t v = 0; v < 64; ++v) max_eps = std::max(max_eps, mat.data[v]);
  CHECK(max_eps > 1.0);
}

TEST_CASE("regenerating with the same seed reproduces the manifest digests") {
  TempDir tmp_a("rep-a");
  TempDir tmp_b("rep-b");
  cfg::Config c = tiny_config(5);
  ds::generate(c, 33, tmp_a.path);
  ds::generate(c, 33, tmp_b.path);

  ds::Manifest a = ds::read_manifest(tmp_a.path);
  ds::Manifest b = ds::read_manifest(tmp_b.path);
  REQUIRE(a.targets.size() == b.targets.size());
  for (std::size_t i = 0; i < a.targets.size(); ++i) {
    CHECK(a.targets[i].cloud_digest == b.targets[i].cloud_digest);
    CHECK(a.targets[i].materials_digest == b.targets[i].materials_digest);
    CHECK(a.targets[i].channel_digest == b.targets[i].channel_digest);
    CHECK(a.targets[i].split == b.targets[i].split);
  }

  TempDir tmp_c("rep-c");
  ds::generate(c, 34, tmp_c.path);
  CHECK(ds::read_manifest(tmp_c.path).targets[0].cloud_digest != a.targets[0].cloud_digest);
}

TEST_CASE("solver failures mark the dataset partial and loads skip them") {
  TempDir tmp("part");
  cfg::Config c = tiny_config(4);
  // A tolerance below double-precision reach makes every solve fail.
  c.set("physics.solver_tol", "1e-30");
  c.set("physics.solver_max_iter", "40");
  ds::generate(c, 5, tmp.path);

  ds::Manifest m = ds::read_manifest(tmp.path);
  CHECK(m.partial);
  for (const auto& r : m.targets) {
    CHECK(r.status == "solver_failed");
    CHECK(r.channel_digest.empty());
    CHECK(!r.cloud_digest.empty()); // geometry is still recorded
  }
  ds::Dataset data = ds::load(tmp.path);
  CHECK(data.targets.empty());
}

TEST_CASE("loads reject missing markers and corrupted files") {
  TempDir tmp("bad");
  cfg::Config c = tiny_config(3);
  ds::generate(c, 8, tmp.path);

  fs::remove(tmp.path / "DONE");
  CHECK_THROWS_AS(ds::load(tmp.path), ds::DatasetError);
  {
    std::ofstream out(tmp.path / "DONE");
    out << "ok\n";
  }
  CHECK_NOTHROW(ds::load(tmp.path));

  // Flip one payload byte: the digest check must catch it.
  fs::path victim = tmp.path / "targets" / "t0001.chan.emt";
  std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(-1, std::ios::end);
  char byte = 0;
  f.seekg(-1, std::ios::end);
  f.read(&byte, 1);
  byte = static_cast<char>(byte ^ 0x1);
  f.seekp(-1, std::ios::end);
  f.write(&byte, 1);
  f.close();
  CHECK_THROWS_AS(ds::load(tmp.path), ds::DatasetError);
}
