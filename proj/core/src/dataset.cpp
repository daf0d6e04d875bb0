#include "embridge/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "embridge/parallel.hpp"
#include "embridge/rng.hpp"
#include "embridge/scattering.hpp"
#include "embridge/tensor_io.hpp"

namespace embridge::ds {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string target_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "t%04d", index);
  return buf;
}

std::uint64_t target_seed(std::uint64_t seed, std::string_view tag, int index) {
  return rng::mix(seed ^ rng::hash_tag(tag) ^
                  (static_cast<std::uint64_t>(index) + 1) * 0x9e3779b97f4a7c15ull);
}

const char* kind_name(pc::ShapeKind kind) {
  switch (kind) {
    case pc::ShapeKind::sphere: return "sphere";
    case pc::ShapeKind::box: return "box";
    case pc::ShapeKind::ellipsoid: return "ellipsoid";
    case pc::ShapeKind::blobs: return "blobs";
  }
  throw DatasetError("dataset: unknown shape kind");
}

// Split sizes: floor for train and val, remainder to test; a 0.8/0.1/0.1
// split of 500 gives exactly 400/50/50.
std::vector<std::string> assign_splits(const cfg::Config& c, std::uint64_t seed, int count) {
  std::vector<double> ratios = c.numbers("dataset.split");
  if (ratios.size() != 3) throw DatasetError("dataset: split needs 3 ratios");
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (!(std::abs(sum - 1.0) < 1e-9) || ratios[0] < 0 || ratios[1] < 0 || ratios[2] < 0)
    throw DatasetError("dataset: split ratios must be non-negative and sum to 1");
  int n_train = static_cast<int>(std::floor(ratios[0] * count));
  int n_val = static_cast<int>(std::floor(ratios[1] * count));

  std::vector<int> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), 0);
  auto eng = rng::stream(seed, "ds-split");
  for (int i = count - 1; i > 0; --i) {
    int j = static_cast<int>(rng::uniform(eng) * (i + 1));
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
  }
  std::vector<std::string> split(static_cast<std::size_t>(count));
  for (int pos = 0; pos < count; ++pos) {
    const char* tag = pos < n_train ? "train" : pos < n_train + n_val ? "val" : "test";
    split[static_cast<std::size_t>(order[static_cast<std::size_t>(pos)])] = tag;
  }
  return split;
}

TensorF64 cloud_to_tensor(const pc::PointCloud5D& cloud) {
  TensorF64 t;
  t.dims = {static_cast<std::uint64_t>(cloud.rows()), 5};
  t.data.assign(cloud.data(), cloud.data() + cloud.size()); // row-major
  return t;
}

pc::PointCloud5D tensor_to_cloud(const TensorF64& t) {
  if (t.dims.size() != 2 || t.dims[1] != 5)
    throw DatasetError("dataset: cloud tensor must be [M,5]");
  pc::PointCloud5D cloud(static_cast<Eigen::Index>(t.dims[0]), 5);
  std::copy(t.data.begin(), t.data.end(), cloud.data());
  return cloud;
}

TensorF64 materials_to_tensor(const em::MaterialGrid& mat, const em::VoxelGrid& grid) {
  TensorF64 t;
  t.dims = {2, static_cast<std::uint64_t>(grid.nx), static_cast<std::uint64_t>(grid.ny),
            static_cast<std::uint64_t>(grid.nz)};
  t.data.reserve(2 * grid.size());
  t.data.insert(t.data.end(), mat.eps_r.begin(), mat.eps_r.end());
  t.data.insert(t.data.end(), mat.sigma.begin(), mat.sigma.end());
  return t;
}

TensorC128 channel_to_tensor(const chan::ChannelTensor& H) {
  TensorC128 t;
  t.dims = {static_cast<std::uint64_t>(H.K), static_cast<std::uint64_t>(H.N_r),
            static_cast<std::uint64_t>(H.N_t)};
  t.data = H.data; // k-major, matches row-major [K, N_r, N_t]
  return t;
}

chan::ChannelTensor tensor_to_channel(const TensorC128& t) {
  if (t.dims.size() != 3) throw DatasetError("dataset: channel tensor must be rank 3");
  chan::ChannelTensor H = chan::ChannelTensor::zeros(static_cast<int>(t.dims[0]),
                                                     static_cast<int>(t.dims[1]),
                                                     static_cast<int>(t.dims[2]));
  H.data = t.data;
  H.role = chan::ChannelRole::truth;
  return H;
}

json record_to_json(const TargetRecord& r) {
  json row{{"index", r.index},
           {"id", r.id},
           {"location", {r.location.x(), r.location.y(), r.location.z()}},
           {"split", r.split},
           {"status", r.status},
           {"kind", r.kind},
           {"cloud_digest", r.cloud_digest},
           {"materials_digest", r.materials_digest}};
  if (!r.channel_digest.empty()) row["channel_digest"] = r.channel_digest;
  return row;
}

TargetRecord record_from_json(const json& row) {
  TargetRecord r;
  r.index = row.at("index").get<int>();
  r.id = row.at("id").get<std::string>();
  const auto& loc = row.at("location");
  r.location = Eigen::Vector3d(loc.at(0).get<double>(), loc.at(1).get<double>(),
                               loc.at(2).get<double>());
  r.split = row.at("split").get<std::string>();
  r.status = row.at("status").get<std::string>();
  r.kind = row.at("kind").get<std::string>();
  r.cloud_digest = row.at("cloud_digest").get<std::string>();
  r.materials_digest = row.at("materials_digest").get<std::string>();
  if (row.contains("channel_digest"))
    r.channel_digest = row.at("channel_digest").get<std::string>();
  return r;
}

void check_digest(const fs::path& file, const std::string& expected) {
  std::string got = file_digest(file);
  if (got != expected)
    throw DatasetError("dataset: digest mismatch for '" + file.string() + "' (manifest " +
                       expected + ", file " + got + ")");
}

} // namespace

SampledTarget sample_target(const cfg::Config& c, std::uint64_t seed, int index) {
  auto eng = rng::stream(seed, "ds-target", static_cast<std::uint64_t>(index));

  std::vector<double> range = c.numbers("dataset.range_m");
  std::vector<double> sizes = c.numbers("dataset.size_m");
  std::vector<double> eps = c.numbers("dataset.eps_r");
  std::vector<double> sig = c.numbers("dataset.sigma_sm");
  if (range.size() != 2 || sizes.size() != 2 || eps.size() != 2 || sig.size() != 2)
    throw DatasetError("dataset: range_m/size_m/eps_r/sigma_sm need 2 entries each");
  double half_angle = deg2rad(c.number("dataset.half_angle_deg"));
  double region = c.number("physics.region_m");
  double half = region / 2.0;

  SampledTarget out;
  double r = rng::uniform(eng, range[0], range[1]);
  double az = rng::uniform(eng, -half_angle, half_angle);
  out.location = Eigen::Vector3d(r * std::cos(az), r * std::sin(az), 0.0);

  pc::TargetSpec& spec = out.local_spec;
  spec.center = Eigen::Vector3d::Zero();
  spec.region_extent = region;
  int kind_draw = static_cast<int>(rng::uniform(eng) * 4.0);
  spec.kind = static_cast<pc::ShapeKind>(std::min(kind_draw, 3));

  // `bound` is the per-axis half-extent of the shape-frame bounding box; its
  // norm bounds the reach of any rotated box corner, which is what the spec
  // fit check inspects.
  double s = rng::uniform(eng, sizes[0], sizes[1]);
  Eigen::Vector3d bound = Eigen::Vector3d::Zero();
  switch (spec.kind) {
    case pc::ShapeKind::sphere:
      spec.size = Eigen::Vector3d(s / 2.0, 0.0, 0.0);
      bound = Eigen::Vector3d::Constant(s / 2.0);
      break;
    case pc::ShapeKind::box:
    case pc::ShapeKind::ellipsoid: {
      Eigen::Vector3d he;
      for (int a = 0; a < 3; ++a) he[a] = (s / 2.0) * rng::uniform(eng, 0.5, 1.0);
      spec.size = he;
      bound = he;
      break;
    }
    case pc::ShapeKind::blobs: {
      double envelope = s / 2.0;
      spec.size = Eigen::Vector3d::Constant(envelope);
      int n_blobs = 2 + static_cast<int>(rng::uniform(eng) * 3.0);
      for (int b = 0; b < std::min(n_blobs, 4); ++b) {
        pc::Blob blob;
        blob.radius = envelope * rng::uniform(eng, 0.25, 0.45);
        double room = envelope - blob.radius;
        for (int a = 0; a < 3; ++a) blob.offset[a] = rng::uniform(eng, -room, room);
        blob.eps_r = rng::uniform(eng, eps[0], eps[1]);
        blob.sigma = rng::uniform(eng, sig[0], sig[1]);
        for (int a = 0; a < 3; ++a)
          bound[a] = std::max(bound[a], std::abs(blob.offset[a]) + blob.radius);
        spec.blobs.push_back(blob);
      }
      break;
    }
  }
  double fit = bound.norm();
  for (int a = 0; a < 3; ++a) spec.euler[a] = rng::uniform(eng, 0.0, 2.0 * kPi);
  spec.eps_r = rng::uniform(eng, eps[0], eps[1]);
  spec.sigma = rng::uniform(eng, sig[0], sig[1]);

  double margin = 0.05 * half;
  double room = half - fit - margin;
  if (room < 0.0)
    throw DatasetError("dataset: configured target sizes do not fit the region");
  for (int a = 0; a < 3; ++a) spec.offset[a] = rng::uniform(eng, -room, room);

  spec.validate();
  return out;
}

std::string file_digest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DatasetError("dataset: cannot read '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  std::string bytes = buf.str();
  return cfg::hex64(cfg::fnv1a64(bytes));
}

void generate(const cfg::Config& c, std::uint64_t seed, const fs::path& dir) {
  em::FrequencyPlan plan = plan_from(c);
  em::VoxelGrid grid = cfg::local_grid_from(c);
  cfg::ArrayPair arrays = cfg::arrays_from(c);
  em::SolveOptions solve_opts = cfg::solve_options_from(c);
  int count = c.integer("dataset.count");
  int M = c.integer("dataset.points");
  if (count <= 0 || M <= 0) throw DatasetError("dataset: count and points must be positive");

  fs::create_directories(dir / "targets");
  write_text_atomic(dir / "config.json", c.canonical_dump() + "\n");

  std::vector<std::string> split = assign_splits(c, seed, count);
  std::vector<TargetRecord> records(static_cast<std::size_t>(count));
  em::KernelCache kernels;

  parallel_for(0, static_cast<std::size_t>(count), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      int index = static_cast<int>(i);
      SampledTarget t = sample_target(c, seed, index);
      pc::GeneratedTarget gen =
          pc::generate_target(t.local_spec, M, grid, target_seed(seed, "ds-cloud", index));

      TargetRecord& rec = records[i];
      rec.index = index;
      rec.id = target_id(index);
      rec.location = t.location;
      rec.split = split[i];
      rec.kind = kind_name(t.local_spec.kind);

      pc::PointCloud5D world = gen.cloud;
      world.col(0).array() += t.location.x();
      world.col(1).array() += t.location.y();
      world.col(2).array() += t.location.z();

      // The solver sees the cloud's own voxelization, not the analytic
      // rasterization: the channel then reflects exactly the M points the
      // networks train on, and small shapes cannot fall between voxel
      // centers and vanish.
      em::MaterialGrid materials = pc::voxelize(gen.cloud, grid);

      fs::path cloud_file = dir / "targets" / (rec.id + ".cloud.emt");
      fs::path mat_file = dir / "targets" / (rec.id + ".mat.emt");
      fs::path chan_file = dir / "targets" / (rec.id + ".chan.emt");
      write_tensor(cloud_file, cloud_to_tensor(world));
      write_tensor(mat_file, materials_to_tensor(materials, grid));
      rec.cloud_digest = file_digest(cloud_file);
      rec.materials_digest = file_digest(mat_file);

      // Antennas translated into the target-local frame: physically identical
      // (free-space translation invariance) and keeps the kernel cache keyed
      // on one grid for the whole dataset.
      em::AntennaArray tx = arrays.tx, rx = arrays.rx;
      tx.positions.rowwise() -= t.location.transpose();
      rx.positions.rowwise() -= t.location.transpose();
      try {
        chan::ChannelTensor H =
            em::synthesize_channel(materials, grid, tx, rx, plan, kernels, solve_opts);
        write_tensor(chan_file, channel_to_tensor(H));
        rec.channel_digest = file_digest(chan_file);
        rec.status = "ok";
      } catch (const em::SolverError&) {
        rec.status = "solver_failed";
      }
    }
  });

  Manifest manifest;
  manifest.seed = seed;
  manifest.count = count;
  manifest.targets = records;
  manifest.partial = std::any_of(records.begin(), records.end(),
                                 [](const TargetRecord& r) { return r.status != "ok"; });

  json doc{{"seed", seed},
           {"count", count},
           {"partial", manifest.partial},
           {"targets", json::array()}};
  for (const auto& r : records) doc["targets"].push_back(record_to_json(r));
  write_text_atomic(dir / "manifest.json", doc.dump(2) + "\n");
  write_text_atomic(dir / "DONE", "ok\n");
}

Manifest read_manifest(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DatasetError("dataset: no manifest in '" + dir.string() + "'");
  json doc;
  try {
    in >> doc;
  } catch (const json::parse_error& e) {
    throw DatasetError(std::string("dataset: manifest parse error: ") + e.what());
  }
  Manifest m;
  m.seed = doc.at("seed").get<std::uint64_t>();
  m.count = doc.at("count").get<int>();
  m.partial = doc.at("partial").get<bool>();
  for (const auto& row : doc.at("targets")) m.targets.push_back(record_from_json(row));
  if (static_cast<int>(m.targets.size()) != m.count)
    throw DatasetError("dataset: manifest row count does not match count");
  return m;
}

Dataset load(const fs::path& dir) {
  if (!fs::exists(dir / "DONE"))
    throw DatasetError("dataset: '" + dir.string() + "' has no DONE marker (incomplete build)");
  Dataset ds;
  ds.manifest = read_manifest(dir);
  for (const auto& rec : ds.manifest.targets) {
    if (rec.status != "ok") continue;
    fs::path cloud_file = dir / "targets" / (rec.id + ".cloud.emt");
    fs::path chan_file = dir / "targets" / (rec.id + ".chan.emt");
    check_digest(cloud_file, rec.cloud_digest);
    check_digest(chan_file, rec.channel_digest);
    LoadedTarget t;
    t.rec = rec;
    t.cloud = tensor_to_cloud(read_tensor_f64(cloud_file));
    t.channel = tensor_to_channel(read_tensor_c128(chan_file));
    int pos = static_cast<int>(ds.targets.size());
    if (rec.split == "train")
      ds.train_ids.push_back(pos);
    else if (rec.split == "val")
      ds.val_ids.push_back(pos);
    else
      ds.test_ids.push_back(pos);
    ds.targets.push_back(std::move(t));
  }
  return ds;
}

} // namespace embridge::ds
