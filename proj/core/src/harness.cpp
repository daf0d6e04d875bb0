#include "embridge/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

#include "embridge/autoencoder.hpp"
#include "embridge/dataset.hpp"
#include "embridge/dsb.hpp"
#include "embridge/green.hpp"
#include "embridge/parallel.hpp"
#include "embridge/rng.hpp"
#include "embridge/scattering.hpp"
#include "embridge/tensor_io.hpp"

namespace embridge::hn {

namespace fs = std::filesystem;

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw HarnessError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::uint64_t sub_seed(std::uint64_t seed, std::string_view tag, std::uint64_t a,
                       std::uint64_t b = 0) {
  return rng::mix(rng::mix(seed ^ rng::hash_tag(tag)) + a * 0x9e3779b97f4a7c15ull + b + 1);
}

std::string run_digest(const cfg::Config& c, const std::string& command, std::uint64_t seed) {
  std::string material = c.canonical_dump();
  material += '\n';
  material += command;
  material += '\n';
  material += std::to_string(seed);
  return cfg::hex64(cfg::fnv1a64(material));
}

RunInfo prepare_run(const cfg::Config& c, const std::string& command, std::uint64_t seed,
                    const fs::path& out) {
  RunInfo info;
  info.command = command;
  std::string digest = run_digest(c, command, seed);
  info.run_dir = out / (command + "-" + digest);
  info.experiment_id = c.text("experiment.name") + "-" + digest.substr(0, 8);
  fs::create_directories(info.run_dir);

  std::string canonical = c.canonical_dump();
  fs::path cfg_file = info.run_dir / "config.json";
  if (fs::exists(cfg_file)) {
    if (read_text(cfg_file) != canonical)
      throw HarnessError("run directory " + info.run_dir.string() +
                         " holds a different configuration");
  } else {
    write_text_atomic(cfg_file, canonical);
  }

  nlohmann::json run;
  run["command"] = command;
  run["experiment_id"] = info.experiment_id;
  run["seed"] = std::to_string(seed);
  run["digest"] = digest;
  write_text_atomic(info.run_dir / "run.json", run.dump(2));

  info.reused = fs::exists(info.run_dir / "DONE");
  return info;
}

void mark_done(const fs::path& run_dir) { write_text_atomic(run_dir / "DONE", "ok\n"); }

// ---------------------------------------------------------------------------
// Stage prerequisites.

fs::path require_finished(const cfg::Config& c, const std::string& key,
                          const std::string& needed_by) {
  std::string p = c.text("paths." + key);
  if (p.empty())
    throw HarnessError(needed_by + " requires paths." + key +
                       " to point at a finished run directory");
  fs::path dir(p);
  if (!fs::exists(dir / "DONE"))
    throw HarnessError("paths." + key + " = " + p + " is not a finished run (no DONE marker)");
  return dir;
}

void check_compat(const fs::path& dep_dir, const cfg::Config& c,
                  const std::vector<std::string>& subtrees, const std::string& what) {
  cfg::Config dep = cfg::Config::from_file((dep_dir / "config.json").string());
  for (const std::string& s : subtrees) {
    if (dep.subtree_dump(s) != c.subtree_dump(s))
      throw HarnessError(what + " at " + dep_dir.string() +
                         " was produced under a different '" + s + "' configuration");
  }
}

const std::vector<std::string> kDatasetCompat = {"physics", "arrays", "dataset"};
const std::vector<std::string> kAeCompat = {"physics", "arrays", "dataset", "ae"};
const std::vector<std::string> kFmCompat = {"physics", "arrays",       "dataset",  "ae",
                                            "normalization", "bridge", "fm",       "dsb.steps"};
const std::vector<std::string> kDsbCompat = {"physics",       "arrays", "dataset", "ae",
                                             "normalization", "bridge", "dsb"};

// ---------------------------------------------------------------------------
// Model loading.

ae::AutoEncoder load_coder(const cfg::Config& c, const fs::path& ae_dir) {
  ae::AutoEncoder coder(cfg::ae_spec_from(c), 0);
  nn::load_checkpoint((ae_dir / "net").string(), coder.state_params());
  return coder;
}

dsb::BridgeNet make_bridge(const cfg::Config& c, const std::string& name, std::uint64_t seed) {
  return dsb::BridgeNet(name, 5, c.integers("bridge.hidden"), c.integer("dsb.steps"), seed,
                        c.integer("bridge.ctx_width"));
}

dsb::BridgeNet load_bridge(const cfg::Config& c, const std::string& name, const fs::path& dir) {
  dsb::BridgeNet net = make_bridge(c, name, 0);
  nn::load_checkpoint(dir.string(), net.params());
  return net;
}

void copy_values(std::vector<nn::Param*> src, std::vector<nn::Param*> dst) {
  if (src.size() != dst.size()) throw HarnessError("parameter list size mismatch on copy");
  for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value;
}

// ---------------------------------------------------------------------------
// Metrics CSV.

struct MetricRow {
  std::string scenario;
  double snr_db = 0.0;
  Eigen::Vector3d loc = Eigen::Vector3d::Zero();
  std::string metric;
  double value_db = 0.0;
};

void write_metrics(const fs::path& run_dir, const std::string& experiment_id,
                   const std::vector<MetricRow>& rows, std::uint64_t seed) {
  std::ostringstream out;
  out << "experiment_id,scenario,snr_db,loc_x,loc_y,loc_z,metric,value_db,seed\n";
  for (const MetricRow& r : rows) {
    out << experiment_id << ',' << r.scenario << ',' << fmt_g(r.snr_db) << ','
        << fmt_g(r.loc.x()) << ',' << fmt_g(r.loc.y()) << ',' << fmt_g(r.loc.z()) << ','
        << r.metric << ',' << fmt_g(r.value_db) << ',' << std::to_string(seed) << '\n';
  }
  write_text_atomic(run_dir / "metrics.csv", out.str());
}

// Mean in linear power of a list of dB values, reported back in dB.
double mean_db(const std::vector<double>& db_values) {
  if (db_values.empty()) return kDbFloor;
  double acc = 0.0;
  for (double v : db_values) acc += std::pow(10.0, v / 10.0);
  acc /= static_cast<double>(db_values.size());
  if (acc <= 0.0) return kDbFloor;
  return std::max(10.0 * std::log10(acc), kDbFloor);
}

void rethrow_collected(const std::vector<std::string>& errors) {
  for (const std::string& e : errors)
    if (!e.empty()) throw HarnessError(e);
}

// ---------------------------------------------------------------------------
// Dataset views.

std::vector<ae::AeSample> samples_of(const ds::Dataset& d, const std::vector<int>& ids) {
  std::vector<ae::AeSample> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back({d.targets[i].channel, d.targets[i].rec.location});
  return out;
}

std::vector<Eigen::MatrixXd> clouds_normalized(const cfg::Config& c, const ds::Dataset& d,
                                               const std::vector<int>& ids) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(ids.size());
  for (int i : ids) {
    const ds::LoadedTarget& t = d.targets[i];
    out.push_back(pc::normalize(t.cloud, cfg::norm_from(c, t.rec.location)));
  }
  return out;
}

std::vector<Eigen::MatrixXd> latents_of(const cfg::Config& c, ae::AutoEncoder& coder,
                                        const ds::Dataset& d, const std::vector<int>& ids) {
  std::vector<Eigen::MatrixXd> out;
  out.reserve(ids.size());
  for (int i : ids) {
    const ds::LoadedTarget& t = d.targets[i];
    out.push_back(coder.encode(t.channel, t.rec.location));
  }
  return out;
}

std::vector<int> eval_target_ids(const cfg::Config& c, const ds::Dataset& d) {
  std::vector<int> ids = d.val_ids;
  std::size_t cap = static_cast<std::size_t>(c.integer("eval.targets"));
  if (ids.size() > cap) ids.resize(cap);
  if (ids.empty()) throw HarnessError("dataset has no validation targets to evaluate on");
  return ids;
}

// ---------------------------------------------------------------------------
// Training stages.

RunInfo train_ae(const cfg::Config& c, std::uint64_t seed, const fs::path& out) {
  fs::path ds_dir = require_finished(c, "dataset", "train --stage ae");
  check_compat(ds_dir, c, kDatasetCompat, "dataset");

  RunInfo info = prepare_run(c, "train-ae", seed, out);
  if (info.reused) return info;

  ds::Dataset d = ds::load(ds_dir);
  std::vector<ae::AeSample> train = samples_of(d, d.train_ids);
  std::vector<ae::AeSample> val = samples_of(d, d.val_ids);
  if (train.empty()) throw HarnessError("dataset has no training targets");
  if (val.empty()) val = train;

  ae::AeTrainOptions opts = cfg::ae_train_options_from(c, seed);
  ae::AutoEncoder coder(cfg::ae_spec_from(c), rng::mix(seed ^ rng::hash_tag("ae-init")));
  nn::AdamState adam;
  adam.lr = opts.lr;
  adam.init(coder.params());

  fs::path net_dir = info.run_dir / "net";
  fs::path adam_dir = info.run_dir / "adam";
  fs::path state_file = info.run_dir / "state.json";
  int completed = 0;
  std::vector<std::string> history_lines;
  if (fs::exists(state_file)) {
    nlohmann::json st = nlohmann::json::parse(read_text(state_file));
    completed = st.at("completed_epochs").get<int>();
    nn::load_checkpoint(net_dir.string(), coder.state_params());
    adam.load(adam_dir.string(), coder.params());
    adam.lr = opts.lr;
    std::istringstream hist(read_text(info.run_dir / "history.csv"));
    std::string line;
    std::getline(hist, line);  // header
    while (std::getline(hist, line))
      if (!line.empty()) history_lines.push_back(line);
  }

  for (int e = completed + 1; e <= opts.epochs; ++e) {
    ae::AeTrainOptions one = opts;
    one.first_epoch = e - 1;
    one.epochs = e;
    ae::AeTrainResult r = coder.train(train, val, one, &adam);
    if (r.diverged) throw HarnessError("autoencoder training diverged: " + r.message);
    const ae::AeEpochRow& row = r.history.back();
    history_lines.push_back(std::to_string(row.epoch) + "," + fmt_g(row.train_nmse_db) + "," +
                            fmt_g(row.val_nmse_db));
    nn::save_checkpoint(net_dir.string(), coder.state_params());
    adam.save(adam_dir.string());
    nlohmann::json st;
    st["completed_epochs"] = e;
    write_text_atomic(state_file, st.dump(2));
    std::string hist = "epoch,train_nmse_db,val_nmse_db\n";
    for (const std::string& l : history_lines) hist += l + "\n";
    write_text_atomic(info.run_dir / "history.csv", hist);
  }

  mark_done(info.run_dir);
  return info;
}

RunInfo train_fm(const cfg::Config& c, std::uint64_t seed, const fs::path& out) {
  fs::path ds_dir = require_finished(c, "dataset", "train --stage fm");
  fs::path ae_dir = require_finished(c, "ae", "train --stage fm");
  check_compat(ds_dir, c, kDatasetCompat, "dataset");
  check_compat(ae_dir, c, kAeCompat, "autoencoder run");

  RunInfo info = prepare_run(c, "train-fm", seed, out);
  if (info.reused) return info;

  ds::Dataset d = ds::load(ds_dir);
  if (d.train_ids.empty()) throw HarnessError("dataset has no training targets");
  ae::AutoEncoder coder = load_coder(c, ae_dir);
  std::vector<Eigen::MatrixXd> data = clouds_normalized(c, d, d.train_ids);
  std::vector<Eigen::MatrixXd> prior = latents_of(c, coder, d, d.train_ids);

  dsb::BridgeNet F = make_bridge(c, "bridge-forward", rng::mix(seed ^ rng::hash_tag("fm-init")));
  dsb::FmResult res = dsb::fm_pretrain(F, data, prior, cfg::fm_options_from(c, seed));

  std::string hist = "round,loss\n";
  for (std::size_t i = 0; i < res.round_loss.size(); ++i)
    hist += std::to_string(i + 1) + "," + fmt_g(res.round_loss[i]) + "\n";
  write_text_atomic(info.run_dir / "history.csv", hist);
  if (res.diverged) throw HarnessError("flow-matching pretraining diverged: " + res.message);

  nn::save_checkpoint((info.run_dir / "forward").string(), F.params());
  mark_done(info.run_dir);
  return info;
}

RunInfo train_dsb(const cfg::Config& c, std::uint64_t seed, const fs::path& out) {
  fs::path ds_dir = require_finished(c, "dataset", "train --stage dsb");
  fs::path ae_dir = require_finished(c, "ae", "train --stage dsb");
  fs::path fm_dir = require_finished(c, "fm", "train --stage dsb");
  check_compat(ds_dir, c, kDatasetCompat, "dataset");
  check_compat(ae_dir, c, kAeCompat, "autoencoder run");
  check_compat(fm_dir, c, kFmCompat, "flow-matching run");

  RunInfo info = prepare_run(c, "train-dsb", seed, out);
  if (info.reused) return info;

  ds::Dataset d = ds::load(ds_dir);
  if (d.train_ids.empty()) throw HarnessError("dataset has no training targets");
  ae::AutoEncoder coder = load_coder(c, ae_dir);
  std::vector<Eigen::MatrixXd> data = clouds_normalized(c, d, d.train_ids);
  std::vector<Eigen::MatrixXd> prior = latents_of(c, coder, d, d.train_ids);

  dsb::BridgeNet F = load_bridge(c, "bridge-forward", fm_dir / "forward");
  dsb::BridgeNet B = make_bridge(c, "bridge-backward", rng::mix(seed ^ rng::hash_tag("dsb-init")));
  dsb::GammaSchedule sched = cfg::schedule_from(c);
  dsb::DsbTrainOptions opts = cfg::dsb_train_options_from(c, seed);

  std::vector<int> val_ids = d.val_ids;
  std::size_t val_cap = static_cast<std::size_t>(c.integer("dsb.val_targets"));
  if (val_ids.size() > val_cap) val_ids.resize(val_cap);
  std::function<double()> validator;
  std::uint64_t val_seed = rng::mix(seed ^ rng::hash_tag("dsb-val"));
  if (!val_ids.empty()) {
    validator = [&c, &d, &coder, &B, &sched, val_ids, val_seed]() {
      std::vector<double> chamfers;
      chamfers.reserve(val_ids.size());
      for (int i : val_ids) {
        const ds::LoadedTarget& t = d.targets[i];
        pc::NormalizationSpec norm = cfg::norm_from(c, t.rec.location);
        dsb::SenseResult sr = dsb::sense(t.channel, t.rec.location, B, sched, coder, norm,
                                         val_seed, true, false);
        chamfers.push_back(pc::chamfer_sq(pc::normalize(t.cloud, norm), sr.normalized));
      }
      return pc::mcd_db(chamfers);
    };
  }

  dsb::DsbTrainResult res =
      dsb::dsb_train(F, B, sched, data, prior, opts, validator, info.run_dir.string());

  std::string hist = "epoch,direction,mean_loss,val_mcd_db\n";
  for (const dsb::DsbHistoryRow& r : res.history) {
    hist += std::to_string(r.epoch);
    hist += r.direction == dsb::Direction::backward ? ",backward," : ",forward,";
    hist += fmt_g(r.mean_loss);
    hist += ",";
    if (std::isfinite(r.val_metric)) hist += fmt_g(r.val_metric);
    hist += "\n";
  }
  write_text_atomic(info.run_dir / "history.csv", hist);
  if (res.diverged) throw HarnessError("bridge training diverged: " + res.message);

  nn::save_checkpoint((info.run_dir / "forward").string(), F.params());
  nn::save_checkpoint((info.run_dir / "backward").string(), B.params());
  mark_done(info.run_dir);
  return info;
}

// ---------------------------------------------------------------------------
// Evaluation sweeps.

struct EvalContext {
  const cfg::Config& c;
  ds::Dataset d;
  ae::AutoEncoder coder;
  dsb::BridgeNet F;
  dsb::BridgeNet B;
  dsb::GammaSchedule sched;
  std::uint64_t seed;
  bool final_noise;
};

// Location grid shared by the two location sweeps: a single sampled shape
// moved across range x azimuth positions, its echo synthesized on the fly.
struct GridPoint {
  Eigen::Vector3d loc;
  double range = 0.0;
  double azimuth_deg = 0.0;
};

std::vector<GridPoint> location_grid(const cfg::Config& c) {
  std::vector<double> ranges = c.numbers("eval.location.ranges_m");
  std::vector<double> azimuths = c.numbers("eval.location.azimuths_deg");
  std::vector<GridPoint> pts;
  pts.reserve(ranges.size() * azimuths.size());
  for (double r : ranges)
    for (double a : azimuths) {
      double th = a * kPi / 180.0;
      pts.push_back({{r * std::cos(th), r * std::sin(th), 0.0}, r, a});
    }
  return pts;
}

chan::ChannelTensor synth_at(const cfg::Config& c, const em::MaterialGrid& materials,
                             const em::VoxelGrid& grid, const Eigen::Vector3d& loc,
                             em::KernelCache& kernels) {
  cfg::ArrayPair arrays = cfg::arrays_from(c);
  arrays.tx.positions.rowwise() -= loc.transpose();
  arrays.rx.positions.rowwise() -= loc.transpose();
  return em::synthesize_channel(materials, grid, arrays.tx, arrays.rx, cfg::plan_from(c),
                                kernels, cfg::solve_options_from(c));
}

void eval_sense_snr(EvalContext& ctx, const RunInfo& info, std::vector<MetricRow>& rows) {
  std::vector<int> ids = eval_target_ids(ctx.c, ctx.d);
  std::vector<double> snrs = ctx.c.numbers("eval.snr_db");
  chan::PilotMatrix W = cfg::pilots_from(ctx.c);
  std::size_t T = ids.size(), S = snrs.size();
  rows.resize(T * S);
  std::vector<double> chamfers(T * S, 0.0);
  std::vector<std::string> errors(T * S);

  parallel_for(0, T * S, [&](std::size_t lo, std::size_t hi) {
    ae::AutoEncoder coder(cfg::ae_spec_from(ctx.c), 0);
    copy_values(ctx.coder.state_params(), coder.state_params());
    dsb::BridgeNet B = make_bridge(ctx.c, "bridge-backward", 0);
    copy_values(ctx.B.params(), B.params());
    for (std::size_t idx = lo; idx < hi; ++idx) {
      try {
        const ds::LoadedTarget& t = ctx.d.targets[ids[idx / S]];
        double snr = snrs[idx % S];
        chan::ChannelTensor H_est = chan::estimate_channel(
            t.channel, W, snr, sub_seed(ctx.seed, "eval-rx", t.rec.index, idx % S));
        pc::NormalizationSpec norm = cfg::norm_from(ctx.c, t.rec.location);
        dsb::SenseResult sr =
            dsb::sense(H_est, t.rec.location, B, ctx.sched, coder, norm,
                       sub_seed(ctx.seed, "eval-sense", t.rec.index, idx % S),
                       !ctx.final_noise, false);
        double cs = pc::chamfer_sq(pc::normalize(t.cloud, norm), sr.normalized);
        chamfers[idx] = cs;
        rows[idx] = {"sense", snr, t.rec.location, "MCD", pc::mcd_db({cs})};
      } catch (const std::exception& e) {
        errors[idx] = e.what();
      }
    }
  });
  rethrow_collected(errors);

  std::string curve = "snr_db,mcd_db\n";
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> col;
    col.reserve(T);
    for (std::size_t t = 0; t < T; ++t) col.push_back(chamfers[t * S + s]);
    curve += fmt_g(snrs[s]) + "," + fmt_g(pc::mcd_db(col)) + "\n";
  }
  write_text_atomic(info.run_dir / "curve.csv", curve);
}

void eval_sense_location(EvalContext& ctx, const RunInfo& info, std::vector<MetricRow>& rows) {
  const cfg::Config& c = ctx.c;
  std::vector<GridPoint> pts = location_grid(c);
  double loc_snr = c.number("eval.location.snr_db");
  double ref_range = c.number("eval.location.reference_range_m");
  int M = c.integer("dataset.points");
  em::VoxelGrid grid = cfg::local_grid_from(c);
  chan::PilotMatrix W = cfg::pilots_from(c);

  ds::SampledTarget shape =
      ds::sample_target(c, rng::mix(ctx.seed ^ rng::hash_tag("eval-shape")), 0);
  pc::GeneratedTarget gen = pc::generate_target(
      shape.local_spec, M, grid, rng::mix(ctx.seed ^ rng::hash_tag("eval-shape-points")));
  em::MaterialGrid materials = pc::voxelize(gen.cloud, grid);

  em::KernelCache kernels;
  Eigen::Vector3d ref_loc(ref_range, 0.0, 0.0);
  chan::ChannelTensor H_ref = synth_at(c, materials, grid, ref_loc, kernels);
  chan::NoiseSpec noise = chan::snr_to_sigma(H_ref, W, loc_snr);

  std::size_t G = pts.size();
  rows.resize(G);
  std::vector<std::string> errors(G);
  parallel_for(0, G, [&](std::size_t lo, std::size_t hi) {
    ae::AutoEncoder coder(cfg::ae_spec_from(c), 0);
    copy_values(ctx.coder.state_params(), coder.state_params());
    dsb::BridgeNet B = make_bridge(c, "bridge-backward", 0);
    copy_values(ctx.B.params(), B.params());
    for (std::size_t g = lo; g < hi; ++g) {
      try {
        const Eigen::Vector3d& loc = pts[g].loc;
        chan::ChannelTensor H = synth_at(c, materials, grid, loc, kernels);
        std::vector<Eigen::MatrixXcd> H_k = chan::unstack_channels(H);
        std::vector<Eigen::MatrixXcd> est(H_k.size());
        for (std::size_t k = 0; k < H_k.size(); ++k) {
          Eigen::MatrixXcd Y = chan::transmit(H_k[k], W.W, noise.sigma[k],
                                              sub_seed(ctx.seed, "eval-loc-rx", g), k);
          est[k] = chan::ls_estimate(Y, W.W);
        }
        chan::ChannelTensor H_est = chan::stack_channels(est);
        pc::PointCloud5D world = gen.cloud;
        world.leftCols<3>().rowwise() += loc.transpose();
        pc::NormalizationSpec norm = cfg::norm_from(c, loc);
        dsb::SenseResult sr = dsb::sense(H_est, loc, B, ctx.sched, coder, norm,
                                         sub_seed(ctx.seed, "eval-sense-loc", g),
                                         !ctx.final_noise, false);
        double cs = pc::chamfer_sq(pc::normalize(world, norm), sr.normalized);
        rows[g] = {"sense", loc_snr, loc, "MCD", pc::mcd_db({cs})};
      } catch (const std::exception& e) {
        errors[g] = e.what();
      }
    }
  });
  rethrow_collected(errors);

  std::string gridcsv = "x_m,y_m,range_m,azimuth_deg,mcd_db\n";
  for (std::size_t g = 0; g < G; ++g)
    gridcsv += fmt_g(pts[g].loc.x()) + "," + fmt_g(pts[g].loc.y()) + "," + fmt_g(pts[g].range) +
               "," + fmt_g(pts[g].azimuth_deg) + "," + fmt_g(rows[g].value_db) + "\n";
  write_text_atomic(info.run_dir / "grid.csv", gridcsv);
}

pc::PointCloud5D add_property_noise(const pc::PointCloud5D& normalized, double snr_db,
                                    std::mt19937_64& eng) {
  double p = normalized.squaredNorm() / static_cast<double>(normalized.size());
  double sigma = std::sqrt(p / std::pow(10.0, snr_db / 10.0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  pc::PointCloud5D noisy = normalized;
  for (Eigen::Index i = 0; i < noisy.rows(); ++i)
    for (Eigen::Index j = 0; j < noisy.cols(); ++j) noisy(i, j) += sigma * gauss(eng);
  return noisy;
}

void eval_reconstruct_snr(EvalContext& ctx, const RunInfo& info, std::vector<MetricRow>& rows) {
  std::vector<int> ids = eval_target_ids(ctx.c, ctx.d);
  std::vector<double> snrs = ctx.c.numbers("eval.em_snr_db");
  std::size_t T = ids.size(), S = snrs.size();
  rows.resize(T * S);
  std::vector<std::string> errors(T * S);

  parallel_for(0, T * S, [&](std::size_t lo, std::size_t hi) {
    ae::AutoEncoder coder(cfg::ae_spec_from(ctx.c), 0);
    copy_values(ctx.coder.state_params(), coder.state_params());
    dsb::BridgeNet F = make_bridge(ctx.c, "bridge-forward", 0);
    copy_values(ctx.F.params(), F.params());
    for (std::size_t idx = lo; idx < hi; ++idx) {
      try {
        const ds::LoadedTarget& t = ctx.d.targets[ids[idx / S]];
        double snr = snrs[idx % S];
        pc::NormalizationSpec norm = cfg::norm_from(ctx.c, t.rec.location);
        std::mt19937_64 eng = rng::stream(ctx.seed, "eval-em-noise",
                                          sub_seed(ctx.seed, "eval-em", t.rec.index, idx % S));
        pc::PointCloud5D noisy =
            add_property_noise(pc::normalize(t.cloud, norm), snr, eng);
        chan::ChannelTensor H_rec =
            dsb::reconstruct(pc::denormalize(noisy, norm), t.rec.location, F, ctx.sched, coder,
                             norm, sub_seed(ctx.seed, "eval-rec", t.rec.index, idx % S));
        rows[idx] = {"reconstruct", snr, t.rec.location, "NMSE",
                     chan::nmse_db(t.channel, H_rec)};
      } catch (const std::exception& e) {
        errors[idx] = e.what();
      }
    }
  });
  rethrow_collected(errors);

  std::string curve = "em_snr_db,nmse_db\n";
  for (std::size_t s = 0; s < S; ++s) {
    std::vector<double> col;
    col.reserve(T);
    for (std::size_t t = 0; t < T; ++t) col.push_back(rows[t * S + s].value_db);
    curve += fmt_g(snrs[s]) + "," + fmt_g(mean_db(col)) + "\n";
  }
  write_text_atomic(info.run_dir / "curve.csv", curve);
}

void eval_reconstruct_location(EvalContext& ctx, const RunInfo& info,
                               std::vector<MetricRow>& rows) {
  const cfg::Config& c = ctx.c;
  std::vector<GridPoint> pts = location_grid(c);
  double em_snr = c.number("eval.em_snr_fixed_db");
  int M = c.integer("dataset.points");
  em::VoxelGrid grid = cfg::local_grid_from(c);

  ds::SampledTarget shape =
      ds::sample_target(c, rng::mix(ctx.seed ^ rng::hash_tag("eval-shape")), 0);
  pc::GeneratedTarget gen = pc::generate_target(
      shape.local_spec, M, grid, rng::mix(ctx.seed ^ rng::hash_tag("eval-shape-points")));
  em::MaterialGrid materials = pc::voxelize(gen.cloud, grid);
  em::KernelCache kernels;

  std::size_t G = pts.size();
  rows.resize(G);
  std::vector<std::string> errors(G);
  parallel_for(0, G, [&](std::size_t lo, std::size_t hi) {
    ae::AutoEncoder coder(cfg::ae_spec_from(c), 0);
    copy_values(ctx.coder.state_params(), coder.state_params());
    dsb::BridgeNet F = make_bridge(c, "bridge-forward", 0);
    copy_values(ctx.F.params(), F.params());
    for (std::size_t g = lo; g < hi; ++g) {
      try {
        const Eigen::Vector3d& loc = pts[g].loc;
        chan::ChannelTensor H = synth_at(c, materials, grid, loc, kernels);
        pc::PointCloud5D world = gen.cloud;
        world.leftCols<3>().rowwise() += loc.transpose();
        pc::NormalizationSpec norm = cfg::norm_from(c, loc);
        std::mt19937_64 eng =
            rng::stream(ctx.seed, "eval-em-noise", sub_seed(ctx.seed, "eval-em-loc", g));
        pc::PointCloud5D noisy = add_property_noise(pc::normalize(world, norm), em_snr, eng);
        chan::ChannelTensor H_rec =
            dsb::reconstruct(pc::denormalize(noisy, norm), loc, F, ctx.sched, coder, norm,
                             sub_seed(ctx.seed, "eval-rec-loc", g));
        rows[g] = {"reconstruct", em_snr, loc, "NMSE", chan::nmse_db(H, H_rec)};
      } catch (const std::exception& e) {
        errors[g] = e.what();
      }
    }
  });
  rethrow_collected(errors);

  std::string gridcsv = "x_m,y_m,range_m,azimuth_deg,nmse_db\n";
  for (std::size_t g = 0; g < G; ++g)
    gridcsv += fmt_g(pts[g].loc.x()) + "," + fmt_g(pts[g].loc.y()) + "," + fmt_g(pts[g].range) +
               "," + fmt_g(pts[g].azimuth_deg) + "," + fmt_g(rows[g].value_db) + "\n";
  write_text_atomic(info.run_dir / "grid.csv", gridcsv);
}

// ---------------------------------------------------------------------------
// Verification checks.

struct Check {
  std::string name;
  double err = 0.0;
  double threshold = 0.0;
  bool pass() const { return err < threshold; }
};

Check check_green_reciprocity(const cfg::Config& c, std::uint64_t seed) {
  em::FrequencyPlan plan = cfg::plan_from(c);
  double k = plan.k.front();
  std::mt19937_64 eng = rng::stream(seed, "verify-green");
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    Eigen::Vector3d r(u(eng), u(eng), u(eng)), rp(u(eng), u(eng), u(eng));
    if ((r - rp).norm() < 0.05) {
      --i;
      continue;
    }
    Eigen::Matrix3cd G = em::dyadic_green(r, rp, k);
    Eigen::Matrix3cd Gt = em::dyadic_green(rp, r, k);
    worst = std::max(worst, (G - Gt.transpose()).norm() / G.norm());
  }
  return {"green_reciprocity", worst, 1e-12};
}

Check check_pilot_unitarity(const cfg::Config& c) {
  chan::PilotMatrix W = cfg::pilots_from(c);
  Eigen::MatrixXcd gram = W.W * W.W.adjoint();
  Eigen::MatrixXcd target =
      W.power * Eigen::MatrixXcd::Identity(W.W.rows(), W.W.rows());
  return {"pilot_unitarity", (gram - target).norm() / target.norm(), 1e-12};
}

em::ContrastSlice random_contrast(std::size_t nvox, std::mt19937_64& eng) {
  std::uniform_real_distribution<double> mag(0.0, 2.0), ph(0.0, 2.0 * kPi);
  em::ContrastSlice chi;
  chi.chi.resize(nvox);
  for (std::size_t v = 0; v < nvox; ++v) {
    double m = mag(eng), p = ph(eng);
    chi.chi[v] = cplx(m * std::cos(p), m * std::sin(p));
  }
  return chi;
}

Check check_solver_vs_dense(const cfg::Config& c, std::uint64_t seed) {
  em::FrequencyPlan plan = cfg::plan_from(c);
  double k = plan.k.front();
  em::VoxelGrid grid = em::VoxelGrid::cube(Eigen::Vector3d::Zero(), 0.5, 4);
  std::mt19937_64 eng = rng::stream(seed, "verify-solver");
  em::ContrastSlice chi = random_contrast(grid.size(), eng);
  em::AntennaArray tx = em::AntennaArray::ula(1, Eigen::Vector3d(2.0, 0.0, 0.0),
                                              Eigen::Vector3d::UnitY(),
                                              plan.carrier_wavelength() / 2.0,
                                              Eigen::Vector3d::UnitZ());
  Eigen::VectorXcd w = Eigen::VectorXcd::Ones(1);
  em::FieldGrid E_inc = em::incident_field(tx, w, grid, k);
  em::FieldGrid E_fft = em::solve_total_field(chi, E_inc, grid, k, cfg::solve_options_from(c));
  em::FieldGrid E_dense = em::solve_total_field_dense(chi, E_inc, grid, k);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < E_fft.data.size(); ++i) {
    num += std::norm(E_fft.data[i] - E_dense.data[i]);
    den += std::norm(E_dense.data[i]);
  }
  return {"solver_vs_dense", std::sqrt(num / den), 1e-6};
}

Check check_born_linearity(const cfg::Config& c, std::uint64_t seed) {
  em::FrequencyPlan plan = cfg::plan_from(c);
  double k = plan.k.front();
  em::VoxelGrid grid = em::VoxelGrid::cube(Eigen::Vector3d::Zero(), 0.5, 4);
  std::mt19937_64 eng = rng::stream(seed, "verify-born");
  em::ContrastSlice base = random_contrast(grid.size(), eng);
  em::AntennaArray tx = em::AntennaArray::ula(1, Eigen::Vector3d(2.0, 0.0, 0.0),
                                              Eigen::Vector3d::UnitY(),
                                              plan.carrier_wavelength() / 2.0,
                                              Eigen::Vector3d::UnitZ());
  Eigen::VectorXcd w = Eigen::VectorXcd::Ones(1);
  em::FieldGrid E_inc = em::incident_field(tx, w, grid, k);
  Eigen::Vector3d rx_point(0.0, 1.5, 0.0);
  auto scatter_scaled = [&](double alpha) {
    em::ContrastSlice chi = base;
    for (cplx& v : chi.chi) v *= alpha;
    em::FieldGrid E = em::solve_total_field(chi, E_inc, grid, k, cfg::solve_options_from(c));
    return Eigen::Vector3cd(em::scattered_field_at(rx_point, chi, E, grid, k) / alpha);
  };
  Eigen::Vector3cd a = scatter_scaled(1e-3), b = scatter_scaled(1e-4);
  return {"born_linearity", (a - b).norm() / b.norm(), 1e-2};
}

Check check_ls_recovery(const cfg::Config& c, std::uint64_t seed) {
  chan::PilotMatrix W = cfg::pilots_from(c);
  std::mt19937_64 eng = rng::stream(seed, "verify-ls");
  std::normal_distribution<double> gauss(0.0, 1.0);
  int N_r = cfg::arrays_from(c).rx.positions.rows();
  int N_t = W.W.rows();
  Eigen::MatrixXcd H(N_r, N_t);
  for (int i = 0; i < N_r; ++i)
    for (int j = 0; j < N_t; ++j) H(i, j) = cplx(gauss(eng), gauss(eng));
  Eigen::MatrixXcd est = chan::ls_estimate(H * W.W, W.W);
  return {"ls_recovery", (est - H).norm() / H.norm(), 1e-12};
}

Check check_schedule_shape(const cfg::Config& c) {
  dsb::GammaSchedule sched = cfg::schedule_from(c);
  double lo = c.number("dsb.gamma_lo"), hi = c.number("dsb.gamma_hi");
  double peak = *std::max_element(sched.g.begin(), sched.g.end());
  double err = std::max({std::abs(sched.g.front() - lo) / lo,
                         std::abs(sched.g.back() - lo) / lo, std::abs(peak - hi) / hi});
  return {"schedule_shape", err, 1e-12};
}

Check check_chamfer_spot(std::uint64_t seed) {
  std::mt19937_64 eng = rng::stream(seed, "verify-chamfer");
  std::normal_distribution<double> gauss(0.0, 1.0);
  pc::PointCloud5D X(16, 5);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = gauss(eng);
  double self = pc::chamfer_sq(X, X);
  double spot = std::abs(pc::mcd_db({0.01}) - (-20.0));
  return {"chamfer_spot", std::max(self, spot), 1e-12};
}

}  // namespace

std::string run_dir_name(const cfg::Config& c, const std::string& command, std::uint64_t seed) {
  return command + "-" + run_digest(c, command, seed);
}

RunInfo cmd_gen_dataset(const cfg::Config& c, std::uint64_t seed, const fs::path& out) {
  RunInfo info = prepare_run(c, "gen-dataset", seed, out);
  if (!info.reused) ds::generate(c, seed, info.run_dir);
  return info;
}

RunInfo cmd_train(const cfg::Config& c, const std::string& stage, std::uint64_t seed,
                  const fs::path& out) {
  if (stage == "ae") return train_ae(c, seed, out);
  if (stage == "fm") return train_fm(c, seed, out);
  if (stage == "dsb") return train_dsb(c, seed, out);
  throw HarnessError("unknown training stage '" + stage + "' (expected ae, fm, or dsb)");
}

RunInfo cmd_eval(const cfg::Config& c, const std::string& scenario, const std::string& sweep,
                 std::uint64_t seed, const fs::path& out, bool final_noise) {
  if (scenario != "sense" && scenario != "reconstruct")
    throw HarnessError("unknown scenario '" + scenario + "' (expected sense or reconstruct)");
  if (sweep != "snr" && sweep != "location")
    throw HarnessError("unknown sweep '" + sweep + "' (expected snr or location)");

  std::string command = "eval-" + scenario + "-" + sweep + (final_noise ? "-fn" : "");
  fs::path ds_dir = require_finished(c, "dataset", "eval");
  fs::path ae_dir = require_finished(c, "ae", "eval");
  fs::path dsb_dir = require_finished(c, "dsb", "eval");
  check_compat(ds_dir, c, kDatasetCompat, "dataset");
  check_compat(ae_dir, c, kAeCompat, "autoencoder run");
  check_compat(dsb_dir, c, kDsbCompat, "bridge run");

  RunInfo info = prepare_run(c, command, seed, out);
  if (info.reused) return info;

  EvalContext ctx{c,
                  ds::load(ds_dir),
                  load_coder(c, ae_dir),
                  load_bridge(c, "bridge-forward", dsb_dir / "forward"),
                  load_bridge(c, "bridge-backward", dsb_dir / "backward"),
                  cfg::schedule_from(c),
                  seed,
                  final_noise};

  std::vector<MetricRow> rows;
  if (scenario == "sense" && sweep == "snr") eval_sense_snr(ctx, info, rows);
  else if (scenario == "sense") eval_sense_location(ctx, info, rows);
  else if (sweep == "snr") eval_reconstruct_snr(ctx, info, rows);
  else eval_reconstruct_location(ctx, info, rows);

  write_metrics(info.run_dir, info.experiment_id, rows, seed);
  mark_done(info.run_dir);
  return info;
}

RunInfo cmd_verify(const cfg::Config& c, std::uint64_t seed, const fs::path& out) {
  RunInfo info = prepare_run(c, "verify", seed, out);
  if (info.reused) return info;

  std::vector<Check> checks;
  checks.push_back(check_green_reciprocity(c, seed));
  checks.push_back(check_pilot_unitarity(c));
  checks.push_back(check_solver_vs_dense(c, seed));
  checks.push_back(check_born_linearity(c, seed));
  checks.push_back(check_ls_recovery(c, seed));
  checks.push_back(check_schedule_shape(c));
  checks.push_back(check_chamfer_spot(seed));

  std::vector<MetricRow> rows;
  std::string report;
  std::string failed;
  for (const Check& k : checks) {
    rows.push_back({"verify", 0.0, Eigen::Vector3d::Zero(), k.name, k.err});
    report += k.name + ": err=" + fmt_g(k.err) + " threshold=" + fmt_g(k.threshold) +
              (k.pass() ? " PASS" : " FAIL") + "\n";
    if (!k.pass()) failed += (failed.empty() ? "" : ", ") + k.name;
  }
  write_metrics(info.run_dir, info.experiment_id, rows, seed);
  write_text_atomic(info.run_dir / "verify.txt", report);
  if (!failed.empty()) throw HarnessError("verification failed: " + failed);

  mark_done(info.run_dir);
  return info;
}

}  // namespace embridge::hn
