#include "embridge/config.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace embridge::cfg {

using nlohmann::json;

namespace {

json desk_tree() {
  return json{
      {"experiment", {{"name", "desk"}}},
      {"physics",
       {{"carrier_hz", 2.0e8},
        {"spacing_hz", 2.0e6},
        {"subcarriers", 4},
        {"grid_n", 8},
        {"region_m", 1.0},
        {"solver_tol", 1.0e-8},
        {"solver_max_iter", 500}}},
      {"arrays",
       {{"n_tx", 8},
        {"n_rx", 8},
        {"spacing_wavelengths", 0.5},
        {"rx_offset_m", {0.0, 0.0, 0.75}}}},
      {"pilots", {{"kind", "unitary_comb"}, {"count", 32}, {"power", 1.0}}},
      {"dataset",
       {{"count", 500},
        {"points", 64},
        {"split", {0.8, 0.1, 0.1}},
        {"range_m", {2.0, 10.0}},
        {"half_angle_deg", 60.0},
        {"size_m", {0.15, 0.35}},
        {"eps_r", {1.5, 5.0}},
        {"sigma_sm", {0.0, 0.05}}}},
      {"normalization",
       {{"scale_m", {0.25, 0.25, 0.25}},
        {"eps_center", 3.0},
        {"eps_halfspan", 1.5},
        {"sigma_center", 0.025},
        {"sigma_halfspan", 0.015}}},
      {"ae",
       {{"embed_width", 48},
        {"range_gain", true},
        {"epochs", 40},
        {"batch", 16},
        {"lr", 1.0e-3},
        {"noise_augment", false},
        {"noise_snr_db", 20.0}}},
      {"bridge", {{"hidden", {64, 64}}, {"ctx_width", 32}}},
      {"fm",
       {{"rounds", 3},
        {"steps_per_round", 200},
        {"batch", 32},
        {"lr", 2.0e-3},
        {"paired", true}}},
      {"dsb",
       {{"steps", 20},
        {"gamma_lo", 1.0e-3},
        {"gamma_hi", 5.0e-2},
        {"epochs", 10},
        {"steps_per_half", 100},
        {"batch", 32},
        {"lr", 1.0e-3},
        {"plateau_window", 25},
        {"plateau_rel", 1.0e-3},
        {"val_targets", 8}}},
      {"eval",
       {{"targets", 25},
        {"snr_db", {0.0, 10.0, 20.0, 30.0}},
        {"em_snr_db", {0.0, 10.0, 20.0, 30.0}},
        {"em_snr_fixed_db", 20.0},
        {"location",
         {{"ranges_m", {2.0, 4.0, 6.0, 8.0, 10.0}},
          {"azimuths_deg", {-40.0, -20.0, 0.0, 20.0, 40.0}},
          {"reference_range_m", 6.0},
          {"snr_db", 30.0}}}}},
      {"paths", {{"dataset", ""}, {"ae", ""}, {"fm", ""}, {"dsb", ""}}},
  };
}

std::string type_name(const json& v) {
  if (v.is_object()) return "object";
  if (v.is_array()) return "array";
  if (v.is_string()) return "string";
  if (v.is_boolean()) return "boolean";
  if (v.is_number()) return "number";
  return v.type_name();
}

bool same_kind(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) return true;
  if (a.is_array() && b.is_array()) return true;
  return a.type() == b.type();
}

// Merge src over dst, requiring every src key to already exist in dst with a
// compatible type. Paths in errors are dotted from the root.
void merge_strict(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object())
    throw ConfigError("config: expected an object at '" + (prefix.empty() ? "<root>" : prefix) + "'");
  for (const auto& [key, value] : src.items()) {
    std::string path = prefix.empty() ? key : prefix + "." + key;
    auto it = dst.find(key);
    if (it == dst.end()) throw ConfigError("config: unknown key '" + path + "'");
    if (it->is_object()) {
      merge_strict(*it, value, path);
      continue;
    }
    if (!same_kind(*it, value))
      throw ConfigError("config: key '" + path + "' expects " + type_name(*it) + ", got " +
                        type_name(value));
    *it = value;
  }
}

const json* find(const json& root, const std::string& dotted) {
  const json* node = &root;
  std::size_t begin = 0;
  while (true) {
    std::size_t end = dotted.find('.', begin);
    std::string key = dotted.substr(begin, end == std::string::npos ? end : end - begin);
    if (key.empty()) throw ConfigError("config: empty key segment in '" + dotted + "'");
    if (!node->is_object()) return nullptr;
    auto it = node->find(key);
    if (it == node->end()) return nullptr;
    node = &*it;
    if (end == std::string::npos) return node;
    begin = end + 1;
  }
}

const json& require(const json& root, const std::string& dotted) {
  const json* node = find(root, dotted);
  if (!node) throw ConfigError("config: unknown key '" + dotted + "'");
  return *node;
}

} // namespace

struct Config::Impl {
  json tree;
};

Config::Config() : impl_(std::make_unique<Impl>()) { impl_->tree = desk_tree(); }
Config::Config(const Config& other) : impl_(std::make_unique<Impl>(*other.impl_)) {}
Config& Config::operator=(const Config& other) {
  if (this != &other) *impl_ = *other.impl_;
  return *this;
}
Config::Config(Config&&) noexcept = default;
Config& Config::operator=(Config&&) noexcept = default;
Config::~Config() = default;

Config Config::desk_defaults() { return Config(); }

Config Config::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return from_text(buf.str());
  } catch (const ConfigError& e) {
    throw ConfigError(std::string(e.what()) + " (in '" + path.string() + "')");
  }
}

Config Config::from_text(const std::string& json_text) {
  json parsed;
  try {
    parsed = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  Config c;
  merge_strict(c.impl_->tree, parsed, "");
  return c;
}

void Config::set(const std::string& dotted, const std::string& value) {
  json* node = const_cast<json*>(find(impl_->tree, dotted));
  if (!node) throw ConfigError("config: unknown key '" + dotted + "'");
  if (node->is_object())
    throw ConfigError("config: '" + dotted + "' is a section, not a value");
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded()) {
    if (!node->is_string())
      throw ConfigError("config: cannot parse value '" + value + "' for '" + dotted + "'");
    parsed = value;
  }
  if (node->is_string() && !parsed.is_string()) parsed = value; // "5" stays text for string leaves
  if (!same_kind(*node, parsed))
    throw ConfigError("config: key '" + dotted + "' expects " + type_name(*node) + ", got " +
                      type_name(parsed));
  *node = parsed;
}

bool Config::has(const std::string& dotted) const { return find(impl_->tree, dotted) != nullptr; }

double Config::number(const std::string& dotted) const {
  const json& v = require(impl_->tree, dotted);
  if (!v.is_number()) throw ConfigError("config: '" + dotted + "' is not a number");
  return v.get<double>();
}

int Config::integer(const std::string& dotted) const {
  const json& v = require(impl_->tree, dotted);
  if (!v.is_number()) throw ConfigError("config: '" + dotted + "' is not a number");
  double d = v.get<double>();
  int i = static_cast<int>(d);
  if (static_cast<double>(i) != d)
    throw ConfigError("config: '" + dotted + "' is not an integer");
  return i;
}

bool Config::boolean(const std::string& dotted) const {
  const json& v = require(impl_->tree, dotted);
  if (!v.is_boolean()) throw ConfigError("config: '" + dotted + "' is not a boolean");
  return v.get<bool>();
}

std::string Config::text(const std::string& dotted) const {
  const json& v = require(impl_->tree, dotted);
  if (!v.is_string()) throw ConfigError("config: '" + dotted + "' is not a string");
  return v.get<std::string>();
}

std::vector<double> Config::numbers(const std::string& dotted) const {
  const json& v = require(impl_->tree, dotted);
  if (!v.is_array()) throw ConfigError("config: '" + dotted + "' is not an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) {
    if (!e.is_number()) throw ConfigError("config: '" + dotted + "' holds a non-number");
    out.push_back(e.get<double>());
  }
  return out;
}

std::vector<int> Config::integers(const std::string& dotted) const {
  std::vector<double> d = numbers(dotted);
  std::vector<int> out;
  out.reserve(d.size());
  for (double x : d) {
    int i = static_cast<int>(x);
    if (static_cast<double>(i) != x)
      throw ConfigError("config: '" + dotted + "' holds a non-integer");
    out.push_back(i);
  }
  return out;
}

std::string Config::canonical_dump() const {
  // nlohmann objects keep keys sorted and numbers serialize to their
  // shortest round-trip form, so dump() is already canonical.
  return impl_->tree.dump(2);
}

std::string Config::subtree_dump(const std::string& dotted) const {
  return require(impl_->tree, dotted).dump(2);
}

std::string Config::digest_hex() const { return hex64(fnv1a64(canonical_dump())); }

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

em::FrequencyPlan plan_from(const Config& c) {
  return em::FrequencyPlan::centered(c.number("physics.carrier_hz"),
                                     c.integer("physics.subcarriers"),
                                     c.number("physics.spacing_hz"));
}

em::VoxelGrid local_grid_from(const Config& c) {
  return em::VoxelGrid::cube(Eigen::Vector3d::Zero(), c.number("physics.region_m"),
                             c.integer("physics.grid_n"));
}

ArrayPair arrays_from(const Config& c) {
  em::FrequencyPlan plan = plan_from(c);
  double spacing = c.number("arrays.spacing_wavelengths") * plan.carrier_wavelength();
  Eigen::Vector3d axis = Eigen::Vector3d::UnitY();
  Eigen::Vector3d pol = Eigen::Vector3d::UnitZ();
  std::vector<double> off = c.numbers("arrays.rx_offset_m");
  if (off.size() != 3) throw ConfigError("config: arrays.rx_offset_m needs 3 entries");
  ArrayPair pair{em::AntennaArray::ula(c.integer("arrays.n_tx"), Eigen::Vector3d::Zero(), axis,
                                       spacing, pol),
                 em::AntennaArray::ula(c.integer("arrays.n_rx"),
                                       Eigen::Vector3d(off[0], off[1], off[2]), axis, spacing,
                                       pol)};
  return pair;
}

chan::PilotMatrix pilots_from(const Config& c) {
  std::string kind = c.text("pilots.kind");
  if (kind != "unitary_comb")
    throw ConfigError("config: pilots.kind '" + kind +
                      "' is not generable without a steering vector; use unitary_comb");
  return chan::make_pilots(chan::PilotKind::unitary_comb, c.integer("arrays.n_tx"),
                           c.integer("pilots.count"), c.number("pilots.power"));
}

em::SolveOptions solve_options_from(const Config& c) {
  em::SolveOptions opts;
  opts.tol = c.number("physics.solver_tol");
  opts.max_iter = c.integer("physics.solver_max_iter");
  return opts;
}

pc::NormalizationSpec norm_from(const Config& c, const Eigen::Vector3d& center) {
  pc::NormalizationSpec spec;
  spec.center = center;
  std::vector<double> s = c.numbers("normalization.scale_m");
  if (s.size() != 3) throw ConfigError("config: normalization.scale_m needs 3 entries");
  spec.scale = Eigen::Vector3d(s[0], s[1], s[2]);
  spec.eps_c = c.number("normalization.eps_center");
  spec.eps_d = c.number("normalization.eps_halfspan");
  spec.sig_c = c.number("normalization.sigma_center");
  spec.sig_d = c.number("normalization.sigma_halfspan");
  spec.validate();
  return spec;
}

ae::AeSpec ae_spec_from(const Config& c) {
  ae::AeSpec spec;
  spec.K = c.integer("physics.subcarriers");
  spec.N_r = c.integer("arrays.n_rx");
  spec.N_t = c.integer("arrays.n_tx");
  spec.M = c.integer("dataset.points");
  spec.D_p = c.integer("ae.embed_width");
  spec.range_gain = c.boolean("ae.range_gain");
  spec.validate();
  return spec;
}

ae::AeTrainOptions ae_train_options_from(const Config& c, std::uint64_t seed) {
  ae::AeTrainOptions opts;
  opts.epochs = c.integer("ae.epochs");
  opts.batch = c.integer("ae.batch");
  opts.lr = c.number("ae.lr");
  opts.seed = seed;
  if (c.boolean("ae.noise_augment")) opts.noise_snr_db = c.number("ae.noise_snr_db");
  return opts;
}

dsb::GammaSchedule schedule_from(const Config& c) {
  return dsb::GammaSchedule::triangle(c.integer("dsb.steps"), c.number("dsb.gamma_lo"),
                                      c.number("dsb.gamma_hi"));
}

dsb::FmOptions fm_options_from(const Config& c, std::uint64_t seed) {
  dsb::FmOptions opts;
  opts.rounds = c.integer("fm.rounds");
  opts.steps_per_round = c.integer("fm.steps_per_round");
  opts.batch = c.integer("fm.batch");
  opts.lr = c.number("fm.lr");
  opts.paired = c.boolean("fm.paired");
  opts.seed = seed;
  return opts;
}

dsb::DsbTrainOptions dsb_train_options_from(const Config& c, std::uint64_t seed) {
  dsb::DsbTrainOptions opts;
  opts.epochs = c.integer("dsb.epochs");
  opts.steps_per_half = c.integer("dsb.steps_per_half");
  opts.batch = c.integer("dsb.batch");
  opts.lr = c.number("dsb.lr");
  opts.plateau_window = c.integer("dsb.plateau_window");
  opts.plateau_rel = c.number("dsb.plateau_rel");
  opts.seed = seed;
  return opts;
}

} // namespace embridge::cfg
