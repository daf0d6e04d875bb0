#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "embridge/config.hpp"

namespace embridge::hn {

struct HarnessError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Every command materializes one content-addressed run directory under the
// output root, named "<command>-<digest>" with the digest covering the full
// canonical config, the command (stage/scenario/sweep/flags included), and
// the seed. Identical inputs map to the same directory with byte-identical
// contents; changed inputs land elsewhere, so no run can clobber another.
struct RunInfo {
  std::filesystem::path run_dir;
  std::string experiment_id; // "<experiment.name>-<digest prefix>"
  std::string command;
  bool reused = false; // finished run found in place; nothing recomputed
};

std::string run_dir_name(const cfg::Config& c, const std::string& command, std::uint64_t seed);

// Builds the target dataset (clouds, materials, ground-truth channels,
// manifest) under the run directory.
RunInfo cmd_gen_dataset(const cfg::Config& c, std::uint64_t seed,
                        const std::filesystem::path& out);

// stage: "ae" | "fm" | "dsb". Prerequisite run directories come from
// paths.dataset / paths.ae / paths.fm in the config and must hold finished
// runs with compatible configurations. The autoencoder stage checkpoints
// per epoch and resumes an interrupted run; the bridge stages rerun from
// their deterministic start when incomplete.
RunInfo cmd_train(const cfg::Config& c, const std::string& stage, std::uint64_t seed,
                  const std::filesystem::path& out);

// scenario: "sense" | "reconstruct"; sweep: "snr" | "location". Emits
// metrics.csv (one row per sweep point and target) plus a plot-ready
// aggregate CSV. final_noise keeps the noise on the terminal backward step
// of sensing rollouts instead of taking the deterministic mean step.
RunInfo cmd_eval(const cfg::Config& c, const std::string& scenario, const std::string& sweep,
                 std::uint64_t seed, const std::filesystem::path& out,
                 bool final_noise = false);

// Fast self-contained oracle suite (reciprocity, solver-vs-dense, Born
// linearity, pilot unitarity, estimator recovery, schedule and metric
// spot checks); writes the same metrics.csv schema plus verify.txt.
RunInfo cmd_verify(const cfg::Config& c, std::uint64_t seed, const std::filesystem::path& out);

} // namespace embridge::hn
