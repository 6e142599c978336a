#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "datesort/dataset_io.hpp"
#include "datesort/evalmetrics.hpp"
#include "datesort/runconfig.hpp"

namespace datesort {

inline constexpr const char* kToolVersion = "datesort 1.0.0";
inline constexpr const char* kRunManifestLayoutTag = "dsrun1";

// ---------------------------------------------------------------------------
// Stage plumbing shared by the commands
// ---------------------------------------------------------------------------

// Raw sample -> training example: normalize + resize the image to the model
// input, extract the 46 unscaled features against `ref`, copy the targets.
TrainSample prepare_sample(const FruitSample& sample, const ModelConfig& config,
                           const CalibrationReference& ref, double segmentation_threshold);

std::vector<TrainSample> prepare_samples(const std::vector<FruitSample>& samples,
                                         const ModelConfig& config, const CalibrationReference& ref,
                                         double segmentation_threshold);

// Deterministic stratified holdout: every class is shuffled separately
// (seeded) and its first round(train_fraction * n) samples go to the train
// side. Returned index lists are sorted ascending.
struct SplitIndices {
    std::vector<int> train;
    std::vector<int> eval;
};
SplitIndices stratified_split(const std::vector<int>& labels, double train_fraction,
                              std::uint64_t seed);

// Runs predict over the samples and assembles the full metrics report.
MetricsReport evaluate_model(const NetworkModel& model, const std::vector<FruitSample>& samples,
                             double segmentation_threshold);

// Fixed-row human-readable table: Accuracy, Precision, Recall, F1-Score,
// Specificity, AUC-ROC (macro aggregates) for both tasks, plus the
// shelf-life MAE in days.
std::string summary_table(const MetricsReport& report);

// Replaces the volatile "timing" value of a run manifest document with
// null, leaving every other byte-for-byte comparison meaningful. Determinism
// checks compare artifacts exactly and manifests through this filter.
std::string normalize_manifest_text(const std::string& manifest_json);

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

// Every command writes into its own stage directory under `run_root`
// (dataset/, model/, evolve/, simulate/, eval/): the stage must be missing
// or empty unless `force` clears it. Each stage directory receives the
// echoed config (config.json) and a run manifest (run_manifest.json,
// layout "dsrun1") listing every emitted file with its byte size, the
// config hash, the tool version, and per-stage wall-clock timing — the
// timing object is the only non-deterministic content.
//
// Inputs resolve through the config: train/evolve/eval read the dataset at
// `dataset_dir` (default <run_root>/dataset), simulate/eval read the model
// at `model_path` (default <run_root>/model/model.json).
struct CommandOutcome {
    std::filesystem::path dir;           // the stage directory
    std::vector<std::string> artifacts;  // stage-relative paths, sorted
    std::string summary;                 // one human-readable result block
};

CommandOutcome cmd_gen(const RunConfig& config, const std::filesystem::path& run_root, bool force);
CommandOutcome cmd_train(const RunConfig& config, const std::filesystem::path& run_root, bool force);
CommandOutcome cmd_evolve(const RunConfig& config, const std::filesystem::path& run_root, bool force);
CommandOutcome cmd_simulate(const RunConfig& config, const std::filesystem::path& run_root,
                            bool force);
CommandOutcome cmd_eval(const RunConfig& config, const std::filesystem::path& run_root, bool force);

}  // namespace datesort
