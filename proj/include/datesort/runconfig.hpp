#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "datesort/adaptor.hpp"
#include "datesort/evolver.hpp"
#include "datesort/neuralmodel.hpp"
#include "datesort/synthcrop.hpp"

namespace datesort {

// One JSON document configures every pipeline stage. Each section mirrors
// the owning module's config struct; omitted keys take the defaults below
// and unknown keys are rejected with their full path.
//
// Seeding: the document carries a single root seed. Every module seed is
// derived from it as derive_seed(seed, stage_label) — splitmix64 over the
// root xor the FNV-1a hash of the label — with the labels "gen", "split",
// "train", "evolve", "evolve-template", "adapt", and "stream". Per-module
// seed keys are deliberately not part of the schema.
struct RunConfig {
    std::uint64_t seed = 42;
    std::string output_dir = "run";
    std::string dataset_dir;  // empty: <output_dir>/dataset
    std::string model_path;   // empty: <output_dir>/model/model.json

    GeneratorConfig generator;
    std::map<Variety, int> counts;  // per-variety sample counts for gen

    double segmentation_threshold = kDefaultSegmentationThreshold;
    double train_fraction = 0.8;  // stratified train share, remainder evaluates

    ModelConfig model;  // also the GA's architecture template
    GAConfig ga;        // model_template and seed are filled by the parser

    int simulate_steps = 3000;
    DriftConfig drift;
    AdaptConfig adapt;
};

// Defaults for every section, counts shaped like the source data
// (paper_shaped_spec), module seeds derived from the root seed.
RunConfig default_run_config();

// Re-derives every module seed from config.seed and refreshes the derived
// wiring (GA model template from the model section, adaptor segmentation
// threshold from the preprocess section). Called by the parser; call again
// after overriding the root seed or any mirrored section.
void finalize_run_config(RunConfig& config);

// Strict parse: unknown keys, wrong types, and unknown variety names are
// ValidationErrors naming the offending key path. Omitted keys default.
RunConfig parse_run_config(const std::string& json_text);

// Reads and parses a config file; open and parse failures name the file.
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical serialization: every key explicit, fixed order. Parsing the
// output reproduces the config exactly (round-trip identity).
std::string run_config_to_json(const RunConfig& config);

// Cross-section semantic validation; delegates to each module's validator.
void validate_run_config(const RunConfig& config);

// FNV-1a over the canonical serialization, as a 16-digit hex string.
// Manifests store this next to the echoed config file.
std::string config_hash_hex(const RunConfig& config);

// Stage seed derivation exposed for tests and the pipeline.
std::uint64_t stage_seed(const RunConfig& config, std::string_view stage);

}  // namespace datesort
