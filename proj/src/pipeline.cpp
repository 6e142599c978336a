#include "datesort/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "datesort/adaptor.hpp"
#include "datesort/evolver.hpp"
#include "datesort/preprocess.hpp"
#include "json.hpp"

namespace datesort {

namespace {

namespace fs = std::filesystem;

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path.string());
    out << text;
    if (!out) throw ValidationError("write failed: " + path.string());
}

std::string format_fixed(double v, int places) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", places, v);
    return buf;
}

// Wall-clock bookkeeping for the run manifest; the only non-deterministic
// bytes a command emits.
class StageTimer {
public:
    void lap(const std::string& stage) {
        const auto now = std::chrono::steady_clock::now();
        const double ms = std::chrono::duration<double, std::milli>(now - mark_).count();
        stages_.emplace_back(stage, ms);
        mark_ = now;
    }
    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json stages = nlohmann::ordered_json::array();
        double total = 0.0;
        for (const auto& [name, ms] : stages_) {
            stages.push_back({{"stage", name}, {"ms", ms}});
            total += ms;
        }
        nlohmann::ordered_json j;
        j["total_ms"] = total;
        j["stages"] = stages;
        return j;
    }

private:
    std::vector<std::pair<std::string, double>> stages_;
    std::chrono::steady_clock::time_point mark_ = std::chrono::steady_clock::now();
};

// The stage directory must start out absent or empty; --force clears it so
// reruns rebuild from scratch (and stay byte-identical).
fs::path prepare_stage_dir(const fs::path& run_root, const char* stage, bool force) {
    const fs::path dir = run_root / stage;
    if (fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force)
            throw ValidationError("output directory already exists and is not empty: " +
                                  dir.string() + " (pass --force to replace it)");
        fs::remove_all(dir);
    }
    fs::create_directories(dir);
    return dir;
}

std::vector<std::string> list_artifacts(const fs::path& dir) {
    std::vector<std::string> rel;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string p = fs::relative(entry.path(), dir).generic_string();
        if (p == "run_manifest.json") continue;
        rel.push_back(p);
    }
    std::sort(rel.begin(), rel.end());
    return rel;
}

// config.json echo plus the dsrun1 manifest over everything in the stage
// directory. Returns the artifact listing.
std::vector<std::string> write_stage_metadata(const fs::path& dir, const RunConfig& config,
                                              const char* command, const StageTimer& timer) {
    write_text_file(dir / "config.json", run_config_to_json(config));
    const std::vector<std::string> artifacts = list_artifacts(dir);
    nlohmann::ordered_json listed = nlohmann::ordered_json::array();
    for (const std::string& p : artifacts)
        listed.push_back({{"path", p}, {"bytes", fs::file_size(dir / p)}});
    nlohmann::ordered_json j;
    j["layout"] = kRunManifestLayoutTag;
    j["command"] = command;
    j["tool_version"] = kToolVersion;
    j["config_hash"] = config_hash_hex(config);
    j["artifacts"] = listed;
    j["timing"] = timer.to_json();
    write_text_file(dir / "run_manifest.json", j.dump(2) + "\n");
    return artifacts;
}

fs::path resolve_dataset_dir(const RunConfig& config, const fs::path& run_root) {
    return config.dataset_dir.empty() ? run_root / "dataset" : fs::path(config.dataset_dir);
}

fs::path resolve_model_path(const RunConfig& config, const fs::path& run_root) {
    return config.model_path.empty() ? run_root / "model" / "model.json"
                                     : fs::path(config.model_path);
}

std::vector<FruitSample> subset(const std::vector<FruitSample>& samples,
                                const std::vector<int>& indices) {
    std::vector<FruitSample> out;
    out.reserve(indices.size());
    for (int i : indices) out.push_back(samples[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<int> variety_labels(const std::vector<FruitSample>& samples) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const FruitSample& s : samples) labels.push_back(static_cast<int>(s.variety));
    return labels;
}

}  // namespace

// ---------------------------------------------------------------------------
// Stage plumbing
// ---------------------------------------------------------------------------

TrainSample prepare_sample(const FruitSample& sample, const ModelConfig& config,
                           const CalibrationReference& ref, double segmentation_threshold) {
    TrainSample t;
    t.image = resize(normalize(sample.image), config.input_w, config.input_h);
    t.features = extract_features(sample, ref, segmentation_threshold);
    t.variety = static_cast<int>(sample.variety);
    t.spoiled = sample.attrs.spoiled ? 1 : 0;
    t.shelf_days = sample.attrs.days_to_expiry;
    return t;
}

std::vector<TrainSample> prepare_samples(const std::vector<FruitSample>& samples,
                                         const ModelConfig& config, const CalibrationReference& ref,
                                         double segmentation_threshold) {
    std::vector<TrainSample> out;
    out.reserve(samples.size());
    for (const FruitSample& s : samples)
        out.push_back(prepare_sample(s, config, ref, segmentation_threshold));
    return out;
}

SplitIndices stratified_split(const std::vector<int>& labels, double train_fraction,
                              std::uint64_t seed) {
    if (labels.empty()) throw ValidationError("stratified_split: no samples");
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ValidationError("stratified_split: train fraction must lie in (0, 1)");
    std::map<int, std::vector<int>> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i)
        by_class[labels[i]].push_back(static_cast<int>(i));

    SplitIndices split;
    for (auto& [label, indices] : by_class) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label)));
        rng.shuffle(indices);
        const auto n_train = static_cast<std::size_t>(
            std::llround(train_fraction * static_cast<double>(indices.size())));
        for (std::size_t i = 0; i < indices.size(); ++i)
            (i < n_train ? split.train : split.eval).push_back(indices[i]);
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.eval.begin(), split.eval.end());
    return split;
}

MetricsReport evaluate_model(const NetworkModel& model, const std::vector<FruitSample>& samples,
                             double segmentation_threshold) {
    if (samples.empty()) throw ValidationError("evaluate_model: no samples");
    EvalInputs inputs;
    for (const FruitSample& s : samples) {
        const TrainSample t = prepare_sample(s, model.config, model.calibration,
                                             segmentation_threshold);
        const Prediction pred = predict(model, t.image, t.features);
        inputs.variety_truth.push_back(t.variety);
        inputs.variety_pred.push_back(pred.variety);
        inputs.variety_scores.push_back(pred.variety_probs);
        inputs.spoilage_truth.push_back(t.spoiled);
        inputs.spoilage_pred.push_back(pred.spoiled ? 1 : 0);
        inputs.spoilage_scores.push_back(pred.spoilage_prob);
        inputs.shelf_truth_days.push_back(t.shelf_days);
        inputs.shelf_pred_days.push_back(static_cast<double>(pred.shelf_days));
    }
    return build_report(inputs);
}

std::string summary_table(const MetricsReport& report) {
    const auto row = [](const char* name, double variety, double spoilage) {
        char buf[96];
        std::snprintf(buf, sizeof(buf), "%-12s %9.4f %9.4f\n", name, variety, spoilage);
        return std::string(buf);
    };
    const ClassMetricsReport& v = report.variety.metrics;
    const ClassMetricsReport& s = report.spoilage.metrics;
    std::string out;
    out += "Metric         Variety  Spoilage\n";
    out += row("Accuracy", v.accuracy, s.accuracy);
    out += row("Precision", v.macro.precision, s.macro.precision);
    out += row("Recall", v.macro.recall, s.macro.recall);
    out += row("F1-Score", v.macro.f1, s.macro.f1);
    out += row("Specificity", v.macro.specificity, s.macro.specificity);
    out += row("AUC-ROC", report.variety.macro_auc, report.spoilage.macro_auc);
    out += "Shelf-life MAE: " + format_fixed(report.shelf_life_mae, 2) + " days\n";
    return out;
}

std::string normalize_manifest_text(const std::string& manifest_json) {
    nlohmann::ordered_json j;
    try {
        j = nlohmann::ordered_json::parse(manifest_json);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("malformed run manifest: ") + e.what());
    }
    if (j.contains("timing")) j["timing"] = nullptr;
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

CommandOutcome cmd_gen(const RunConfig& config, const fs::path& run_root, bool force) {
    validate_run_config(config);
    StageTimer timer;
    const fs::path dir = prepare_stage_dir(run_root, "dataset", force);

    DatasetSpec spec;
    spec.counts = config.counts;
    const std::uint64_t seed = stage_seed(config, "gen");
    const std::vector<FruitSample> samples = generate_dataset(config.generator, spec, seed);
    timer.lap("generate");
    write_dataset(dir, samples, config.generator, seed);
    timer.lap("write");

    CommandOutcome outcome;
    outcome.dir = dir;
    outcome.artifacts = write_stage_metadata(dir, config, "gen", timer);
    int spoiled = 0;
    for (const FruitSample& s : samples) spoiled += s.attrs.spoiled ? 1 : 0;
    outcome.summary = "generated " + std::to_string(samples.size()) + " samples (" +
                      std::to_string(spoiled) + " spoiled) into " + dir.string() + "\n";
    return outcome;
}

CommandOutcome cmd_train(const RunConfig& config, const fs::path& run_root, bool force) {
    validate_run_config(config);
    StageTimer timer;
    const StoredDataset dataset = read_dataset(resolve_dataset_dir(config, run_root));
    timer.lap("load-dataset");

    const SplitIndices split = stratified_split(variety_labels(dataset.samples),
                                                config.train_fraction, stage_seed(config, "split"));
    const CalibrationReference ref = default_calibration_reference();
    const std::vector<TrainSample> train_set = prepare_samples(
        subset(dataset.samples, split.train), config.model, ref, config.segmentation_threshold);
    timer.lap("prepare");

    NetworkModel model = init(config.model);
    model.calibration = ref;
    const TrainReport report = train(model, train_set);
    timer.lap("train");

    const fs::path dir = prepare_stage_dir(run_root, "model", force);
    save_model(dir / "model.json", model);
    nlohmann::ordered_json j;
    j["layout"] = "dstrain1";
    j["train_samples"] = split.train.size();
    j["epochs"] = report.epoch_loss_total.size();
    j["epoch_loss_total"] = report.epoch_loss_total;
    j["epoch_loss_variety"] = report.epoch_loss_variety;
    j["epoch_loss_spoilage"] = report.epoch_loss_spoilage;
    j["epoch_loss_shelf"] = report.epoch_loss_shelf;
    j["weights_ref"] = "model.json";
    write_text_file(dir / "train_report.json", j.dump(2) + "\n");
    timer.lap("save");

    CommandOutcome outcome;
    outcome.dir = dir;
    outcome.artifacts = write_stage_metadata(dir, config, "train", timer);
    outcome.summary = "trained on " + std::to_string(split.train.size()) + " samples for " +
                      std::to_string(report.epoch_loss_total.size()) + " epochs, final loss " +
                      format_fixed(report.epoch_loss_total.back(), 4) + "\n";
    return outcome;
}

CommandOutcome cmd_evolve(const RunConfig& config, const fs::path& run_root, bool force) {
    validate_run_config(config);
    StageTimer timer;
    const StoredDataset dataset = read_dataset(resolve_dataset_dir(config, run_root));
    timer.lap("load-dataset");

    const SplitIndices split = stratified_split(variety_labels(dataset.samples),
                                                config.train_fraction, stage_seed(config, "split"));
    const CalibrationReference ref = default_calibration_reference();
    const std::vector<TrainSample> train_set =
        prepare_samples(subset(dataset.samples, split.train), config.ga.model_template, ref,
                        config.segmentation_threshold);
    timer.lap("prepare");

    const GAReport report = run_ga(train_set, config.ga);
    timer.lap("evolve");

    // The winning genome retrains on the whole training split.
    NetworkModel best = init(genome_to_config(report.best, config.ga.model_template));
    best.calibration = ref;
    train(best, train_set);
    timer.lap("retrain");

    const fs::path dir = prepare_stage_dir(run_root, "evolve", force);
    write_ga_report(dir, report);
    save_model(dir / "best_model.json", best);
    timer.lap("save");

    CommandOutcome outcome;
    outcome.dir = dir;
    outcome.artifacts = write_stage_metadata(dir, config, "evolve", timer);
    outcome.summary = "evolved " + std::to_string(report.best_fitness.size()) +
                      " generations, best fitness " + format_fixed(report.best_fitness_value, 4) +
                      " (" + genome_key(report.best) + ")\n";
    return outcome;
}

CommandOutcome cmd_simulate(const RunConfig& config, const fs::path& run_root, bool force) {
    validate_run_config(config);
    StageTimer timer;
    const NetworkModel model = load_model(resolve_model_path(config, run_root));
    const StoredDataset dataset = read_dataset(resolve_dataset_dir(config, run_root));
    timer.lap("load");

    const std::uint64_t stream_seed = stage_seed(config, "stream");
    AdaptConfig adaptive_cfg = config.adapt;
    adaptive_cfg.frozen = false;
    AdaptConfig frozen_cfg = config.adapt;
    frozen_cfg.frozen = true;

    ConveyorStream adaptive_stream(dataset.samples, config.drift, stream_seed);
    const AdaptReport adaptive =
        run_adaptation(model, adaptive_stream, config.simulate_steps, adaptive_cfg);
    timer.lap("adaptive");

    ConveyorStream frozen_stream(dataset.samples, config.drift, stream_seed);
    const AdaptReport frozen =
        run_adaptation(model, frozen_stream, config.simulate_steps, frozen_cfg);
    timer.lap("frozen");

    const fs::path dir = prepare_stage_dir(run_root, "simulate", force);
    write_adapt_report(dir / "adaptive", adaptive);
    write_adapt_report(dir / "frozen", frozen);

    // Scored over the final third of the run, after the exploration decay.
    const int window = std::max(1, config.simulate_steps / 3);
    const double adaptive_acc = audited_accuracy(adaptive.log, window);
    const double frozen_acc = audited_accuracy(frozen.log, window);
    const double gap = adaptive_acc - frozen_acc;

    nlohmann::ordered_json j;
    j["layout"] = "dssim1";
    j["steps"] = config.simulate_steps;
    j["drift_enabled"] = config.drift.enabled;
    j["window"] = window;
    j["baseline_accuracy"] = frozen_acc;
    j["adaptive_accuracy"] = adaptive_acc;
    j["gap"] = gap;
    j["adaptive_final_gain"] = adaptive.final_gain;
    j["adaptive_final_threshold"] = adaptive.final_threshold;
    write_text_file(dir / "summary.json", j.dump(2) + "\n");
    timer.lap("write");

    CommandOutcome outcome;
    outcome.dir = dir;
    outcome.artifacts = write_stage_metadata(dir, config, "simulate", timer);
    outcome.summary = "drift " + std::string(config.drift.enabled ? "on" : "off") + ", " +
                      std::to_string(config.simulate_steps) + " steps: baseline " +
                      format_fixed(frozen_acc, 4) + ", adaptive " + format_fixed(adaptive_acc, 4) +
                      ", gap " + format_fixed(gap, 4) + "\n";
    return outcome;
}

CommandOutcome cmd_eval(const RunConfig& config, const fs::path& run_root, bool force) {
    validate_run_config(config);
    StageTimer timer;
    const NetworkModel model = load_model(resolve_model_path(config, run_root));
    const StoredDataset dataset = read_dataset(resolve_dataset_dir(config, run_root));
    timer.lap("load");

    const SplitIndices split = stratified_split(variety_labels(dataset.samples),
                                                config.train_fraction, stage_seed(config, "split"));
    if (split.eval.size() < 8)
        throw ValidationError("split leaves only " + std::to_string(split.eval.size()) +
                              " evaluation samples (need at least 8); lower split.train_fraction");
    const MetricsReport report =
        evaluate_model(model, subset(dataset.samples, split.eval), config.segmentation_threshold);
    timer.lap("evaluate");

    const fs::path dir = prepare_stage_dir(run_root, "eval", force);
    write_report_files(dir, report);
    const std::string table = summary_table(report);
    write_text_file(dir / "summary.txt", table);
    timer.lap("write");

    CommandOutcome outcome;
    outcome.dir = dir;
    outcome.artifacts = write_stage_metadata(dir, config, "eval", timer);
    outcome.summary = "evaluated " + std::to_string(split.eval.size()) + " held-out samples\n" +
                      table;
    return outcome;
}

}  // namespace datesort
