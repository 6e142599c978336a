#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "datesort/pipeline.hpp"
#include "datesort/preprocess.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace datesort;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

fs::path fresh_root(const std::string& name) {
    const fs::path root = fs::temp_directory_path() / name;
    fs::remove_all(root);
    fs::create_directories(root);
    return root;
}

RunConfig tiny_config() {
    return parse_run_config(R"({
        "seed": 11,
        "generator": {"canvas": 24, "spoilage_prob": 0.3,
            "counts": {"AJWA": 12, "BERHI": 12, "IRAQI": 12, "ROTANA": 12}},
        "model": {"input_h": 24, "input_w": 24,
            "conv_blocks": [{"filters": 4, "kernel": 3}],
            "dense_widths": [12], "epochs": 4, "batch_size": 8,
            "learning_rate": 0.02},
        "ga": {"population_size": 4, "generations": 2, "tournament_size": 2,
            "cv_folds": 2},
        "simulate": {"steps": 300, "drift": {"enabled": false}}
    })");
}

// One generated + trained run root shared by the read-only cases.
const fs::path& shared_root() {
    static const fs::path root = [] {
        const fs::path r = fresh_root("pipeline_shared");
        const RunConfig cfg = tiny_config();
        cmd_gen(cfg, r, false);
        cmd_train(cfg, r, false);
        return r;
    }();
    return root;
}

// Every file the manifest lists exists with the listed size, and every file
// in the stage directory (minus the manifest itself) is listed.
void check_manifest_complete(const fs::path& stage_dir) {
    const nlohmann::json manifest = nlohmann::json::parse(slurp(stage_dir / "run_manifest.json"));
    CHECK(manifest.at("layout") == "dsrun1");
    CHECK(manifest.at("tool_version") == kToolVersion);
    CHECK(manifest.at("config_hash").get<std::string>().size() == 16);
    std::set<std::string> listed;
    for (const nlohmann::json& a : manifest.at("artifacts")) {
        const std::string rel = a.at("path").get<std::string>();
        const fs::path p = stage_dir / rel;
        REQUIRE(fs::exists(p));
        CHECK(fs::file_size(p) == a.at("bytes").get<std::uintmax_t>());
        listed.insert(rel);
    }
    for (const auto& entry : fs::recursive_directory_iterator(stage_dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string rel = fs::relative(entry.path(), stage_dir).generic_string();
        if (rel == "run_manifest.json") continue;
        CHECK(listed.count(rel) == 1);
    }
}

}  // namespace

TEST_CASE("stratified splits keep class shares and partition the data") {
    std::vector<int> labels;
    for (int i = 0; i < 20; ++i) labels.push_back(0);
    for (int i = 0; i < 10; ++i) labels.push_back(1);
    for (int i = 0; i < 5; ++i) labels.push_back(2);
    const SplitIndices split = stratified_split(labels, 0.8, 99);

    std::vector<int> train_per_class(3, 0), eval_per_class(3, 0);
    for (int i : split.train) ++train_per_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    for (int i : split.eval) ++eval_per_class[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
    CHECK(train_per_class == std::vector<int>{16, 8, 4});
    CHECK(eval_per_class == std::vector<int>{4, 2, 1});

    std::set<int> all(split.train.begin(), split.train.end());
    all.insert(split.eval.begin(), split.eval.end());
    CHECK(all.size() == labels.size());
    CHECK(std::is_sorted(split.train.begin(), split.train.end()));
    CHECK(std::is_sorted(split.eval.begin(), split.eval.end()));

    // Seeded and seed-sensitive.
    CHECK(stratified_split(labels, 0.8, 99).train == split.train);
    CHECK(stratified_split(labels, 0.8, 100).train != split.train);

    CHECK_THROWS_AS(stratified_split({}, 0.8, 1), ValidationError);
    CHECK_THROWS_AS(stratified_split(labels, 1.0, 1), ValidationError);
}

TEST_CASE("prepare_sample composes normalize, resize, and feature extraction") {
    GeneratorConfig gen;
    gen.canvas = 32;
    const FruitSample sample = generate_sample(gen, Variety::AJWA, Ripeness::TAMAR, 321);
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    const CalibrationReference ref = default_calibration_reference();

    const TrainSample t = prepare_sample(sample, cfg, ref, kDefaultSegmentationThreshold);
    CHECK(t.image.width == 16);
    CHECK(t.image.height == 16);
    CHECK(t.image.normalized);
    CHECK(t.image == resize(normalize(sample.image), 16, 16));
    const FeatureVector direct = extract_features(sample, ref);
    for (int i = 0; i < kFeatureCount; ++i) CHECK(t.features.values[static_cast<std::size_t>(i)] == direct.values[static_cast<std::size_t>(i)]);
    CHECK(t.variety == static_cast<int>(Variety::AJWA));
    CHECK(t.shelf_days == sample.attrs.days_to_expiry);
}

TEST_CASE("the summary table carries the six fixed metric rows plus shelf life") {
    EvalInputs inputs;
    inputs.variety_truth = {0, 1, 2, 3};
    inputs.variety_pred = {0, 1, 2, 2};
    for (int truth : inputs.variety_truth) {
        std::array<double, kNumVarieties> row{};
        row.fill(0.05);
        row[static_cast<std::size_t>(truth)] = 0.65;
        inputs.variety_scores.push_back(row);
    }
    inputs.spoilage_truth = {0, 1, 0, 1};
    inputs.spoilage_pred = {0, 1, 0, 0};
    inputs.spoilage_scores = {0.1, 0.9, 0.2, 0.4};
    inputs.shelf_truth_days = {10, 0, 30, 0};
    inputs.shelf_pred_days = {12, 0, 26, 2};
    const MetricsReport report = build_report(inputs);
    const std::string table = summary_table(report);

    const std::vector<std::string> rows = {"Accuracy",    "Precision", "Recall",
                                           "F1-Score",    "Specificity", "AUC-ROC",
                                           "Shelf-life MAE"};
    std::istringstream in(table);
    std::string line;
    std::getline(in, line);  // header
    CHECK(line == "Metric         Variety  Spoilage");
    for (const std::string& want : rows) {
        REQUIRE(std::getline(in, line));
        CHECK(line.substr(0, want.size()) == want);
    }
    CHECK(!std::getline(in, line));
    CHECK(table.find("Shelf-life MAE: 2.00 days") != std::string::npos);
}

TEST_CASE("manifest normalization blanks only the timing object") {
    const std::string a = R"({"layout":"dsrun1","artifacts":[],"timing":{"total_ms":12.5}})";
    const std::string b = R"({"layout":"dsrun1","artifacts":[],"timing":{"total_ms":99.9}})";
    CHECK(normalize_manifest_text(a) == normalize_manifest_text(b));
    const std::string c = R"({"layout":"dsrun1","artifacts":[{"path":"x"}],"timing":null})";
    CHECK(normalize_manifest_text(a) != normalize_manifest_text(c));
    CHECK(normalize_manifest_text(normalize_manifest_text(a)) == normalize_manifest_text(a));
    CHECK_THROWS_AS(normalize_manifest_text("{broken"), ValidationError);
}

TEST_CASE("cmd_gen writes a loadable dataset and a complete manifest") {
    const fs::path root = shared_root();
    const fs::path dir = root / "dataset";
    REQUIRE(fs::exists(dir / "manifest.json"));
    check_manifest_complete(dir);

    const StoredDataset dataset = read_dataset(dir);
    CHECK(dataset.samples.size() == 48);
    CHECK(dataset.config.canvas == 24);
    int spoiled = 0;
    for (const FruitSample& s : dataset.samples) spoiled += s.attrs.spoiled ? 1 : 0;
    CHECK(spoiled > 0);

    // Refusal without --force, replacement with it.
    CHECK_THROWS_WITH_AS(cmd_gen(tiny_config(), root, false), doctest::Contains("--force"),
                         ValidationError);
}

TEST_CASE("cmd_gen is deterministic rerun to rerun") {
    const RunConfig cfg = tiny_config();
    const fs::path a = fresh_root("pipeline_gen_a");
    cmd_gen(cfg, a, false);
    const std::string manifest_before = slurp(a / "dataset" / "manifest.json");
    const std::string sample_before = slurp(a / "dataset" / "img" / "7.ppm");
    cmd_gen(cfg, a, true);
    CHECK(slurp(a / "dataset" / "manifest.json") == manifest_before);
    CHECK(slurp(a / "dataset" / "img" / "7.ppm") == sample_before);
    fs::remove_all(a);
}

TEST_CASE("cmd_train writes the model and a loss-per-epoch report") {
    const fs::path root = shared_root();
    const fs::path dir = root / "model";
    check_manifest_complete(dir);

    const nlohmann::json report = nlohmann::json::parse(slurp(dir / "train_report.json"));
    CHECK(report.at("layout") == "dstrain1");
    CHECK(report.at("epochs") == 4);
    CHECK(report.at("epoch_loss_total").size() == 4);
    CHECK(report.at("train_samples") == 40);  // 0.8 of 48, stratified
    CHECK(!report.contains("wall_ms"));       // timing lives only in the run manifest

    const NetworkModel model = load_model(dir / "model.json");
    CHECK(model.config.epochs == 4);
    CHECK(model.scaler.fitted());
    // The artifact is a self-contained runtime: calibration travels with it.
    CHECK(model.calibration.white[0] > model.calibration.dark[0]);
}

TEST_CASE("cmd_train reruns bit-identically and fails loudly on corrupt input") {
    const RunConfig cfg = tiny_config();

    SUBCASE("rerun gives identical model bytes") {
        const fs::path root = fresh_root("pipeline_train_det");
        cmd_gen(cfg, root, false);
        cmd_train(cfg, root, false);
        const std::string first = slurp(root / "model" / "model.json");
        cmd_train(cfg, root, true);
        CHECK(slurp(root / "model" / "model.json") == first);
        fs::remove_all(root);
    }
    SUBCASE("corrupted image file is named") {
        const fs::path root = fresh_root("pipeline_train_corrupt");
        cmd_gen(cfg, root, false);
        spit(root / "dataset" / "img" / "5.ppm", "P3\n2 2\n255\n0 0 0\n");
        CHECK_THROWS_WITH_AS(cmd_train(cfg, root, false), doctest::Contains("5.ppm"),
                             ValidationError);
        fs::remove_all(root);
    }
    SUBCASE("missing spectral csv cites the sample id") {
        const fs::path root = fresh_root("pipeline_train_missing");
        cmd_gen(cfg, root, false);
        fs::remove(root / "dataset" / "spec" / "9.csv");
        CHECK_THROWS_WITH_AS(cmd_train(cfg, root, false), doctest::Contains("sample id 9"),
                             ValidationError);
        fs::remove_all(root);
    }
    SUBCASE("absent dataset directory is a validation error") {
        const fs::path root = fresh_root("pipeline_train_nodata");
        CHECK_THROWS_WITH_AS(cmd_train(cfg, root, false), doctest::Contains("manifest"),
                             ValidationError);
        fs::remove_all(root);
    }
}

TEST_CASE("cmd_evolve writes monotone generation rows and a usable best model") {
    const fs::path root = shared_root();
    const RunConfig cfg = tiny_config();
    const CommandOutcome outcome = cmd_evolve(cfg, root, false);
    check_manifest_complete(outcome.dir);

    const std::string csv = slurp(outcome.dir / "ga_generations.csv");
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    CHECK(line == "generation,best,mean,evaluations");
    int rows = 0;
    double previous_best = -1.0;
    while (std::getline(in, line)) {
        const std::size_t comma1 = line.find(',');
        const std::size_t comma2 = line.find(',', comma1 + 1);
        const double best = std::stod(line.substr(comma1 + 1, comma2 - comma1 - 1));
        CHECK(best >= previous_best);
        previous_best = best;
        ++rows;
    }
    CHECK(rows == 2);

    const nlohmann::json report = nlohmann::json::parse(slurp(outcome.dir / "ga_report.json"));
    const auto mask = report.at("best_genome").at("feature_mask").get<std::string>();
    REQUIRE(mask.size() == 46);
    CHECK(mask.find_first_not_of("01") == std::string::npos);
    CHECK(std::count(mask.begin(), mask.end(), '1') >= 1);

    const NetworkModel best = load_model(outcome.dir / "best_model.json");
    CHECK(best.scaler.fitted());
}

TEST_CASE("cmd_simulate with drift disabled reports a flat gap") {
    const fs::path root = shared_root();
    const RunConfig cfg = tiny_config();
    const CommandOutcome outcome = cmd_simulate(cfg, root, false);
    check_manifest_complete(outcome.dir);

    const nlohmann::json summary = nlohmann::json::parse(slurp(outcome.dir / "summary.json"));
    CHECK(summary.at("layout") == "dssim1");
    CHECK(summary.at("steps") == 300);
    CHECK(summary.at("drift_enabled") == false);
    CHECK(summary.at("window") == 100);
    const double gap = summary.at("gap").get<double>();
    CHECK(std::abs(gap) <= 0.01);  // paired streams, no drift to fix

    REQUIRE(fs::exists(outcome.dir / "adaptive" / "adapt_log.csv"));
    REQUIRE(fs::exists(outcome.dir / "frozen" / "qtable.json"));

    // Identical invocation, identical summary.
    const std::string first = slurp(outcome.dir / "summary.json");
    cmd_simulate(cfg, root, true);
    CHECK(slurp(outcome.dir / "summary.json") == first);
}

TEST_CASE("cmd_eval emits the report bundle with one curve file per class") {
    const fs::path root = shared_root();
    const RunConfig cfg = tiny_config();
    const CommandOutcome outcome = cmd_eval(cfg, root, false);
    check_manifest_complete(outcome.dir);

    // One ROC per variety present in the evaluation split, plus the spoilage one.
    std::set<std::string> roc_files;
    for (const auto& entry : fs::directory_iterator(outcome.dir)) {
        const std::string name = entry.path().filename().string();
        if (name.rfind("roc_", 0) == 0) roc_files.insert(name);
    }
    CHECK(roc_files == std::set<std::string>{"roc_ajwa.csv", "roc_berhi.csv", "roc_iraqi.csv",
                                             "roc_rotana.csv", "roc_spoiled.csv"});
    REQUIRE(fs::exists(outcome.dir / "report.json"));
    REQUIRE(fs::exists(outcome.dir / "confusion.csv"));

    const std::string table = slurp(outcome.dir / "summary.txt");
    for (const char* needle : {"Accuracy", "Precision", "Recall", "F1-Score", "Specificity",
                               "AUC-ROC", "Shelf-life MAE"})
        CHECK(table.find(needle) != std::string::npos);

    const std::string first = slurp(outcome.dir / "report.json");
    cmd_eval(cfg, root, true);
    CHECK(slurp(outcome.dir / "report.json") == first);
}

TEST_CASE("cmd_eval rejects a split that starves the held-out side") {
    const fs::path root = shared_root();
    RunConfig cfg = tiny_config();
    cfg.train_fraction = 0.95;  // 48 samples -> 2 held out
    finalize_run_config(cfg);
    CHECK_THROWS_WITH_AS(cmd_eval(cfg, root, false), doctest::Contains("at least 8"),
                         ValidationError);
}

TEST_CASE("cmd_simulate requires a loadable model file") {
    const RunConfig cfg = tiny_config();
    const fs::path root = fresh_root("pipeline_sim_nomodel");
    cmd_gen(cfg, root, false);
    CHECK_THROWS_WITH_AS(cmd_simulate(cfg, root, false), doctest::Contains("model"),
                         ValidationError);
    fs::remove_all(root);
}
