#include "datesort/runconfig.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>

#include "json.hpp"

namespace datesort {

namespace {

using nlohmann::json;

std::string join_path(const std::string& prefix, const std::string& key) {
    return prefix.empty() ? key : prefix + "." + key;
}

void check_keys(const json& obj, const std::string& prefix,
                std::initializer_list<const char*> allowed) {
    for (const auto& item : obj.items()) {
        bool known = false;
        for (const char* a : allowed)
            if (item.key() == a) {
                known = true;
                break;
            }
        if (!known) throw ValidationError("unknown config key: " + join_path(prefix, item.key()));
    }
}

const json* find_section(const json& obj, const std::string& prefix, const char* key) {
    auto it = obj.find(key);
    if (it == obj.end()) return nullptr;
    if (!it->is_object())
        throw ValidationError("config key must be an object: " + join_path(prefix, key));
    return &*it;
}

template <typename T>
void read_field(const json& obj, const std::string& prefix, const char* key, T& out) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config key has the wrong type: " + join_path(prefix, key));
    }
}

void parse_generator(const json& obj, const std::string& prefix, GeneratorConfig& cfg,
                     std::map<Variety, int>& counts) {
    check_keys(obj, prefix,
               {"canvas", "class_separation", "spoilage_prob", "spectral_noise", "speckle_noise",
                "tamar_moisture_max", "counts"});
    read_field(obj, prefix, "canvas", cfg.canvas);
    read_field(obj, prefix, "class_separation", cfg.class_separation);
    read_field(obj, prefix, "spoilage_prob", cfg.spoilage_prob);
    read_field(obj, prefix, "spectral_noise", cfg.spectral_noise);
    read_field(obj, prefix, "speckle_noise", cfg.speckle_noise);
    read_field(obj, prefix, "tamar_moisture_max", cfg.tamar_moisture_max);
    if (const json* c = find_section(obj, prefix, "counts")) {
        counts.clear();
        for (const auto& item : c->items()) {
            Variety v;
            try {
                v = variety_from_name(item.key());
            } catch (const std::exception&) {
                throw ValidationError("unknown variety name in config key: " +
                                      join_path(prefix, "counts." + item.key()));
            }
            int n = 0;
            try {
                n = item.value().get<int>();
            } catch (const json::exception&) {
                throw ValidationError("config key has the wrong type: " +
                                      join_path(prefix, "counts." + item.key()));
            }
            counts[v] = n;
        }
    }
}

void parse_model(const json& obj, const std::string& prefix, ModelConfig& cfg) {
    check_keys(obj, prefix,
               {"input_h", "input_w", "conv_blocks", "dense_widths", "learning_rate", "momentum",
                "batch_size", "epochs", "spoilage_loss_weight", "shelf_loss_weight", "augment_flip",
                "augment_brightness", "augment_brightness_range", "augment_rotate", "feature_mask"});
    read_field(obj, prefix, "input_h", cfg.input_h);
    read_field(obj, prefix, "input_w", cfg.input_w);
    if (auto it = obj.find("conv_blocks"); it != obj.end()) {
        if (!it->is_array())
            throw ValidationError("config key has the wrong type: " + join_path(prefix, "conv_blocks"));
        cfg.conv_blocks.clear();
        for (std::size_t i = 0; i < it->size(); ++i) {
            const json& b = (*it)[i];
            const std::string bpath = join_path(prefix, "conv_blocks[" + std::to_string(i) + "]");
            if (!b.is_object()) throw ValidationError("config key must be an object: " + bpath);
            check_keys(b, bpath, {"filters", "kernel"});
            ConvBlockSpec block;
            read_field(b, bpath, "filters", block.filters);
            read_field(b, bpath, "kernel", block.kernel);
            cfg.conv_blocks.push_back(block);
        }
    }
    read_field(obj, prefix, "dense_widths", cfg.dense_widths);
    read_field(obj, prefix, "learning_rate", cfg.learning_rate);
    read_field(obj, prefix, "momentum", cfg.momentum);
    read_field(obj, prefix, "batch_size", cfg.batch_size);
    read_field(obj, prefix, "epochs", cfg.epochs);
    read_field(obj, prefix, "spoilage_loss_weight", cfg.spoilage_loss_weight);
    read_field(obj, prefix, "shelf_loss_weight", cfg.shelf_loss_weight);
    read_field(obj, prefix, "augment_flip", cfg.augment_flip);
    read_field(obj, prefix, "augment_brightness", cfg.augment_brightness);
    read_field(obj, prefix, "augment_brightness_range", cfg.augment_brightness_range);
    read_field(obj, prefix, "augment_rotate", cfg.augment_rotate);
    if (auto it = obj.find("feature_mask"); it != obj.end()) {
        std::vector<int> mask;
        try {
            mask = it->get<std::vector<int>>();
        } catch (const json::exception&) {
            throw ValidationError("config key has the wrong type: " + join_path(prefix, "feature_mask"));
        }
        if (mask.size() != static_cast<std::size_t>(kFeatureCount))
            throw ValidationError("config key must list 46 bits: " + join_path(prefix, "feature_mask"));
        for (std::size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0 && mask[i] != 1)
                throw ValidationError("config key must list 46 bits: " +
                                      join_path(prefix, "feature_mask"));
            cfg.feature_mask[i] = static_cast<std::uint8_t>(mask[i]);
        }
    }
}

void parse_ga(const json& obj, const std::string& prefix, GAConfig& cfg) {
    check_keys(obj, prefix,
               {"population_size", "generations", "tournament_size", "crossover_rate",
                "mutation_rate", "elitism_count", "cv_folds"});
    read_field(obj, prefix, "population_size", cfg.population_size);
    read_field(obj, prefix, "generations", cfg.generations);
    read_field(obj, prefix, "tournament_size", cfg.tournament_size);
    read_field(obj, prefix, "crossover_rate", cfg.crossover_rate);
    read_field(obj, prefix, "mutation_rate", cfg.mutation_rate);
    read_field(obj, prefix, "elitism_count", cfg.elitism_count);
    read_field(obj, prefix, "cv_folds", cfg.cv_folds);
}

void parse_drift(const json& obj, const std::string& prefix, DriftConfig& cfg) {
    check_keys(obj, prefix,
               {"enabled", "lighting_sigma", "spectral_sigma", "spectral_cap", "gain_min",
                "gain_max"});
    read_field(obj, prefix, "enabled", cfg.enabled);
    read_field(obj, prefix, "lighting_sigma", cfg.lighting_sigma);
    read_field(obj, prefix, "spectral_sigma", cfg.spectral_sigma);
    read_field(obj, prefix, "spectral_cap", cfg.spectral_cap);
    read_field(obj, prefix, "gain_min", cfg.gain_min);
    read_field(obj, prefix, "gain_max", cfg.gain_max);
}

void parse_adapt(const json& obj, const std::string& prefix, AdaptConfig& cfg) {
    check_keys(obj, prefix,
               {"audit_window", "audit_probability", "epsilon_start", "epsilon_end", "alpha",
                "gamma", "gain_step", "threshold_step", "gain_min", "gain_max", "threshold_min",
                "threshold_max", "recalibrate_cost", "q_init", "q_init_spread",
                "q_init_recal_boost"});
    read_field(obj, prefix, "audit_window", cfg.audit_window);
    read_field(obj, prefix, "audit_probability", cfg.audit_probability);
    read_field(obj, prefix, "epsilon_start", cfg.epsilon_start);
    read_field(obj, prefix, "epsilon_end", cfg.epsilon_end);
    read_field(obj, prefix, "alpha", cfg.alpha);
    read_field(obj, prefix, "gamma", cfg.gamma);
    read_field(obj, prefix, "gain_step", cfg.gain_step);
    read_field(obj, prefix, "threshold_step", cfg.threshold_step);
    read_field(obj, prefix, "gain_min", cfg.gain_min);
    read_field(obj, prefix, "gain_max", cfg.gain_max);
    read_field(obj, prefix, "threshold_min", cfg.threshold_min);
    read_field(obj, prefix, "threshold_max", cfg.threshold_max);
    read_field(obj, prefix, "recalibrate_cost", cfg.recalibrate_cost);
    read_field(obj, prefix, "q_init", cfg.q_init);
    read_field(obj, prefix, "q_init_spread", cfg.q_init_spread);
    read_field(obj, prefix, "q_init_recal_boost", cfg.q_init_recal_boost);
}

}  // namespace

RunConfig default_run_config() {
    RunConfig cfg;
    cfg.counts = paper_shaped_spec().counts;
    // Benchmark drift scenario: slow lighting-gain walk (the headline
    // stressor) plus a slow additive spectral walk, the channel only a
    // sensor recalibration can undo.
    cfg.drift.lighting_sigma = 0.02;
    cfg.drift.spectral_sigma = 0.004;
    cfg.drift.spectral_cap = 0.08;
    // Wide brightness augmentation hardens the model against gain error, so
    // runtime exploration of the gain knob is harmless.
    cfg.model.augment_brightness_range = 0.5;
    finalize_run_config(cfg);
    return cfg;
}

void finalize_run_config(RunConfig& config) {
    config.model.seed = stage_seed(config, "train");
    config.ga.seed = stage_seed(config, "evolve");
    config.ga.model_template = config.model;
    config.ga.model_template.seed = stage_seed(config, "evolve-template");
    config.adapt.seed = stage_seed(config, "adapt");
    config.adapt.segmentation_threshold = config.segmentation_threshold;
    config.adapt.frozen = false;
}

RunConfig parse_run_config(const std::string& json_text) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed config document: ") + e.what());
    }
    if (!doc.is_object()) throw ValidationError("config document must be a JSON object");

    RunConfig cfg = default_run_config();
    check_keys(doc, "",
               {"seed", "output_dir", "dataset_dir", "model_path", "generator", "preprocess",
                "split", "model", "ga", "simulate"});
    read_field(doc, "", "seed", cfg.seed);
    read_field(doc, "", "output_dir", cfg.output_dir);
    read_field(doc, "", "dataset_dir", cfg.dataset_dir);
    read_field(doc, "", "model_path", cfg.model_path);
    if (const json* g = find_section(doc, "", "generator"))
        parse_generator(*g, "generator", cfg.generator, cfg.counts);
    if (const json* p = find_section(doc, "", "preprocess")) {
        check_keys(*p, "preprocess", {"segmentation_threshold"});
        read_field(*p, "preprocess", "segmentation_threshold", cfg.segmentation_threshold);
    }
    if (const json* s = find_section(doc, "", "split")) {
        check_keys(*s, "split", {"train_fraction"});
        read_field(*s, "split", "train_fraction", cfg.train_fraction);
    }
    if (const json* m = find_section(doc, "", "model")) parse_model(*m, "model", cfg.model);
    if (const json* g = find_section(doc, "", "ga")) parse_ga(*g, "ga", cfg.ga);
    if (const json* s = find_section(doc, "", "simulate")) {
        check_keys(*s, "simulate", {"steps", "drift", "adapt"});
        read_field(*s, "simulate", "steps", cfg.simulate_steps);
        if (const json* d = find_section(*s, "simulate", "drift"))
            parse_drift(*d, "simulate.drift", cfg.drift);
        if (const json* a = find_section(*s, "simulate", "adapt"))
            parse_adapt(*a, "simulate.adapt", cfg.adapt);
    }
    finalize_run_config(cfg);
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open config file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_run_config(ss.str());
    } catch (const ValidationError& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
}

std::string run_config_to_json(const RunConfig& config) {
    nlohmann::ordered_json j;
    j["seed"] = config.seed;
    j["output_dir"] = config.output_dir;
    j["dataset_dir"] = config.dataset_dir;
    j["model_path"] = config.model_path;

    nlohmann::ordered_json gen;
    gen["canvas"] = config.generator.canvas;
    gen["class_separation"] = config.generator.class_separation;
    gen["spoilage_prob"] = config.generator.spoilage_prob;
    gen["spectral_noise"] = config.generator.spectral_noise;
    gen["speckle_noise"] = config.generator.speckle_noise;
    gen["tamar_moisture_max"] = config.generator.tamar_moisture_max;
    nlohmann::ordered_json counts;
    for (const auto& [v, n] : config.counts) counts[variety_name(v)] = n;
    gen["counts"] = counts;
    j["generator"] = gen;

    j["preprocess"] = {{"segmentation_threshold", config.segmentation_threshold}};
    j["split"] = {{"train_fraction", config.train_fraction}};

    nlohmann::ordered_json model;
    model["input_h"] = config.model.input_h;
    model["input_w"] = config.model.input_w;
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const ConvBlockSpec& b : config.model.conv_blocks)
        blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}});
    model["conv_blocks"] = blocks;
    model["dense_widths"] = config.model.dense_widths;
    model["learning_rate"] = config.model.learning_rate;
    model["momentum"] = config.model.momentum;
    model["batch_size"] = config.model.batch_size;
    model["epochs"] = config.model.epochs;
    model["spoilage_loss_weight"] = config.model.spoilage_loss_weight;
    model["shelf_loss_weight"] = config.model.shelf_loss_weight;
    model["augment_flip"] = config.model.augment_flip;
    model["augment_brightness"] = config.model.augment_brightness;
    model["augment_brightness_range"] = config.model.augment_brightness_range;
    model["augment_rotate"] = config.model.augment_rotate;
    std::vector<int> mask(kFeatureCount);
    for (int i = 0; i < kFeatureCount; ++i) mask[static_cast<std::size_t>(i)] = config.model.feature_mask[static_cast<std::size_t>(i)];
    model["feature_mask"] = mask;
    j["model"] = model;

    nlohmann::ordered_json ga;
    ga["population_size"] = config.ga.population_size;
    ga["generations"] = config.ga.generations;
    ga["tournament_size"] = config.ga.tournament_size;
    ga["crossover_rate"] = config.ga.crossover_rate;
    ga["mutation_rate"] = config.ga.mutation_rate;
    ga["elitism_count"] = config.ga.elitism_count;
    ga["cv_folds"] = config.ga.cv_folds;
    j["ga"] = ga;

    nlohmann::ordered_json drift;
    drift["enabled"] = config.drift.enabled;
    drift["lighting_sigma"] = config.drift.lighting_sigma;
    drift["spectral_sigma"] = config.drift.spectral_sigma;
    drift["spectral_cap"] = config.drift.spectral_cap;
    drift["gain_min"] = config.drift.gain_min;
    drift["gain_max"] = config.drift.gain_max;

    nlohmann::ordered_json adapt;
    adapt["audit_window"] = config.adapt.audit_window;
    adapt["audit_probability"] = config.adapt.audit_probability;
    adapt["epsilon_start"] = config.adapt.epsilon_start;
    adapt["epsilon_end"] = config.adapt.epsilon_end;
    adapt["alpha"] = config.adapt.alpha;
    adapt["gamma"] = config.adapt.gamma;
    adapt["gain_step"] = config.adapt.gain_step;
    adapt["threshold_step"] = config.adapt.threshold_step;
    adapt["gain_min"] = config.adapt.gain_min;
    adapt["gain_max"] = config.adapt.gain_max;
    adapt["threshold_min"] = config.adapt.threshold_min;
    adapt["threshold_max"] = config.adapt.threshold_max;
    adapt["recalibrate_cost"] = config.adapt.recalibrate_cost;
    adapt["q_init"] = config.adapt.q_init;
    adapt["q_init_spread"] = config.adapt.q_init_spread;
    adapt["q_init_recal_boost"] = config.adapt.q_init_recal_boost;

    nlohmann::ordered_json sim;
    sim["steps"] = config.simulate_steps;
    sim["drift"] = drift;
    sim["adapt"] = adapt;
    j["simulate"] = sim;

    return j.dump(2) + "\n";
}

void validate_run_config(const RunConfig& config) {
    if (config.output_dir.empty()) throw ValidationError("output_dir must not be empty");
    if (config.counts.empty()) throw ValidationError("generator.counts must list at least one variety");
    for (const auto& [v, n] : config.counts)
        if (n <= 0)
            throw ValidationError(std::string("generator.counts.") + variety_name(v) +
                                  " must be positive");
    const GeneratorConfig& g = config.generator;
    if (g.canvas < 8) throw ValidationError("generator.canvas must be at least 8");
    if (!(g.class_separation > 0.0) || !std::isfinite(g.class_separation))
        throw ValidationError("generator.class_separation must be positive");
    if (!(g.spoilage_prob >= 0.0 && g.spoilage_prob <= 1.0))
        throw ValidationError("generator.spoilage_prob must lie in [0, 1]");
    if (!(g.spectral_noise >= 0.0) || !(g.speckle_noise >= 0.0))
        throw ValidationError("generator noise levels must be non-negative");
    if (!(g.tamar_moisture_max > 0.0))
        throw ValidationError("generator.tamar_moisture_max must be positive");
    if (!(config.segmentation_threshold > 0.0 && config.segmentation_threshold < 1.0))
        throw ValidationError("preprocess.segmentation_threshold must lie in (0, 1)");
    if (!(config.train_fraction > 0.0 && config.train_fraction < 1.0))
        throw ValidationError("split.train_fraction must lie in (0, 1)");
    validate_config(config.model);
    validate_ga_config(config.ga);
    if (config.simulate_steps < 1) throw ValidationError("simulate.steps must be positive");
    const DriftConfig& d = config.drift;
    if (!(d.lighting_sigma >= 0.0) || !(d.spectral_sigma >= 0.0) || !(d.spectral_cap >= 0.0) ||
        !std::isfinite(d.lighting_sigma) || !std::isfinite(d.spectral_sigma) ||
        !std::isfinite(d.spectral_cap))
        throw ValidationError("simulate.drift levels must be non-negative");
    if (!(d.gain_min > 0.0) || !(d.gain_min < d.gain_max))
        throw ValidationError("simulate.drift gain range must be positive and ordered");
    validate_adapt_config(config.adapt);
}

std::string config_hash_hex(const RunConfig& config) {
    const std::uint64_t h = fnv1a64(run_config_to_json(config));
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::uint64_t stage_seed(const RunConfig& config, std::string_view stage) {
    return derive_seed(config.seed, stage);
}

}  // namespace datesort
