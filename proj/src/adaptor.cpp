#include "datesort/adaptor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>

#include "datesort/preprocess.hpp"
#include "json.hpp"

namespace datesort {

namespace {

double clampd(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

std::string format_double(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", value);
    return buf;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
    out << text;
}

// Undo the estimated lighting gain on the raw 8-bit image.
ImageRaster correct_image(const ImageRaster& img, double gain) {
    ImageRaster out = img;
    for (double& v : out.data)
        v = clampd(static_cast<double>(std::lround(v / gain)), 0.0, 255.0);
    return out;
}

double whole_image_mean_luminance(const ImageRaster& normalized) {
    double sum = 0.0;
    for (int y = 0; y < normalized.height; ++y)
        for (int x = 0; x < normalized.width; ++x) sum += normalized.luminance(x, y);
    return sum / (static_cast<double>(normalized.width) * normalized.height);
}

}  // namespace

const char* action_name(AdaptAction a) {
    switch (a) {
        case AdaptAction::GAIN_DOWN: return "gain_down";
        case AdaptAction::GAIN_HOLD: return "gain_hold";
        case AdaptAction::GAIN_UP: return "gain_up";
        case AdaptAction::THRESHOLD_DOWN: return "threshold_down";
        case AdaptAction::THRESHOLD_UP: return "threshold_up";
        case AdaptAction::RECALIBRATE: return "recalibrate";
        case AdaptAction::NOOP: return "noop";
    }
    throw ValidationError("unknown action code");
}

int brightness_bucket(double mean_luminance) {
    if (!std::isfinite(mean_luminance)) throw ValidationError("non-finite luminance");
    if (mean_luminance < 0.2) return 0;
    if (mean_luminance < 0.4) return 1;
    if (mean_luminance < 0.6) return 2;
    if (mean_luminance < 0.8) return 3;
    return 4;
}

int accuracy_bucket(double rolling_accuracy) {
    if (!std::isfinite(rolling_accuracy)) throw ValidationError("non-finite accuracy");
    if (rolling_accuracy < 0.5) return 0;
    if (rolling_accuracy < 0.75) return 1;
    if (rolling_accuracy < 0.98) return 2;
    return 3;
}

AuditWindow::AuditWindow(int capacity) : capacity_(capacity) {
    if (capacity < 1) throw ValidationError("audit window must hold at least one sample");
}

void AuditWindow::record(bool correct) {
    window_.push_back(correct);
    if (static_cast<int>(window_.size()) > capacity_) window_.pop_front();
}

double AuditWindow::accuracy() const {
    if (window_.empty()) return 1.0;  // optimistic before any feedback
    int correct = 0;
    for (bool c : window_) correct += c ? 1 : 0;
    return correct / static_cast<double>(window_.size());
}

AdaptAction select_action(const QTable& q, const AdaptState& state, double epsilon, Rng& rng) {
    if (state.brightness_bucket < 0 || state.brightness_bucket >= kBrightnessBuckets ||
        state.accuracy_bucket < 0 || state.accuracy_bucket >= kAccuracyBuckets)
        throw ValidationError("state bucket out of range");
    if (!std::isfinite(epsilon) || epsilon < 0.0 || epsilon > 1.0)
        throw ValidationError("exploration rate must be in [0, 1]");

    if (rng.bernoulli(epsilon))
        return static_cast<AdaptAction>(rng.uniform_int(kAdaptActions));

    const int s = state.code();
    int best = 0;
    for (int a = 1; a < kAdaptActions; ++a)
        if (q.at(s, a) > q.at(s, best)) best = a;
    return static_cast<AdaptAction>(best);
}

void q_update(QTable& q, const AdaptState& state, AdaptAction action, double reward,
              const AdaptState& next_state) {
    if (!std::isfinite(reward)) throw ValidationError("non-finite reward");
    const int s = state.code();
    const int a = static_cast<int>(action);
    if (a < 0 || a >= kAdaptActions) throw ValidationError("unknown action code");

    const int s2 = next_state.code();
    double best_next = q.at(s2, 0);
    for (int a2 = 1; a2 < kAdaptActions; ++a2) best_next = std::max(best_next, q.at(s2, a2));

    const double updated = q.at(s, a) + q.alpha * (reward + q.gamma * best_next - q.at(s, a));
    if (!std::isfinite(updated)) throw ValidationError("non-finite value update");
    q.at(s, a) = updated;
}

void validate_adapt_config(const AdaptConfig& config) {
    if (config.audit_window < 1)
        throw ValidationError("audit window must hold at least one sample");
    if (!std::isfinite(config.audit_probability) || config.audit_probability < 0.0 ||
        config.audit_probability > 1.0)
        throw ValidationError("audit probability must be in [0, 1]");
    if (!std::isfinite(config.epsilon_start) || config.epsilon_start < 0.0 ||
        config.epsilon_start > 1.0 || !std::isfinite(config.epsilon_end) ||
        config.epsilon_end < 0.0 || config.epsilon_end > config.epsilon_start)
        throw ValidationError("exploration must decay within [0, 1]");
    if (!std::isfinite(config.alpha) || config.alpha < 0.0 || config.alpha > 1.0)
        throw ValidationError("learning rate must be in [0, 1]");
    if (!std::isfinite(config.gamma) || config.gamma < 0.0 || config.gamma >= 1.0)
        throw ValidationError("discount must be in [0, 1)");
    if (!(config.gain_step > 0.0) || !(config.threshold_step > 0.0))
        throw ValidationError("action step sizes must be positive");
    if (!(config.gain_min > 0.0) || !(config.gain_min < config.gain_max))
        throw ValidationError("gain range must be positive and ordered");
    if (!(config.threshold_min > 0.0) || !(config.threshold_min < config.threshold_max) ||
        !(config.threshold_max < 1.0))
        throw ValidationError("threshold range must sit inside (0, 1)");
    if (config.recalibrate_cost < 0.0 || !std::isfinite(config.recalibrate_cost))
        throw ValidationError("recalibration cost must be non-negative");
    if (!std::isfinite(config.q_init) || !std::isfinite(config.q_init_spread) ||
        !std::isfinite(config.q_init_recal_boost) || config.q_init_spread < 0.0 ||
        config.q_init_recal_boost < 0.0 || std::abs(config.q_init) > 20.0 ||
        std::abs(config.q_init - config.q_init_spread) > 20.0 ||
        std::abs(config.q_init + config.q_init_recal_boost) > 20.0)
        throw ValidationError("starting value estimates must stay within [-20, 20]");
    if (!(config.segmentation_threshold > 0.0))
        throw ValidationError("segmentation threshold must be positive");
}

AdaptReport run_adaptation(const NetworkModel& model, ConveyorStream& stream, int steps,
                           const AdaptConfig& config) {
    validate_adapt_config(config);
    if (steps < 1) throw ValidationError("adaptation needs at least one step");

    Rng audit_rng(derive_seed(config.seed, "audit"));
    Rng explore_rng(derive_seed(config.seed, "explore"));
    const CalibrationReference ref = default_calibration_reference();

    AdaptReport report;
    report.q.alpha = config.alpha;
    report.q.gamma = config.gamma;
    for (int s = 0; s < kAdaptStates; ++s)
        for (int a = 0; a < kAdaptActions; ++a)
            report.q.values[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                config.initial_q(static_cast<AdaptAction>(a), s / kAccuracyBuckets);
    AuditWindow window(config.audit_window);

    double gain = 1.0;
    double threshold = clampd(model.spoilage_threshold, config.threshold_min,
                              config.threshold_max);
    const double threshold_home = threshold;
    // Raw-unit spectral zero-point correction, refreshed by recalibration.
    std::array<double, kSpectralChannels> spectral_correction{};
    // Before the first emission: nominal mid brightness, optimistic accuracy.
    AdaptState state;
    state.brightness_bucket = brightness_bucket(0.5);

    report.log.reserve(static_cast<std::size_t>(steps));
    for (int t = 0; t < steps; ++t) {
        StreamItem item = stream.next();

        // Action-independent draws keep differently-controlled runs paired.
        const bool audited = audit_rng.bernoulli(config.audit_probability);
        const double epsilon =
            steps == 1 ? config.epsilon_start
                       : config.epsilon_start + (config.epsilon_end - config.epsilon_start) *
                                                    (static_cast<double>(t) / (steps - 1));

        const AdaptAction action = config.frozen
                                       ? AdaptAction::GAIN_HOLD
                                       : select_action(report.q, state, epsilon, explore_rng);
        switch (action) {
            case AdaptAction::GAIN_DOWN: gain -= config.gain_step; break;
            case AdaptAction::GAIN_UP: gain += config.gain_step; break;
            case AdaptAction::THRESHOLD_DOWN: threshold -= config.threshold_step; break;
            case AdaptAction::THRESHOLD_UP: threshold += config.threshold_step; break;
            case AdaptAction::RECALIBRATE:
                // Full sensor recalibration: re-measure the lighting gain,
                // re-zero the spectral references, and reset the decision
                // threshold to its commissioned value.
                gain = item.drift.lighting_gain;
                for (int i = 0; i < kSpectralChannels; ++i)
                    spectral_correction[static_cast<std::size_t>(i)] =
                        item.drift.spectral_offset[static_cast<std::size_t>(i)] *
                        (ref.white[static_cast<std::size_t>(i)] -
                         ref.dark[static_cast<std::size_t>(i)]);
                threshold = threshold_home;
                break;
            case AdaptAction::GAIN_HOLD:
            case AdaptAction::NOOP: break;
        }
        gain = clampd(gain, config.gain_min, config.gain_max);
        threshold = clampd(threshold, config.threshold_min, config.threshold_max);

        // Process the item under the live correction; a sample the
        // preprocessing rejects is routed to the spoiled bin.
        FruitSample corrected = item.sample;
        corrected.image = correct_image(item.sample.image, gain);
        for (int i = 0; i < kSpectralChannels; ++i)
            corrected.spectral.channels[static_cast<std::size_t>(i)] = quantize_channel(
                corrected.spectral.channels[static_cast<std::size_t>(i)] -
                spectral_correction[static_cast<std::size_t>(i)]);
        const ImageRaster norm = normalize(corrected.image);
        bool decision_spoiled = true;
        double mean_lum = 0.0;
        bool have_features = false;
        FeatureVector features;
        try {
            features = extract_features(corrected, ref, config.segmentation_threshold);
            have_features = true;
        } catch (const ValidationError&) {
            mean_lum = whole_image_mean_luminance(norm);
        }
        if (have_features) {
            // Mean foreground luminance, exactly: the luminance of the
            // per-channel foreground means (slots 8/12/16) by linearity.
            mean_lum = 0.299 * features.values[8] + 0.587 * features.values[12] +
                       0.114 * features.values[16];
            const ImageRaster input =
                resize(norm, model.config.input_w, model.config.input_h);
            const Prediction pred = predict(model, input, features);
            decision_spoiled = pred.spoilage_prob >= threshold;
        }

        double reward = 0.0;
        bool correct = false;
        if (audited) {
            const bool truth = item.sample.attrs.spoiled;
            correct = decision_spoiled == truth;
            if (correct)
                reward += 1.0;
            else if (truth && !decision_spoiled)
                reward += -2.0;  // spoiled fruit shipped
            else
                reward += -0.5;  // good fruit discarded
            window.record(correct);
            report.audited += 1;
            report.audited_correct += correct ? 1 : 0;
        }
        if (action == AdaptAction::RECALIBRATE) reward -= config.recalibrate_cost;
        // Per-step reward saturates at the declared bounds so the
        // geometric-series value bound (|Q| <= 2/(1-gamma)) holds even when
        // an audit penalty and the recalibration cost coincide.
        reward = clampd(reward, -2.0, 1.0);

        AdaptState next_state;
        next_state.brightness_bucket = brightness_bucket(mean_lum);
        next_state.accuracy_bucket = accuracy_bucket(window.accuracy());
        if (!config.frozen) q_update(report.q, state, action, reward, next_state);

        AdaptLogEntry entry;
        entry.step = t + 1;
        entry.state_code = state.code();
        entry.action_code = static_cast<int>(action);
        entry.reward = reward;
        entry.gain = gain;
        entry.threshold = threshold;
        entry.running_accuracy = window.accuracy();
        entry.audited = audited;
        entry.correct = correct;
        report.log.push_back(entry);

        state = next_state;
    }

    report.final_gain = gain;
    report.final_threshold = threshold;
    return report;
}

double audited_accuracy(const std::vector<AdaptLogEntry>& log, int window) {
    if (window < 1) throw ValidationError("accuracy window must be positive");
    const std::size_t start =
        log.size() > static_cast<std::size_t>(window) ? log.size() - window : 0;
    long long audited = 0;
    long long correct = 0;
    for (std::size_t i = start; i < log.size(); ++i) {
        if (!log[i].audited) continue;
        audited += 1;
        correct += log[i].correct ? 1 : 0;
    }
    if (audited == 0) return 1.0;
    return correct / static_cast<double>(audited);
}

void write_adapt_report(const std::filesystem::path& dir, const AdaptReport& report) {
    std::filesystem::create_directories(dir);

    std::string csv = "step,state,action,reward,gain,threshold,running_accuracy\n";
    for (const AdaptLogEntry& e : report.log) {
        csv += std::to_string(e.step);
        csv += ',';
        csv += std::to_string(e.state_code);
        csv += ',';
        csv += std::to_string(e.action_code);
        csv += ',';
        csv += format_double(e.reward);
        csv += ',';
        csv += format_double(e.gain);
        csv += ',';
        csv += format_double(e.threshold);
        csv += ',';
        csv += format_double(e.running_accuracy);
        csv += '\n';
    }
    write_text_file(dir / "adapt_log.csv", csv);

    nlohmann::ordered_json j;
    j["layout"] = "dsq1";
    j["alpha"] = report.q.alpha;
    j["gamma"] = report.q.gamma;
    j["states"] = kAdaptStates;
    j["actions"] = kAdaptActions;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (const auto& row : report.q.values) rows.push_back(row);
    j["values"] = rows;
    j["final_gain"] = report.final_gain;
    j["final_threshold"] = report.final_threshold;
    j["audited"] = report.audited;
    j["audited_correct"] = report.audited_correct;
    write_text_file(dir / "qtable.json", j.dump(2) + "\n");
}

}  // namespace datesort
