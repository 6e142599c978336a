#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <vector>

#include "datesort/neuralmodel.hpp"
#include "datesort/rng.hpp"
#include "datesort/synthcrop.hpp"

namespace datesort {

// ---------------------------------------------------------------------------
// State and action discretization
// ---------------------------------------------------------------------------

inline constexpr int kBrightnessBuckets = 5;  // edges 0.2 / 0.4 / 0.6 / 0.8
inline constexpr int kAccuracyBuckets = 4;    // edges 0.5 / 0.75 / 0.9
inline constexpr int kAdaptStates = kBrightnessBuckets * kAccuracyBuckets;  // 20

// Fixed action order; codes are load-bearing for the Q-table layout, the
// logs, and the argmax tie-break.
enum class AdaptAction : int {
    GAIN_DOWN = 0,    // correction gain -= 0.05
    GAIN_HOLD = 1,    // zero-magnitude
    GAIN_UP = 2,      // correction gain += 0.05
    THRESHOLD_DOWN = 3,  // spoilage threshold -= 0.05
    THRESHOLD_UP = 4,    // spoilage threshold += 0.05
    RECALIBRATE = 5,  // re-anchor the gain to the live lighting, costs 0.1
    NOOP = 6,         // reserved composite slot, zero-magnitude
};
inline constexpr int kAdaptActions = 7;

const char* action_name(AdaptAction a);

struct AdaptState {
    int brightness_bucket = 0;
    int accuracy_bucket = kAccuracyBuckets - 1;

    int code() const { return brightness_bucket * kAccuracyBuckets + accuracy_bucket; }
    bool operator==(const AdaptState&) const = default;
};

int brightness_bucket(double mean_luminance);
int accuracy_bucket(double rolling_accuracy);

// Rolling correctness window over the last `capacity` audited samples.
// Reads as perfect before any audit arrives (optimistic start).
class AuditWindow {
public:
    explicit AuditWindow(int capacity = 20);

    void record(bool correct);
    double accuracy() const;
    int count() const { return static_cast<int>(window_.size()); }

private:
    int capacity_;
    std::deque<bool> window_;
};

// ---------------------------------------------------------------------------
// Q-learning
// ---------------------------------------------------------------------------

struct QTable {
    double alpha = 0.1;
    double gamma = 0.9;
    std::array<std::array<double, kAdaptActions>, kAdaptStates> values{};

    double& at(int state, int action) {
        return values[static_cast<std::size_t>(state)][static_cast<std::size_t>(action)];
    }
    double at(int state, int action) const {
        return values[static_cast<std::size_t>(state)][static_cast<std::size_t>(action)];
    }
};

// epsilon-greedy: uniform action with probability epsilon, otherwise the
// argmax over Q(state, .) with ties broken toward the lowest action code.
// Deterministic given the table, epsilon, and the rng state.
AdaptAction select_action(const QTable& q, const AdaptState& state, double epsilon, Rng& rng);

// Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)).
// Non-finite rewards or table entries are an error.
void q_update(QTable& q, const AdaptState& state, AdaptAction action, double reward,
              const AdaptState& next_state);

// ---------------------------------------------------------------------------
// Control loop
// ---------------------------------------------------------------------------

struct AdaptConfig {
    int audit_window = 20;
    double audit_probability = 0.2;  // fraction of items with revealed truth
    double epsilon_start = 0.3;      // linear decay across the run
    double epsilon_end = 0.02;
    double alpha = 0.1;
    double gamma = 0.9;
    double gain_step = 0.05;
    double threshold_step = 0.05;
    double gain_min = 0.5;
    double gain_max = 1.5;
    double threshold_min = 0.05;
    double threshold_max = 0.95;
    double recalibrate_cost = 0.1;
    // Safety-ordered starting values, i.e. a commissioning prior the
    // learner then refines. With sparse audits the return of an
    // always-correct policy is audit_probability/(1-gamma) (2.0 at the
    // defaults); initializing hold, noop, and recalibrate just above that
    // makes them the first tries everywhere (ties resolve to hold), with
    // recalibration the immediate fallback once holding steady loses value
    // in a degraded state. In off-nominal brightness states recalibration
    // starts a little higher still — when the line looks too dark or too
    // bright, re-zeroing the sensor is the obvious first move. The raw
    // gain/threshold nudges are last-resort actuators: each update closes a
    // fraction alpha*(1-gamma) of the gap to the attainable return, so the
    // spread is sized to keep an occasionally-explored nudge below the safe
    // actions for the life of a run rather than merely for its first visits.
    double q_init = 2.2;          // hold / noop / recalibrate at nominal brightness
    double q_init_spread = 22.0;  // gain/threshold steps start this far below
    double q_init_recal_boost = 0.8;  // extra recalibrate prior off nominal brightness
    double initial_q(AdaptAction a, int brightness_bucket) const {
        switch (a) {
            case AdaptAction::GAIN_HOLD:
            case AdaptAction::NOOP: return q_init;
            case AdaptAction::RECALIBRATE:
                return brightness_bucket == kBrightnessBuckets / 2
                           ? q_init
                           : q_init + q_init_recal_boost;
            default: return q_init - q_init_spread;
        }
    }
    double segmentation_threshold = kDefaultSegmentationThreshold;
    bool frozen = false;  // baseline arm: always GAIN_HOLD, no learning
    std::uint64_t seed = 1;
};

void validate_adapt_config(const AdaptConfig& config);

struct AdaptLogEntry {
    int step = 0;            // 1-based
    int state_code = 0;      // state observed before acting
    int action_code = 0;
    double reward = 0.0;
    double gain = 0.0;       // correction gain after the action
    double threshold = 0.0;  // spoilage threshold after the action
    double running_accuracy = 0.0;  // rolling audited accuracy after the step
    bool audited = false;
    bool correct = false;    // spoilage decision vs audit truth
};

struct AdaptReport {
    QTable q;
    std::vector<AdaptLogEntry> log;
    double final_gain = 1.0;
    double final_threshold = 0.5;
    long long audited = 0;
    long long audited_correct = 0;
};

// observe -> select -> apply -> predict -> reward -> learn, for `steps`
// conveyor emissions. Actions mutate the live correction gain (the raw
// image is divided by it before preprocessing) and the spoilage decision
// threshold; the trained model itself stays untouched. Rewards follow the
// audit stream: +1 correct spoilage decision, -2 false negative, -0.5 false
// positive, 0 unaudited, minus 0.1 whenever the action was RECALIBRATE.
// Audit and exploration draws come from streams independent of the action
// sequence, so runs with different policies stay sample-paired.
AdaptReport run_adaptation(const NetworkModel& model, ConveyorStream& stream, int steps,
                           const AdaptConfig& config);

// Mean audited correctness over the last `window` log entries.
double audited_accuracy(const std::vector<AdaptLogEntry>& log, int window);

// Writes adapt_log.csv (step, state, action, reward, gain, threshold,
// running accuracy) and qtable.json into `dir`.
void write_adapt_report(const std::filesystem::path& dir, const AdaptReport& report);

}  // namespace datesort
