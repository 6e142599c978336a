#pragma once

#include <map>
#include <optional>

#include "datesort/rng.hpp"
#include "datesort/types.hpp"

namespace datesort {

// Per-variety appearance and chemistry profile. The values are synthetic
// inventions tuned so that every downstream signal (visual, spectral,
// shelf life) is present and learnable; see README for the table.
struct VarietyProfile {
    std::array<double, 3> base_rgb;  // 8-bit RGB at TAMAR stage
    double size_frac;                // semi-major axis / canvas size
    double aspect;                   // major / minor axis ratio
    int spectral_center;             // primary reflectance bump channel
    int spectral_center2;            // secondary bump channel (opposite sign)
    double tamar_moisture;           // mean moisture % at TAMAR
    double tss_mean;                 // degrees Brix
    double sugar_mean;               // percent
    double tannin_mean;              // index
    double ph_mean;
    double firmness_tamar;           // newtons at TAMAR
    std::array<double, 3> stage_probs;  // P(KHALAL), P(RUTAB), P(TAMAR)
};

const VarietyProfile& variety_profile(Variety v);

struct GeneratorConfig {
    int canvas = 64;                 // square image side in pixels
    double class_separation = 1.0;   // scales inter-variety spectral spread
    double spoilage_prob = 0.1;      // injected spoilage rate
    double spectral_noise = 0.02;    // per-channel noise, reflectance units
    double speckle_noise = 4.0;      // surface speckle sigma, 8-bit units
    double tamar_moisture_max = 30.0;  // TAMAR stage moisture ceiling
};

// Fully deterministic in (config, variety, ripeness, seed).
FruitSample generate_sample(const GeneratorConfig& cfg, Variety variety,
                            Ripeness ripeness, std::uint64_t seed);

struct DatasetSpec {
    std::map<Variety, int> counts;
};

// Mirrors the source data's class imbalance: counts between 50 and 276,
// 963 samples total.
DatasetSpec paper_shaped_spec();

// Generates exactly the requested counts with contiguous ids starting at 0.
std::vector<FruitSample> generate_dataset(const GeneratorConfig& cfg,
                                          const DatasetSpec& spec,
                                          std::uint64_t seed);

// Snaps a raw spectral value to the 6-decimal grid used for persisted
// spectra, so in-memory channels and serialized channels agree exactly.
double quantize_channel(double x);

// The noiseless reflectance the generator would emit for the given sample
// parameters. Test hook for chemistry-estimation oracles.
std::array<double, kSpectralChannels> true_reflectance(
    const GeneratorConfig& cfg, Variety variety, Ripeness ripeness,
    const IntrinsicAttributes& attrs);

// ---------------------------------------------------------------------------
// Conveyor stream with environmental drift
// ---------------------------------------------------------------------------

struct DriftConfig {
    bool enabled = true;
    double lighting_sigma = 0.02;      // random-walk step on the gain
    double spectral_sigma = 0.002;     // walk step per channel, reflectance units
    double spectral_cap = 0.04;        // |offset| ceiling, reflectance units
    double gain_min = 0.5;
    double gain_max = 1.5;
};

struct StreamItem {
    FruitSample sample;  // drift already applied to image and spectral
    DriftState drift;
};

// Endless seeded-shuffle iteration over a dataset. Each pass reshuffles;
// the drift random walk advances one reflected step per emission.
class ConveyorStream {
public:
    ConveyorStream(std::vector<FruitSample> dataset, DriftConfig drift,
                   std::uint64_t seed);

    StreamItem next();
    int steps_emitted() const { return state_.time_step; }

private:
    std::vector<FruitSample> dataset_;
    DriftConfig drift_;
    Rng order_rng_;
    Rng drift_rng_;
    std::vector<int> order_;
    std::size_t cursor_ = 0;
    DriftState state_;
};

}  // namespace datesort
