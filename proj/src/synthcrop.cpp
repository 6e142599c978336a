#include "datesort/synthcrop.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "datesort/preprocess.hpp"

namespace datesort {

namespace {

// Synthetic variety catalogue. Colors are 8-bit RGB at full ripeness; sizes
// are fractions of the canvas; spectral centers pick which reflectance
// channels carry the variety signature.
const std::array<VarietyProfile, kNumVarieties> kProfiles = {{
    // IRAQI
    {{118, 74, 48}, 0.30, 1.55, 2, 9, 24.0, 36.0, 63.0, 1.0, 5.9, 2.8, {0.20, 0.30, 0.50}},
    // ROTANA
    {{96, 60, 42}, 0.27, 1.40, 4, 11, 26.0, 34.0, 60.0, 0.8, 6.1, 2.5, {0.25, 0.35, 0.40}},
    // DEGLET
    {{168, 118, 62}, 0.24, 1.70, 6, 13, 22.0, 38.0, 66.0, 0.6, 5.7, 3.4, {0.20, 0.40, 0.40}},
    // BERHI
    {{196, 150, 74}, 0.26, 1.15, 8, 15, 28.0, 30.0, 55.0, 1.6, 5.5, 3.0, {0.45, 0.35, 0.20}},
    // AJWA
    {{64, 40, 36}, 0.28, 1.30, 10, 17, 23.0, 33.0, 58.0, 1.3, 6.0, 2.6, {0.15, 0.35, 0.50}},
    // MEDJOOL_RUTAB
    {{132, 78, 50}, 0.34, 1.45, 12, 1, 29.0, 32.0, 61.0, 0.9, 5.8, 2.2, {0.10, 0.70, 0.20}},
    // SUKKARY_RUTAB
    {{176, 132, 82}, 0.29, 1.25, 14, 3, 28.0, 35.0, 64.0, 0.7, 5.6, 2.0, {0.10, 0.75, 0.15}},
    // SUKKARY_DRIED
    {{150, 110, 70}, 0.26, 1.28, 16, 5, 18.0, 42.0, 70.0, 0.5, 5.4, 4.2, {0.05, 0.10, 0.85}},
}};

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double bump(double i, double center, double width) {
    double d = (i - center) / width;
    return std::exp(-0.5 * d * d);
}

double clampd(double x, double lo, double hi) { return std::min(hi, std::max(lo, x)); }

struct StageShifts {
    double moisture;  // added to the variety's TAMAR moisture mean
    double tss;
    double sugar;
    double tannin;
    double firmness;
    double level;    // broadband reflectance offset
    double chloro;   // short-wavelength bump amplitude
    double gloss;    // specular highlight strength, 8-bit units
    double mix;      // fraction of the variety's mature color
};

const std::array<StageShifts, 3> kStages = {{
    // KHALAL: firm, astringent, high moisture, pale surface.
    {30.0, -12.0, -20.0, 2.2, 4.0, 0.020, 0.045, 8.0, 0.28},
    // RUTAB: softening, glossy, sugars rising.
    {12.0, -5.0, -8.0, 0.8, 1.5, 0.005, 0.015, 30.0, 0.65},
    // TAMAR: cured, dark, concentrated sugars.
    {0.0, 0.0, 0.0, 0.0, 0.0, -0.010, 0.0, 20.0, 1.0},
}};

IntrinsicAttributes sample_attributes(const GeneratorConfig& cfg, const VarietyProfile& p,
                                      Ripeness ripeness, Rng& rng) {
    const StageShifts& st = kStages[static_cast<int>(ripeness)];
    IntrinsicAttributes a;
    a.moisture = clampd(rng.normal(p.tamar_moisture + st.moisture, 3.0), 5.0, 75.0);
    if (ripeness == Ripeness::TAMAR) a.moisture = std::min(a.moisture, cfg.tamar_moisture_max);
    a.tss = clampd(rng.normal(p.tss_mean + st.tss, 2.0), 5.0, 60.0);
    a.sugar = clampd(rng.normal(p.sugar_mean + st.sugar, 2.5), 5.0, 90.0);
    a.tannin = std::max(0.05, rng.normal(p.tannin_mean + st.tannin, 0.4));
    a.ph = clampd(rng.normal(p.ph_mean, 0.15), 3.5, 8.0);
    a.firmness = std::max(0.3, rng.normal(p.firmness_tamar + st.firmness, 0.5));
    a.spoiled = rng.bernoulli(cfg.spoilage_prob);
    if (a.spoiled) a.firmness = std::max(0.3, a.firmness * 0.75);
    // Shelf life: drier, tannic, firm fruit keeps longest.
    double eps = rng.normal(0.0, 2.0);
    double days = 40.0 - 0.8 * (a.moisture - 20.0) + 1.5 * a.tannin -
                  4.0 * (3.0 - a.firmness) + eps;
    a.days_to_expiry = a.spoiled ? 0 : static_cast<int>(clampd(std::lround(days), 0.0, 365.0));
    return a;
}

struct Blotch {
    double u, v;   // center in normalized ellipse coordinates
    double r;      // radius in the same coordinates
    double dark;   // multiplicative darkness at the core
};

ImageRaster render_image(const GeneratorConfig& cfg, const VarietyProfile& p,
                         Ripeness ripeness, const IntrinsicAttributes& attrs, Rng& rng) {
    const int n = cfg.canvas;
    const StageShifts& st = kStages[static_cast<int>(ripeness)];
    ImageRaster img = ImageRaster::raw(n, n, 0.0);

    // Pose.
    double cx = n / 2.0 + rng.normal(0.0, 1.5);
    double cy = n / 2.0 + rng.normal(0.0, 1.5);
    double theta = rng.uniform(0.0, 3.14159265358979323846);
    double a = p.size_frac * n * (1.0 + rng.normal(0.0, 0.04));
    double b = a / p.aspect;
    a = std::max(3.0, a);
    b = std::max(2.0, b);
    double ct = std::cos(theta), sn = std::sin(theta);

    // Surface color interpolates from the pale immature reference to the
    // variety's mature color.
    const double khalal_ref[3] = {208.0, 186.0, 96.0};
    double fruit_rgb[3];
    for (int c = 0; c < 3; ++c)
        fruit_rgb[c] = (1.0 - st.mix) * khalal_ref[c] + st.mix * p.base_rgb[c];
    double dull = attrs.spoiled ? 0.90 : 1.0;

    std::vector<Blotch> blotches;
    if (attrs.spoiled) {
        int nb = 2 + static_cast<int>(rng.uniform_int(3));
        for (int i = 0; i < nb; ++i) {
            Blotch bl;
            do {
                bl.u = rng.uniform(-0.65, 0.65);
                bl.v = rng.uniform(-0.65, 0.65);
            } while (bl.u * bl.u + bl.v * bl.v > 0.45);
            bl.r = rng.uniform(0.10, 0.22);
            bl.dark = rng.uniform(0.40, 0.60);
            blotches.push_back(bl);
        }
    }

    // Conveyor background: dark with a mild vertical gradient and grain.
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            double base = 18.0 + 5.0 * (n > 1 ? static_cast<double>(y) / (n - 1) : 0.0) +
                          rng.normal(0.0, 1.2);
            for (int c = 0; c < 3; ++c) img.at(x, y, c) = base;
        }

    static const double sub[4][2] = {{-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}, {0.25, 0.25}};
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            // 4x supersampled coverage plus the ellipse-local coordinates of
            // the pixel center.
            int hits = 0;
            for (auto& s : sub) {
                double dx = x + s[0] - cx, dy = y + s[1] - cy;
                double u = (dx * ct + dy * sn) / a;
                double v = (-dx * sn + dy * ct) / b;
                if (u * u + v * v <= 1.0) ++hits;
            }
            if (hits == 0) continue;
            double cov = hits / 4.0;
            double dx = x - cx, dy = y - cy;
            double u = (dx * ct + dy * sn) / a;
            double v = (-dx * sn + dy * ct) / b;
            double f = std::min(1.0, u * u + v * v);

            double shade = (1.0 - 0.28 * f) * (1.0 + 0.10 * u);
            double highlight = st.gloss * bump(u, -0.35, 0.18) * bump(v, -0.30, 0.18);
            double factor = 1.0;
            for (const Blotch& bl : blotches) {
                double d2 = ((u - bl.u) * (u - bl.u) + (v - bl.v) * (v - bl.v)) / (bl.r * bl.r);
                if (d2 < 1.0) factor = std::min(factor, bl.dark + (1.0 - bl.dark) * d2);
            }
            double speckle = rng.normal(0.0, cfg.speckle_noise);
            for (int c = 0; c < 3; ++c) {
                double fruit = fruit_rgb[c] * dull * shade * factor + highlight + speckle;
                double& px = img.at(x, y, c);
                px = px + cov * (fruit - px);
            }
        }

    for (double& v : img.data) v = clampd(std::lround(v), 0.0, 255.0);
    return img;
}

}  // namespace

const VarietyProfile& variety_profile(Variety v) {
    return kProfiles[static_cast<int>(v)];
}

double quantize_channel(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return std::strtod(buf, nullptr);
}

std::array<double, kSpectralChannels> true_reflectance(const GeneratorConfig& cfg,
                                                       Variety variety, Ripeness ripeness,
                                                       const IntrinsicAttributes& attrs) {
    const VarietyProfile& p = variety_profile(variety);
    const StageShifts& st = kStages[static_cast<int>(ripeness)];
    int vi = static_cast<int>(variety);
    double amp = 0.09 * cfg.class_separation * (vi % 2 == 0 ? 1.0 : -1.0);

    std::array<double, kSpectralChannels> r{};
    for (int i = 0; i < kSpectralChannels; ++i) {
        double x = 0.25 + 0.35 * sigmoid((i - 6.0) / 3.0);
        // The secondary bump is kept narrow so no variety signature comes
        // close to duplicating one of the chemistry patterns below.
        x += amp * bump(i, p.spectral_center, 1.8);
        x -= 0.5 * amp * bump(i, p.spectral_center2, 1.4);
        x += st.level + st.chloro * bump(i, 1.0, 2.0);
        x += -0.006 * (attrs.moisture - 30.0) * bump(i, 15.0, 3.0);
        x += 0.004 * (attrs.tss - 35.0) * bump(i, 7.0, 2.5);
        x += 0.003 * (attrs.sugar - 60.0) * bump(i, 5.5, 2.2);
        x += 0.020 * (attrs.tannin - 1.0) * bump(i, 2.5, 2.0);
        x += 0.015 * (attrs.ph - 5.8) * bump(i, 9.5, 2.0);
        x += 0.008 * (attrs.firmness - 3.0) * bump(i, 13.0, 2.5);
        if (attrs.spoiled) x += -0.05 * bump(i, 11.5, 2.5);
        r[i] = clampd(x, 0.01, 1.10);
    }
    return r;
}

FruitSample generate_sample(const GeneratorConfig& cfg, Variety variety, Ripeness ripeness,
                            std::uint64_t seed) {
    if (cfg.canvas < 8) throw ValidationError("generate_sample: canvas must be at least 8");
    const VarietyProfile& p = variety_profile(variety);

    Rng attr_rng(derive_seed(seed, "attrs"));
    IntrinsicAttributes attrs = sample_attributes(cfg, p, ripeness, attr_rng);

    Rng img_rng(derive_seed(seed, "image"));
    ImageRaster img = render_image(cfg, p, ripeness, attrs, img_rng);

    Rng spec_rng(derive_seed(seed, "spectral"));
    std::array<double, kSpectralChannels> refl = true_reflectance(cfg, variety, ripeness, attrs);
    CalibrationReference ref = default_calibration_reference();
    SpectralReading reading;
    reading.kind = SpectralKind::RAW;
    for (int i = 0; i < kSpectralChannels; ++i) {
        double noisy = refl[i] + spec_rng.normal(0.0, cfg.spectral_noise);
        double raw = ref.dark[i] + noisy * (ref.white[i] - ref.dark[i]);
        reading.channels[i] = quantize_channel(raw);
    }

    FruitSample s;
    s.id = 0;
    s.variety = variety;
    s.ripeness = ripeness;
    s.seed = seed;
    s.attrs = attrs;
    s.image = std::move(img);
    s.spectral = reading;
    return s;
}

DatasetSpec paper_shaped_spec() {
    DatasetSpec spec;
    static const int counts[kNumVarieties] = {50, 276, 120, 90, 140, 75, 112, 100};
    for (int v = 0; v < kNumVarieties; ++v)
        spec.counts[static_cast<Variety>(v)] = counts[v];
    return spec;
}

std::vector<FruitSample> generate_dataset(const GeneratorConfig& cfg, const DatasetSpec& spec,
                                          std::uint64_t seed) {
    std::vector<FruitSample> out;
    int id = 0;
    for (const auto& [variety, count] : spec.counts) {
        if (count < 0) throw ValidationError("generate_dataset: negative sample count");
        const VarietyProfile& p = variety_profile(variety);
        for (int k = 0; k < count; ++k) {
            std::uint64_t sample_seed = derive_seed(seed, static_cast<std::uint64_t>(id));
            // The ripeness draw must not disturb the per-sample streams, so
            // it gets its own derived stream.
            Rng stage_rng(derive_seed(sample_seed, "stage"));
            double u = stage_rng.uniform();
            Ripeness rip = Ripeness::TAMAR;
            if (u < p.stage_probs[0])
                rip = Ripeness::KHALAL;
            else if (u < p.stage_probs[0] + p.stage_probs[1])
                rip = Ripeness::RUTAB;
            FruitSample s = generate_sample(cfg, variety, rip, sample_seed);
            s.id = id++;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// ConveyorStream
// ---------------------------------------------------------------------------

namespace {

// One reflected random-walk step confined to [lo, hi].
double reflect_step(double x, double step, double lo, double hi) {
    double y = x + step;
    // Two folds are enough for any step smaller than the interval.
    if (y > hi) y = 2.0 * hi - y;
    if (y < lo) y = 2.0 * lo - y;
    return clampd(y, lo, hi);
}

}  // namespace

ConveyorStream::ConveyorStream(std::vector<FruitSample> dataset, DriftConfig drift,
                               std::uint64_t seed)
    : dataset_(std::move(dataset)),
      drift_(drift),
      order_rng_(derive_seed(seed, "order")),
      drift_rng_(derive_seed(seed, "drift")) {
    if (dataset_.empty()) throw ValidationError("ConveyorStream: dataset is empty");
    order_.resize(dataset_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    order_rng_.shuffle(order_);
    state_ = DriftState{};
}

StreamItem ConveyorStream::next() {
    if (cursor_ == order_.size()) {
        order_rng_.shuffle(order_);
        cursor_ = 0;
    }
    // Advance the environment one step. The walk consumes the same amount of
    // randomness whether or not drift is enabled, so streams stay paired.
    double gain_step = drift_rng_.normal(0.0, drift_.lighting_sigma);
    std::array<double, kSpectralChannels> spec_steps;
    for (int i = 0; i < kSpectralChannels; ++i)
        spec_steps[i] = drift_rng_.normal(0.0, drift_.spectral_sigma);
    if (drift_.enabled) {
        state_.lighting_gain =
            reflect_step(state_.lighting_gain, gain_step, drift_.gain_min, drift_.gain_max);
        for (int i = 0; i < kSpectralChannels; ++i)
            state_.spectral_offset[i] = reflect_step(state_.spectral_offset[i], spec_steps[i],
                                                     -drift_.spectral_cap, drift_.spectral_cap);
    }
    state_.time_step += 1;

    StreamItem item;
    item.sample = dataset_[order_[cursor_++]];
    item.drift = state_;

    ImageRaster& img = item.sample.image;
    for (double& v : img.data)
        v = clampd(std::lround(v * state_.lighting_gain), 0.0, 255.0);

    CalibrationReference ref = default_calibration_reference();
    SpectralReading& sp = item.sample.spectral;
    if (sp.kind != SpectralKind::RAW)
        throw ValidationError("ConveyorStream: expected raw spectral readings");
    for (int i = 0; i < kSpectralChannels; ++i) {
        double shifted =
            sp.channels[i] + state_.spectral_offset[i] * (ref.white[i] - ref.dark[i]);
        sp.channels[i] = quantize_channel(shifted);
    }
    return item;
}

}  // namespace datesort
