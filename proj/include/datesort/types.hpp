#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace datesort {

// Input validation failures (bad config, bad file, violated precondition).
// The CLI maps these to exit code 1; everything else to 2.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// ---------------------------------------------------------------------------
// Labels
// ---------------------------------------------------------------------------

enum class Variety : int {
    IRAQI = 0,
    ROTANA = 1,
    DEGLET = 2,
    BERHI = 3,
    AJWA = 4,
    MEDJOOL_RUTAB = 5,
    SUKKARY_RUTAB = 6,
    SUKKARY_DRIED = 7,
};

constexpr int kNumVarieties = 8;

const char* variety_name(Variety v);
Variety variety_from_name(const std::string& name);

enum class Ripeness : int { KHALAL = 0, RUTAB = 1, TAMAR = 2 };

const char* ripeness_name(Ripeness r);
Ripeness ripeness_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Rasters and spectra
// ---------------------------------------------------------------------------

// RGB raster, row-major, 3 channels interleaved. Raw stage holds integral
// 8-bit values (stored as double); once normalized, values live in [0, 1].
struct ImageRaster {
    int width = 0;
    int height = 0;
    bool normalized = false;
    std::vector<double> data;  // size = width * height * 3

    static ImageRaster raw(int w, int h, double fill = 0.0) {
        ImageRaster img;
        img.width = w;
        img.height = h;
        img.normalized = false;
        img.data.assign(static_cast<std::size_t>(w) * h * 3, fill);
        return img;
    }

    double& at(int x, int y, int c) {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }
    double at(int x, int y, int c) const {
        return data[(static_cast<std::size_t>(y) * width + x) * 3 + c];
    }

    double luminance(int x, int y) const {
        return 0.299 * at(x, y, 0) + 0.587 * at(x, y, 1) + 0.114 * at(x, y, 2);
    }

    bool operator==(const ImageRaster&) const = default;
};

constexpr int kSpectralChannels = 18;

enum class SpectralKind { RAW, CALIBRATED };

struct SpectralReading {
    std::array<double, kSpectralChannels> channels{};
    SpectralKind kind = SpectralKind::RAW;

    bool operator==(const SpectralReading&) const = default;
};

// Dark / white reference readings used to convert raw counts to reflectance.
struct CalibrationReference {
    std::array<double, kSpectralChannels> dark{};
    std::array<double, kSpectralChannels> white{};
};

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

struct IntrinsicAttributes {
    double moisture = 0.0;        // percent, [0, 100]
    double tss = 0.0;             // degrees Brix, >= 0
    double sugar = 0.0;           // percent, [0, 100]
    double tannin = 0.0;          // index, >= 0
    double ph = 7.0;              // [0, 14]
    double firmness = 1.0;        // newtons, > 0
    int days_to_expiry = 0;       // >= 0
    bool spoiled = false;         // spoiled implies days_to_expiry == 0

    bool operator==(const IntrinsicAttributes&) const = default;
};

struct FruitSample {
    int id = 0;
    Variety variety = Variety::IRAQI;
    Ripeness ripeness = Ripeness::TAMAR;
    std::uint64_t seed = 0;
    IntrinsicAttributes attrs;
    ImageRaster image;        // raw 8-bit stage
    SpectralReading spectral; // raw counts

    bool operator==(const FruitSample&) const = default;
};

// Environmental drift carried alongside each conveyor emission.
struct DriftState {
    double lighting_gain = 1.0;  // clamped to [0.5, 1.5]
    std::array<double, kSpectralChannels> spectral_offset{};  // reflectance units
    int time_step = 0;
};

}  // namespace datesort
