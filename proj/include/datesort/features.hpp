#pragma once

#include <optional>

#include "datesort/types.hpp"

namespace datesort {

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // row-major, 1 = foreground

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v) {
        bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0;
    }
    int foreground_count() const;

    static BinaryMask blank(int w, int h) {
        BinaryMask m;
        m.width = w;
        m.height = h;
        m.bits.assign(static_cast<std::size_t>(w) * h, 0);
        return m;
    }
};

// Foreground = pixels whose luminance differs from the border-sampled
// background level by more than `threshold`; only the largest 4-connected
// component is kept. Requires a normalized image; throws "no fruit detected"
// when nothing survives.
BinaryMask segment(const ImageRaster& img, double threshold);

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

struct GeometricFeatures {
    double area = 0.0;         // foreground pixel count
    double perimeter = 0.0;    // Moore boundary trace, diagonal steps sqrt(2)
    double major_axis = 0.0;   // 4*sqrt(lambda1) of the central second moments
    double minor_axis = 0.0;   // 4*sqrt(lambda2)
    double eccentricity = 0.0; // sqrt(1 - lambda2/lambda1)
    double solidity = 0.0;     // area / convex_area
    double convex_area = 0.0;  // lattice points covered by the closed hull
    double aspect_ratio = 1.0; // major / minor
};

// Moment-based equivalent-ellipse geometry plus hull-based solidity. The
// convex area counts the pixel centers covered by the closed convex hull of
// the foreground (shoelace area + boundary/2 + 1), which makes a filled
// axis-aligned rectangle exactly its own hull. Throws "degenerate geometry"
// for masks without two-dimensional extent.
GeometricFeatures geometric_features(const BinaryMask& mask);

// ---------------------------------------------------------------------------
// Color statistics
// ---------------------------------------------------------------------------

struct ColorStats {
    // Population moments over foreground pixels, indexed R, G, B.
    std::array<double, 3> mean{};
    std::array<double, 3> stddev{};
    std::array<double, 3> skewness{};  // m3 / s^3, 0 for a constant channel
    std::array<double, 3> kurtosis{};  // m4 / s^4 - 3 (excess), 0 for constant
};

ColorStats color_stats(const ImageRaster& img, const BinaryMask& mask);

// ---------------------------------------------------------------------------
// Texture
// ---------------------------------------------------------------------------

// Shannon entropy (base 2) of the 256-bin histogram of foreground luminance;
// bin = floor(l * 255) on the normalized image, clamped to [0, 255].
double entropy(const ImageRaster& img, const BinaryMask& mask);

// One 2D analysis level of the Daubechies-4 wavelet on an n-by-n row-major
// block (n even, >= 8): rows are filtered and downsampled first, then
// columns. Subband naming is row-filter then column-filter, so LH holds the
// row-lowpass / column-highpass quadrant. Periodic extension throughout.
struct Daub4Level {
    int half = 0;  // subband side length = n / 2
    std::vector<double> ll, lh, hl, hh;
};

Daub4Level daub4_level(const std::vector<double>& block, int n);

// Crops the mask's bounding box from the normalized image's luminance plane,
// resamples it to 32x32, applies a 2-level Daub4 DWT, and returns the mean
// squared coefficient of each subband in the order
// [LL2, LH1, HL1, HH1, LH2, HL2, HH2]. Detail energies of a constant input
// are exactly zero. Throws if the bounding box is smaller than 4x4.
std::array<double, 7> daub4_energies(const ImageRaster& img, const BinaryMask& mask);

struct TextureFeatures {
    double entropy = 0.0;                     // bits, [0, 8]
    std::array<double, 7> wavelet_energies{}; // all >= 0
};

TextureFeatures texture_features(const ImageRaster& img, const BinaryMask& mask);

// ---------------------------------------------------------------------------
// Spectral chemistry estimation
// ---------------------------------------------------------------------------

// Per-attribute affine maps from the 18 calibrated channels.
struct ChemistryModel {
    std::array<std::array<double, kSpectralChannels>, 3> weights{};  // moisture, tss, sugar
    std::array<double, 3> bias{};
};

struct ChemistryEstimate {
    double moisture = 0.0;  // clamped to [0, 100]
    double tss = 0.0;       // clamped to [0, 100]
    double sugar = 0.0;     // clamped to [0, 100]
};

// Ridge-regularized least squares (bias unpenalized) of each target on the
// calibrated channels, solved in a standardized channel space with the
// penalty scaled by the sample count. The default penalty is only there to
// guard exact singularity; measurement noise conditions real fits on its
// own. Requires at least 20 samples.
ChemistryModel fit_chemistry(const std::vector<SpectralReading>& calibrated,
                             const std::vector<IntrinsicAttributes>& attrs,
                             double ridge = 1e-9);

// Throws "uncalibrated input" when handed a RAW reading.
ChemistryEstimate estimate_chemistry(const SpectralReading& spectral,
                                     const ChemistryModel& model);

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

constexpr int kFeatureCount = 46;
inline constexpr const char* kFeatureLayoutTag = "fv1";

// Slot names for the frozen fv1 layout:
//   [0..7]   geometry (area, perimeter, major, minor, eccentricity,
//            solidity, convex_area, aspect_ratio)
//   [8..19]  color stats, channel-major (r_mean, r_std, r_skew, r_kurt, g_*, b_*)
//   [20]     entropy
//   [21..27] wavelet energies (ll2, lh1, hl1, hh1, lh2, hl2, hh2)
//   [28..45] calibrated spectral channels 0..17
const std::array<const char*, kFeatureCount>& feature_slot_names();

struct FeatureVector {
    std::array<double, kFeatureCount> values{};
    std::string layout = kFeatureLayoutTag;
};

// Per-slot z-score standardization fitted on a training set. Slots with
// (numerically) zero spread are centered but not scaled.
class FeatureScaler {
public:
    void fit(const std::vector<FeatureVector>& training);
    FeatureVector transform(const FeatureVector& v) const;
    bool fitted() const { return fitted_; }

    const std::array<double, kFeatureCount>& mean() const { return mean_; }
    const std::array<double, kFeatureCount>& stddev() const { return stddev_; }
    void restore(const std::array<double, kFeatureCount>& mean,
                 const std::array<double, kFeatureCount>& stddev);

private:
    std::array<double, kFeatureCount> mean_{};
    std::array<double, kFeatureCount> stddev_{};
    bool fitted_ = false;
};

// Concatenates the four modalities into the frozen layout, standardizing
// with `scaler` when provided. Any missing modality is an error
// ("incomplete fusion input"); a spectral reading that is still RAW is too.
FeatureVector fuse(const std::optional<GeometricFeatures>& geom,
                   const std::optional<ColorStats>& color,
                   const std::optional<TextureFeatures>& texture,
                   const std::optional<SpectralReading>& spectral,
                   const FeatureScaler* scaler = nullptr);

inline constexpr double kDefaultSegmentationThreshold = 0.03;

// Whole-sample extraction: normalizes the raw image, segments it, runs all
// four modality extractors, calibrates the raw spectra against `ref`, and
// fuses. Exactly equivalent to composing the individual operations.
FeatureVector extract_features(const FruitSample& sample, const CalibrationReference& ref,
                               double segmentation_threshold = kDefaultSegmentationThreshold,
                               const FeatureScaler* scaler = nullptr);

}  // namespace datesort
