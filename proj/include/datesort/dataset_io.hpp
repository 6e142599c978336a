#pragma once

#include <filesystem>
#include <string>

#include "datesort/synthcrop.hpp"

namespace datesort {

inline constexpr const char* kDatasetLayoutTag = "dsdata1";

// Plain-text P3 PPM, 8-bit, one image row per text line. Requires a raw
// (un-normalized) raster with integral values in [0, 255]; decoding the
// emitted text reproduces the raster bit for bit.
std::string encode_ppm(const ImageRaster& img);

// Parses a plain P3 document. Malformed headers, non-integer samples,
// out-of-range values, or a sample count that disagrees with the declared
// dimensions are ValidationErrors quoting `name`.
ImageRaster decode_ppm(const std::string& text, const std::string& name);

// One reflectance value per line, printed with six decimal places — the
// same grid the generator quantizes to, so a decoded reading equals the
// in-memory one exactly.
std::string encode_spectral_csv(const SpectralReading& reading);
SpectralReading decode_spectral_csv(const std::string& text, const std::string& name);

struct StoredDataset {
    GeneratorConfig config;   // echo of the generating configuration
    std::uint64_t seed = 0;   // root seed the generator ran with
    std::vector<FruitSample> samples;
};

// Writes `manifest.json` plus `img/<id>.ppm` and `spec/<id>.csv` per sample
// into `dir` (created if missing). Samples must carry unique ids and raw
// image/spectral stages. Deterministic: identical inputs produce identical
// bytes in every file.
void write_dataset(const std::filesystem::path& dir, const std::vector<FruitSample>& samples,
                   const GeneratorConfig& config, std::uint64_t seed);

// Loads a directory written by write_dataset, validating the manifest
// layout tag, the per-sample files, and the invariants the generator
// guarantees (unique ids, spoiled implies zero shelf days). Every failure
// names the offending file or sample id. Round trip is bit-exact:
// read_dataset(write_dataset(d)) compares equal to d.
StoredDataset read_dataset(const std::filesystem::path& dir);

}  // namespace datesort
