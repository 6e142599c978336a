#pragma once

#include "datesort/types.hpp"

namespace datesort {

// Bilinear resize with pixel-center alignment: output pixel (x, y) samples
// the source at ((x + 0.5) * sw / tw - 0.5, ...), clamped to the source grid.
// Resizing to the source dimensions reproduces the input bit for bit.
ImageRaster resize(const ImageRaster& img, int target_w, int target_h);

// Scale a raw 8-bit image into [0, 1] by dividing by 255.
// Rejects input that is already normalized.
ImageRaster normalize(const ImageRaster& img);

// Separable Gaussian blur, kernel radius ceil(3*sigma), kernel normalized to
// sum 1, symmetric reflection at the borders (index -1 maps to 0).
// sigma == 0 returns the input unchanged.
ImageRaster gaussian_smooth(const ImageRaster& img, double sigma);

// reflectance[i] = (raw[i] - dark[i]) / (white[i] - dark[i]), clamped to
// [0, 1.2]. Requires a RAW reading and white > dark on every channel.
SpectralReading calibrate_spectral(const SpectralReading& raw,
                                   const CalibrationReference& ref);

// Default desk-rig reference for the synthetic sensor.
CalibrationReference default_calibration_reference();

}  // namespace datesort
