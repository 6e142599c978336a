#include "datesort/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace datesort {

ImageRaster resize(const ImageRaster& img, int target_w, int target_h) {
    if (img.width < 1 || img.height < 1)
        throw ValidationError("resize: empty source image");
    if (target_w < 1 || target_h < 1)
        throw ValidationError("resize: target dimensions must be >= 1");

    ImageRaster out;
    out.width = target_w;
    out.height = target_h;
    out.normalized = img.normalized;
    out.data.resize(static_cast<std::size_t>(target_w) * target_h * 3);

    const double sx = static_cast<double>(img.width) / target_w;
    const double sy = static_cast<double>(img.height) / target_h;

    for (int y = 0; y < target_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = img.at(x0, y0, c) * (1.0 - wx) + img.at(x1, y0, c) * wx;
                const double bot = img.at(x0, y1, c) * (1.0 - wx) + img.at(x1, y1, c) * wx;
                out.at(x, y, c) = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    return out;
}

ImageRaster normalize(const ImageRaster& img) {
    if (img.normalized) throw ValidationError("normalize: double normalization");
    ImageRaster out = img;
    out.normalized = true;
    for (double& v : out.data) v /= 255.0;
    return out;
}

namespace {

// Symmetric reflection: ... 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
int reflect_index(int i, int n) {
    while (i < 0 || i >= n) {
        if (i < 0) i = -1 - i;
        if (i >= n) i = 2 * n - 1 - i;
    }
    return i;
}

}  // namespace

ImageRaster gaussian_smooth(const ImageRaster& img, double sigma) {
    if (sigma < 0.0) throw ValidationError("gaussian_smooth: negative sigma");
    if (sigma == 0.0) return img;

    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        kernel[k + radius] = std::exp(-0.5 * (k * k) / (sigma * sigma));
        sum += kernel[k + radius];
    }
    for (double& w : kernel) w /= sum;

    const int w = img.width, h = img.height;
    ImageRaster tmp = img;
    // horizontal pass
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    acc += kernel[k + radius] * img.at(reflect_index(x + k, w), y, c);
                }
                tmp.at(x, y, c) = acc;
            }
        }
    }
    // vertical pass
    ImageRaster out = tmp;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    acc += kernel[k + radius] * tmp.at(x, reflect_index(y + k, h), c);
                }
                out.at(x, y, c) = acc;
            }
        }
    }
    return out;
}

SpectralReading calibrate_spectral(const SpectralReading& raw,
                                   const CalibrationReference& ref) {
    if (raw.kind != SpectralKind::RAW)
        throw ValidationError("calibrate_spectral: uncalibrated input expected");
    SpectralReading out;
    out.kind = SpectralKind::CALIBRATED;
    for (int i = 0; i < kSpectralChannels; ++i) {
        const double span = ref.white[i] - ref.dark[i];
        if (span <= 0.0) throw ValidationError("calibrate_spectral: degenerate reference");
        out.channels[i] = std::clamp((raw.channels[i] - ref.dark[i]) / span, 0.0, 1.2);
    }
    return out;
}

CalibrationReference default_calibration_reference() {
    CalibrationReference ref;
    for (int i = 0; i < kSpectralChannels; ++i) {
        ref.dark[i] = 120.0 + 3.0 * i;
        ref.white[i] = 3900.0 + 12.0 * i;
    }
    return ref;
}

}  // namespace datesort
