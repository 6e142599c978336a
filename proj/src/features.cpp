#include "datesort/features.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "datesort/preprocess.hpp"

namespace datesort {

int BinaryMask::foreground_count() const {
    return static_cast<int>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

BinaryMask segment(const ImageRaster& img, double threshold) {
    if (!img.normalized) throw ValidationError("segment: image must be normalized");
    if (threshold < 0.0 || threshold >= 1.0)
        throw ValidationError("segment: threshold must lie in [0, 1)");
    const int w = img.width, h = img.height;

    // Background level sampled from the border ring.
    double bg = 0.0;
    int border = 0;
    for (int x = 0; x < w; ++x) {
        bg += img.luminance(x, 0) + img.luminance(x, h - 1);
        border += 2;
    }
    for (int y = 1; y < h - 1; ++y) {
        bg += img.luminance(0, y) + img.luminance(w - 1, y);
        border += 2;
    }
    bg /= border;

    std::vector<std::uint8_t> candidate(static_cast<std::size_t>(w) * h, 0);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (std::abs(img.luminance(x, y) - bg) > threshold)
                candidate[static_cast<std::size_t>(y) * w + x] = 1;

    // Largest 4-connected component, first-found on ties.
    std::vector<int> label(static_cast<std::size_t>(w) * h, -1);
    int best_label = -1, best_size = 0, next_label = 0;
    std::vector<int> stack;
    for (int start = 0; start < w * h; ++start) {
        if (!candidate[start] || label[start] != -1) continue;
        int size = 0;
        stack.clear();
        stack.push_back(start);
        label[start] = next_label;
        while (!stack.empty()) {
            int p = stack.back();
            stack.pop_back();
            ++size;
            int x = p % w, y = p / w;
            const int nx[4] = {x - 1, x + 1, x, x};
            const int ny[4] = {y, y, y - 1, y + 1};
            for (int k = 0; k < 4; ++k) {
                if (nx[k] < 0 || nx[k] >= w || ny[k] < 0 || ny[k] >= h) continue;
                int q = ny[k] * w + nx[k];
                if (candidate[q] && label[q] == -1) {
                    label[q] = next_label;
                    stack.push_back(q);
                }
            }
        }
        if (size > best_size) {
            best_size = size;
            best_label = next_label;
        }
        ++next_label;
    }
    if (best_label < 0) throw ValidationError("no fruit detected");

    BinaryMask mask = BinaryMask::blank(w, h);
    for (int i = 0; i < w * h; ++i)
        if (label[i] == best_label) mask.bits[i] = 1;
    return mask;
}

// ---------------------------------------------------------------------------
// Geometry
// ---------------------------------------------------------------------------

namespace {

// Moore boundary tracing with Jacob's stopping criterion. Axial steps count
// 1, diagonal steps sqrt(2).
double moore_perimeter(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    auto fg = [&](int x, int y) {
        return x >= 0 && x < w && y >= 0 && y < h && mask.at(x, y);
    };

    int sx = -1, sy = -1;
    for (int y = 0; y < h && sx < 0; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(x, y)) {
                sx = x;
                sy = y;
                break;
            }

    // Clockwise Moore neighborhood in image coordinates (y grows downward).
    static const int dx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
    static const int dy[8] = {0, 1, 1, 1, 0, -1, -1, -1};
    auto dir_index = [&](int fx, int fy, int tx, int ty) {
        for (int d = 0; d < 8; ++d)
            if (fx + dx[d] == tx && fy + dy[d] == ty) return d;
        return -1;
    };

    int cx = sx, cy = sy;      // current boundary pixel
    int bx = sx - 1, by = sy;  // backtrack (background by construction)

    // The trace is a deterministic map on (pixel, backtrack) states, so its
    // orbit always re-enters an earlier state; the boundary length is the
    // perimeter accumulated around that cycle. For well-formed blobs the
    // first repeat is the start state itself after one full loop. When the
    // start pixel is the tip of a one-pixel spur, the loop re-enters it with
    // a different backtrack and the initial state sits on a tail instead —
    // subtracting the perimeter recorded at the repeated state's first visit
    // drops that tail.
    std::vector<std::int32_t> first_seen(static_cast<std::size_t>(w) * h * 8, -1);
    std::vector<double> perimeter_at;
    double perimeter = 0.0;

    while (true) {
        const int from = dir_index(cx, cy, bx, by);
        const std::size_t state = (static_cast<std::size_t>(cy) * w + cx) * 8u +
                                  static_cast<std::size_t>(from);
        if (first_seen[state] >= 0)
            return perimeter - perimeter_at[static_cast<std::size_t>(first_seen[state])];
        first_seen[state] = static_cast<std::int32_t>(perimeter_at.size());
        perimeter_at.push_back(perimeter);

        int found = -1;
        int prevx = bx, prevy = by;
        for (int k = 1; k <= 8; ++k) {
            int d = (from + k) % 8;
            int nx = cx + dx[d], ny = cy + dy[d];
            if (fg(nx, ny)) {
                found = d;
                break;
            }
            prevx = nx;
            prevy = ny;
        }
        if (found < 0) return 0.0;  // isolated pixel; callers reject earlier
        int nx = cx + dx[found], ny = cy + dy[found];
        perimeter += (nx != cx && ny != cy) ? std::sqrt(2.0) : 1.0;
        bx = prevx;
        by = prevy;
        cx = nx;
        cy = ny;
    }
}

struct Pt {
    long long x, y;
};

long long cross(const Pt& o, const Pt& a, const Pt& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Monotone-chain convex hull, counterclockwise, no collinear points kept.
std::vector<Pt> convex_hull(std::vector<Pt> pts) {
    std::sort(pts.begin(), pts.end(), [](const Pt& a, const Pt& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Pt& a, const Pt& b) { return a.x == b.x && a.y == b.y; }),
              pts.end());
    const int n = static_cast<int>(pts.size());
    if (n < 3) return {};
    std::vector<Pt> hull(2 * n);
    int k = 0;
    for (int i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    for (int i = n - 2, lower = k + 1; i >= 0; --i) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull.size() >= 3 ? hull : std::vector<Pt>{};
}

long long gcdll(long long a, long long b) { return std::gcd(a, b); }

// Lattice points covered by the closed hull polygon: shoelace area plus half
// the boundary points plus one.
double hull_lattice_count(const std::vector<Pt>& hull) {
    long long twice_area = 0, boundary = 0;
    const int n = static_cast<int>(hull.size());
    for (int i = 0; i < n; ++i) {
        const Pt& a = hull[i];
        const Pt& b = hull[(i + 1) % n];
        twice_area += a.x * b.y - b.x * a.y;
        boundary += gcdll(std::llabs(b.x - a.x), std::llabs(b.y - a.y));
    }
    twice_area = std::llabs(twice_area);
    return twice_area / 2.0 + boundary / 2.0 + 1.0;
}

}  // namespace

GeometricFeatures geometric_features(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<Pt> pts;
    double sx = 0.0, sy = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (mask.at(x, y)) {
                pts.push_back({x, y});
                sx += x;
                sy += y;
            }
    const double n = static_cast<double>(pts.size());
    if (pts.size() < 3) throw ValidationError("degenerate geometry");

    const double mx = sx / n, my = sy / n;
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (const Pt& p : pts) {
        const double ux = p.x - mx, uy = p.y - my;
        sxx += ux * ux;
        syy += uy * uy;
        sxy += ux * uy;
    }
    const double mu20 = sxx / n, mu02 = syy / n, mu11 = sxy / n;
    const double mean = (mu20 + mu02) / 2.0;
    const double dev = std::sqrt((mu20 - mu02) * (mu20 - mu02) / 4.0 + mu11 * mu11);
    const double l1 = mean + dev, l2 = mean - dev;
    if (l2 < 1e-12) throw ValidationError("degenerate geometry");

    std::vector<Pt> hull = convex_hull(pts);
    if (hull.empty()) throw ValidationError("degenerate geometry");

    GeometricFeatures g;
    g.area = n;
    g.perimeter = moore_perimeter(mask);
    g.major_axis = 4.0 * std::sqrt(l1);
    g.minor_axis = 4.0 * std::sqrt(l2);
    g.eccentricity = std::sqrt(1.0 - l2 / l1);
    g.convex_area = hull_lattice_count(hull);
    g.solidity = g.area / g.convex_area;
    g.aspect_ratio = g.major_axis / g.minor_axis;
    return g;
}

// ---------------------------------------------------------------------------
// Color statistics
// ---------------------------------------------------------------------------

ColorStats color_stats(const ImageRaster& img, const BinaryMask& mask) {
    if (img.width != mask.width || img.height != mask.height)
        throw ValidationError("color_stats: image and mask dimensions differ");
    if (mask.foreground_count() == 0) throw ValidationError("color_stats: empty mask");

    ColorStats out;
    for (int c = 0; c < 3; ++c) {
        double sum = 0.0;
        int n = 0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                if (mask.at(x, y)) {
                    sum += img.at(x, y, c);
                    ++n;
                }
        const double mean = sum / n;
        double m2 = 0.0, m3 = 0.0, m4 = 0.0;
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                if (mask.at(x, y)) {
                    const double d = img.at(x, y, c) - mean;
                    m2 += d * d;
                    m3 += d * d * d;
                    m4 += d * d * d * d;
                }
        m2 /= n;
        m3 /= n;
        m4 /= n;
        const double s = std::sqrt(m2);
        out.mean[c] = mean;
        out.stddev[c] = s;
        if (s > 1e-12) {
            out.skewness[c] = m3 / (s * s * s);
            out.kurtosis[c] = m4 / (m2 * m2) - 3.0;
        } else {
            out.skewness[c] = 0.0;
            out.kurtosis[c] = 0.0;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Texture
// ---------------------------------------------------------------------------

double entropy(const ImageRaster& img, const BinaryMask& mask) {
    if (!img.normalized) throw ValidationError("entropy: image must be normalized");
    if (img.width != mask.width || img.height != mask.height)
        throw ValidationError("entropy: image and mask dimensions differ");
    std::array<double, 256> hist{};
    double total = 0.0;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (mask.at(x, y)) {
                int bin = static_cast<int>(std::floor(img.luminance(x, y) * 255.0));
                bin = std::clamp(bin, 0, 255);
                hist[bin] += 1.0;
                total += 1.0;
            }
    if (total == 0.0) throw ValidationError("entropy: empty mask");
    double bits = 0.0;
    for (double cnt : hist)
        if (cnt > 0.0) {
            const double p = cnt / total;
            bits -= p * std::log2(p);
        }
    return bits;
}

namespace {

struct Daub4Filters {
    double h[4];
    double g[4];
    Daub4Filters() {
        const double s3 = std::sqrt(3.0);
        const double norm = 4.0 * std::sqrt(2.0);
        h[0] = (1.0 + s3) / norm;
        h[1] = (3.0 + s3) / norm;
        h[2] = (3.0 - s3) / norm;
        h[3] = (1.0 - s3) / norm;
        g[0] = h[3];
        g[1] = -h[2];
        g[2] = h[1];
        g[3] = -h[0];
    }
};

// One 1D analysis pass with periodic extension over a strided signal of
// length n: approx into out[0..n/2), detail into out[n/2..n). The detail is
// computed against the leading sample so a constant signal yields exact
// zeros (the highpass taps sum to zero in exact arithmetic).
void daub4_pass(const double* in, std::size_t stride, int n, double* out,
                std::size_t out_stride) {
    static const Daub4Filters f;
    const int half = n / 2;
    for (int k = 0; k < half; ++k) {
        const double x0 = in[static_cast<std::size_t>(2 * k) * stride];
        double a = f.h[0] * x0;
        double d = 0.0;
        for (int j = 1; j < 4; ++j) {
            const double xj = in[static_cast<std::size_t>((2 * k + j) % n) * stride];
            a += f.h[j] * xj;
            d += f.g[j] * (xj - x0);
        }
        out[static_cast<std::size_t>(k) * out_stride] = a;
        out[static_cast<std::size_t>(half + k) * out_stride] = d;
    }
}

double mean_square(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return v.empty() ? 0.0 : s / v.size();
}

}  // namespace

Daub4Level daub4_level(const std::vector<double>& block, int n) {
    if (n < 4 || n % 2 != 0) throw ValidationError("daub4_level: size must be even and >= 4");
    if (block.size() != static_cast<std::size_t>(n) * n)
        throw ValidationError("daub4_level: block size mismatch");

    std::vector<double> rows(block.size()), full(block.size());
    for (int y = 0; y < n; ++y)
        daub4_pass(&block[static_cast<std::size_t>(y) * n], 1, n,
                   &rows[static_cast<std::size_t>(y) * n], 1);
    for (int x = 0; x < n; ++x)
        daub4_pass(&rows[x], n, n, &full[x], n);

    Daub4Level out;
    const int half = n / 2;
    out.half = half;
    out.ll.resize(static_cast<std::size_t>(half) * half);
    out.lh.resize(out.ll.size());
    out.hl.resize(out.ll.size());
    out.hh.resize(out.ll.size());
    for (int y = 0; y < half; ++y)
        for (int x = 0; x < half; ++x) {
            const std::size_t q = static_cast<std::size_t>(y) * half + x;
            out.ll[q] = full[static_cast<std::size_t>(y) * n + x];
            out.hl[q] = full[static_cast<std::size_t>(y) * n + x + half];
            out.lh[q] = full[static_cast<std::size_t>(y + half) * n + x];
            out.hh[q] = full[static_cast<std::size_t>(y + half) * n + x + half];
        }
    return out;
}

std::array<double, 7> daub4_energies(const ImageRaster& img, const BinaryMask& mask) {
    if (!img.normalized) throw ValidationError("daub4_energies: image must be normalized");
    if (img.width != mask.width || img.height != mask.height)
        throw ValidationError("daub4_energies: image and mask dimensions differ");

    int x0 = img.width, x1 = -1, y0 = img.height, y1 = -1;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            if (mask.at(x, y)) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
                y0 = std::min(y0, y);
                y1 = std::max(y1, y);
            }
    if (x1 < 0) throw ValidationError("daub4_energies: empty mask");
    const int bw = x1 - x0 + 1, bh = y1 - y0 + 1;
    if (bw < 4 || bh < 4)
        throw ValidationError("daub4_energies: bounding box smaller than 4x4");

    // Luminance crop, resampled to the fixed 32x32 analysis grid.
    ImageRaster crop;
    crop.width = bw;
    crop.height = bh;
    crop.normalized = true;
    crop.data.resize(static_cast<std::size_t>(bw) * bh * 3);
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) {
            const double l = img.luminance(x0 + x, y0 + y);
            for (int c = 0; c < 3; ++c) crop.at(x, y, c) = l;
        }
    ImageRaster grid = resize(crop, 32, 32);
    std::vector<double> block(32 * 32);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) block[static_cast<std::size_t>(y) * 32 + x] = grid.at(x, y, 0);

    Daub4Level l1 = daub4_level(block, 32);
    Daub4Level l2 = daub4_level(l1.ll, 16);
    return {mean_square(l2.ll), mean_square(l1.lh), mean_square(l1.hl), mean_square(l1.hh),
            mean_square(l2.lh), mean_square(l2.hl), mean_square(l2.hh)};
}

TextureFeatures texture_features(const ImageRaster& img, const BinaryMask& mask) {
    TextureFeatures t;
    t.entropy = entropy(img, mask);
    t.wavelet_energies = daub4_energies(img, mask);
    return t;
}

// ---------------------------------------------------------------------------
// Spectral chemistry estimation
// ---------------------------------------------------------------------------

namespace {

constexpr int kChemDim = kSpectralChannels + 1;  // bias column first

// Gauss-Jordan with partial pivoting; solves A * X = B in place for several
// right-hand sides.
void solve_linear(std::vector<double>& a, std::vector<double>& b, int n, int rhs) {
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[r * n + col]) > std::abs(a[pivot * n + col])) pivot = r;
        if (std::abs(a[pivot * n + col]) < 1e-12)
            throw ValidationError("fit_chemistry: singular normal equations");
        if (pivot != col) {
            for (int c = 0; c < n; ++c) std::swap(a[col * n + c], a[pivot * n + c]);
            for (int c = 0; c < rhs; ++c) std::swap(b[col * rhs + c], b[pivot * rhs + c]);
        }
        const double inv = 1.0 / a[col * n + col];
        for (int c = 0; c < n; ++c) a[col * n + c] *= inv;
        for (int c = 0; c < rhs; ++c) b[col * rhs + c] *= inv;
        for (int r = 0; r < n; ++r) {
            if (r == col) continue;
            const double factor = a[r * n + col];
            if (factor == 0.0) continue;
            for (int c = 0; c < n; ++c) a[r * n + c] -= factor * a[col * n + c];
            for (int c = 0; c < rhs; ++c) b[r * rhs + c] -= factor * b[col * rhs + c];
        }
    }
}

}  // namespace

ChemistryModel fit_chemistry(const std::vector<SpectralReading>& calibrated,
                             const std::vector<IntrinsicAttributes>& attrs, double ridge) {
    if (calibrated.size() != attrs.size())
        throw ValidationError("fit_chemistry: sample count mismatch");
    if (calibrated.size() < 20) throw ValidationError("fit_chemistry: need at least 20 samples");
    if (ridge < 0.0) throw ValidationError("fit_chemistry: negative ridge");
    const std::size_t count = calibrated.size();

    // Solve in a per-channel standardized space so the penalty is scale-free,
    // then map the coefficients back to raw channel units.
    std::array<double, kSpectralChannels> mu{}, sd{};
    for (const SpectralReading& r : calibrated) {
        if (r.kind != SpectralKind::CALIBRATED) throw ValidationError("uncalibrated input");
        for (int i = 0; i < kSpectralChannels; ++i) mu[i] += r.channels[i];
    }
    for (int i = 0; i < kSpectralChannels; ++i) mu[i] /= count;
    for (const SpectralReading& r : calibrated)
        for (int i = 0; i < kSpectralChannels; ++i) {
            const double d = r.channels[i] - mu[i];
            sd[i] += d * d;
        }
    for (int i = 0; i < kSpectralChannels; ++i) {
        sd[i] = std::sqrt(sd[i] / count);
        if (sd[i] < 1e-12) sd[i] = 1.0;
    }

    std::vector<double> xtx(kChemDim * kChemDim, 0.0);
    std::vector<double> xty(kChemDim * 3, 0.0);
    std::array<double, kChemDim> row;
    for (std::size_t s = 0; s < count; ++s) {
        row[0] = 1.0;
        for (int i = 0; i < kSpectralChannels; ++i)
            row[i + 1] = (calibrated[s].channels[i] - mu[i]) / sd[i];
        const double targets[3] = {attrs[s].moisture, attrs[s].tss, attrs[s].sugar};
        for (int i = 0; i < kChemDim; ++i) {
            for (int j = 0; j < kChemDim; ++j) xtx[i * kChemDim + j] += row[i] * row[j];
            for (int t = 0; t < 3; ++t) xty[i * 3 + t] += row[i] * targets[t];
        }
    }
    // Penalty grows with the sample count so its relative strength is stable;
    // the bias stays unpenalized.
    for (int i = 1; i < kChemDim; ++i) xtx[i * kChemDim + i] += ridge * count;

    solve_linear(xtx, xty, kChemDim, 3);

    ChemistryModel m;
    for (int t = 0; t < 3; ++t) {
        double b = xty[0 * 3 + t];
        for (int i = 0; i < kSpectralChannels; ++i) {
            const double wz = xty[(i + 1) * 3 + t];
            m.weights[t][i] = wz / sd[i];
            b -= wz * mu[i] / sd[i];
        }
        m.bias[t] = b;
    }
    return m;
}

ChemistryEstimate estimate_chemistry(const SpectralReading& spectral,
                                     const ChemistryModel& model) {
    if (spectral.kind != SpectralKind::CALIBRATED) throw ValidationError("uncalibrated input");
    double y[3];
    for (int t = 0; t < 3; ++t) {
        double v = model.bias[t];
        for (int i = 0; i < kSpectralChannels; ++i) v += model.weights[t][i] * spectral.channels[i];
        y[t] = std::clamp(v, 0.0, 100.0);
    }
    return {y[0], y[1], y[2]};
}

// ---------------------------------------------------------------------------
// Fusion
// ---------------------------------------------------------------------------

const std::array<const char*, kFeatureCount>& feature_slot_names() {
    static const std::array<const char*, kFeatureCount> names = {
        "geom_area", "geom_perimeter", "geom_major_axis", "geom_minor_axis",
        "geom_eccentricity", "geom_solidity", "geom_convex_area", "geom_aspect_ratio",
        "color_r_mean", "color_r_std", "color_r_skew", "color_r_kurt",
        "color_g_mean", "color_g_std", "color_g_skew", "color_g_kurt",
        "color_b_mean", "color_b_std", "color_b_skew", "color_b_kurt",
        "entropy",
        "wav_ll2", "wav_lh1", "wav_hl1", "wav_hh1", "wav_lh2", "wav_hl2", "wav_hh2",
        "spec_00", "spec_01", "spec_02", "spec_03", "spec_04", "spec_05", "spec_06",
        "spec_07", "spec_08", "spec_09", "spec_10", "spec_11", "spec_12", "spec_13",
        "spec_14", "spec_15", "spec_16", "spec_17"};
    return names;
}

void FeatureScaler::fit(const std::vector<FeatureVector>& training) {
    if (training.empty()) throw ValidationError("FeatureScaler: empty training set");
    mean_.fill(0.0);
    stddev_.fill(0.0);
    for (const FeatureVector& v : training)
        for (int i = 0; i < kFeatureCount; ++i) mean_[i] += v.values[i];
    for (int i = 0; i < kFeatureCount; ++i) mean_[i] /= training.size();
    for (const FeatureVector& v : training)
        for (int i = 0; i < kFeatureCount; ++i) {
            const double d = v.values[i] - mean_[i];
            stddev_[i] += d * d;
        }
    for (int i = 0; i < kFeatureCount; ++i) stddev_[i] = std::sqrt(stddev_[i] / training.size());
    fitted_ = true;
}

FeatureVector FeatureScaler::transform(const FeatureVector& v) const {
    if (!fitted_) throw ValidationError("FeatureScaler: transform before fit");
    FeatureVector out = v;
    for (int i = 0; i < kFeatureCount; ++i) {
        const double s = stddev_[i] > 1e-12 ? stddev_[i] : 1.0;
        out.values[i] = (v.values[i] - mean_[i]) / s;
    }
    return out;
}

void FeatureScaler::restore(const std::array<double, kFeatureCount>& mean,
                            const std::array<double, kFeatureCount>& stddev) {
    mean_ = mean;
    stddev_ = stddev;
    fitted_ = true;
}

FeatureVector fuse(const std::optional<GeometricFeatures>& geom,
                   const std::optional<ColorStats>& color,
                   const std::optional<TextureFeatures>& texture,
                   const std::optional<SpectralReading>& spectral,
                   const FeatureScaler* scaler) {
    if (!geom || !color || !texture || !spectral)
        throw ValidationError("incomplete fusion input");
    if (spectral->kind != SpectralKind::CALIBRATED)
        throw ValidationError("fuse: spectral reading must be calibrated");

    FeatureVector v;
    int k = 0;
    v.values[k++] = geom->area;
    v.values[k++] = geom->perimeter;
    v.values[k++] = geom->major_axis;
    v.values[k++] = geom->minor_axis;
    v.values[k++] = geom->eccentricity;
    v.values[k++] = geom->solidity;
    v.values[k++] = geom->convex_area;
    v.values[k++] = geom->aspect_ratio;
    for (int c = 0; c < 3; ++c) {
        v.values[k++] = color->mean[c];
        v.values[k++] = color->stddev[c];
        v.values[k++] = color->skewness[c];
        v.values[k++] = color->kurtosis[c];
    }
    v.values[k++] = texture->entropy;
    for (double e : texture->wavelet_energies) v.values[k++] = e;
    for (double ch : spectral->channels) v.values[k++] = ch;

    return scaler ? scaler->transform(v) : v;
}

FeatureVector extract_features(const FruitSample& sample, const CalibrationReference& ref,
                               double segmentation_threshold, const FeatureScaler* scaler) {
    const ImageRaster normalized = normalize(sample.image);
    const BinaryMask mask = segment(normalized, segmentation_threshold);
    return fuse(geometric_features(mask), color_stats(normalized, mask),
                texture_features(normalized, mask), calibrate_spectral(sample.spectral, ref),
                scaler);
}

}  // namespace datesort
