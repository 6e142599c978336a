#include "datesort/neuralmodel.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "datesort/rng.hpp"
#include "json.hpp"

namespace datesort {

namespace {

struct Shape {
    int c = 0;
    int h = 0;
    int w = 0;
    size_t plane() const { return static_cast<size_t>(c) * h * w; }
};

// shapes[0] is the network input; shapes[i+1] is the output of conv block i
// (after its pool).  Pooling floors odd dimensions.
std::vector<Shape> stage_shapes(const ModelConfig& cfg) {
    std::vector<Shape> shapes;
    Shape cur{3, cfg.input_h, cfg.input_w};
    shapes.push_back(cur);
    for (const ConvBlockSpec& block : cfg.conv_blocks) {
        cur.c = block.filters;
        cur.h /= 2;
        cur.w /= 2;
        shapes.push_back(cur);
    }
    return shapes;
}

double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// ---------------------------------------------------------------------------
// Per-sample forward cache
// ---------------------------------------------------------------------------

struct Activations {
    std::vector<double> input;                    // planar [c][y][x]
    std::vector<std::vector<double>> conv_relu;   // post-ReLU, planar, conv dims
    std::vector<std::vector<double>> pool_out;    // post-pool, planar
    std::vector<std::vector<int>> pool_arg;       // flat source index of each max
    std::vector<double> trunk;                    // flattened pool ++ masked features
    std::vector<std::vector<double>> dense_out;   // post-ReLU per dense layer
    std::array<double, kNumVarieties> variety_logits{};
    std::array<double, kNumVarieties> variety_probs{};
    double spoilage_logit = 0.0;
    double spoilage_prob = 0.0;
    double shelf_out = 0.0;
};

void planar_from_image(const ImageRaster& img, std::vector<double>& out) {
    const int h = img.height, w = img.width;
    out.resize(static_cast<size_t>(3) * h * w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) out[(static_cast<size_t>(c) * h + y) * w + x] = img.at(x, y, c);
}

void conv_forward(const ConvLayer& L, const std::vector<double>& in, int h, int w, std::vector<double>& out) {
    const int k = L.kernel, p = (k - 1) / 2;
    out.assign(static_cast<size_t>(L.out_channels) * h * w, 0.0);
    for (int f = 0; f < L.out_channels; ++f) {
        double* op = &out[static_cast<size_t>(f) * h * w];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                double acc = L.bias[f];
                for (int c = 0; c < L.in_channels; ++c) {
                    const double* wf = &L.weights[(static_cast<size_t>(f) * L.in_channels + c) * k * k];
                    const double* ip = &in[static_cast<size_t>(c) * h * w];
                    for (int dy = 0; dy < k; ++dy) {
                        const int yy = y + dy - p;
                        if (yy < 0 || yy >= h) continue;
                        for (int dx = 0; dx < k; ++dx) {
                            const int xx = x + dx - p;
                            if (xx < 0 || xx >= w) continue;
                            acc += wf[dy * k + dx] * ip[yy * w + xx];
                        }
                    }
                }
                op[y * w + x] = acc;
            }
        }
    }
}

void pool_forward(const std::vector<double>& in, int c, int h, int w, std::vector<double>& out,
                  std::vector<int>& arg) {
    const int h2 = h / 2, w2 = w / 2;
    out.resize(static_cast<size_t>(c) * h2 * w2);
    arg.resize(out.size());
    for (int ch = 0; ch < c; ++ch) {
        const double* ip = &in[static_cast<size_t>(ch) * h * w];
        for (int y = 0; y < h2; ++y) {
            for (int x = 0; x < w2; ++x) {
                int best = (2 * y) * w + 2 * x;
                double bv = ip[best];
                const int candidates[3] = {(2 * y) * w + 2 * x + 1, (2 * y + 1) * w + 2 * x,
                                           (2 * y + 1) * w + 2 * x + 1};
                for (int idx : candidates) {
                    if (ip[idx] > bv) {
                        bv = ip[idx];
                        best = idx;
                    }
                }
                const size_t o = (static_cast<size_t>(ch) * h2 + y) * w2 + x;
                out[o] = bv;
                arg[o] = static_cast<int>(static_cast<size_t>(ch) * h * w) + best;
            }
        }
    }
}

void dense_forward(const DenseLayer& L, const double* in, double* out) {
    for (int o = 0; o < L.out_width; ++o) {
        const double* row = &L.weights[static_cast<size_t>(o) * L.in_width];
        double acc = L.bias[o];
        for (int i = 0; i < L.in_width; ++i) acc += row[i] * in[i];
        out[o] = acc;
    }
}

// dout is the gradient at this layer's (pre-activation) outputs; din_accum,
// when present, receives the gradient at the inputs (added, not assigned).
void dense_backward(const DenseLayer& L, const double* in, const double* dout, std::vector<double>& gw,
                    std::vector<double>& gb, double* din_accum) {
    for (int o = 0; o < L.out_width; ++o) {
        const double d = dout[o];
        if (d == 0.0) continue;
        gb[o] += d;
        const double* row = &L.weights[static_cast<size_t>(o) * L.in_width];
        double* gr = &gw[static_cast<size_t>(o) * L.in_width];
        for (int i = 0; i < L.in_width; ++i) {
            gr[i] += d * in[i];
            if (din_accum) din_accum[i] += d * row[i];
        }
    }
}

void conv_backward(const ConvLayer& L, const std::vector<double>& in, int h, int w,
                   const std::vector<double>& dout, std::vector<double>& gw, std::vector<double>& gb,
                   std::vector<double>* din) {
    const int k = L.kernel, p = (k - 1) / 2;
    if (din) din->assign(static_cast<size_t>(L.in_channels) * h * w, 0.0);
    for (int f = 0; f < L.out_channels; ++f) {
        const double* dp = &dout[static_cast<size_t>(f) * h * w];
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const double d = dp[y * w + x];
                if (d == 0.0) continue;  // unpooled/ReLU-masked grads are mostly zero
                gb[f] += d;
                for (int c = 0; c < L.in_channels; ++c) {
                    const double* ip = &in[static_cast<size_t>(c) * h * w];
                    double* gr = &gw[(static_cast<size_t>(f) * L.in_channels + c) * k * k];
                    double* dip = din ? &(*din)[static_cast<size_t>(c) * h * w] : nullptr;
                    const double* wf = &L.weights[(static_cast<size_t>(f) * L.in_channels + c) * k * k];
                    for (int dy = 0; dy < k; ++dy) {
                        const int yy = y + dy - p;
                        if (yy < 0 || yy >= h) continue;
                        for (int dx = 0; dx < k; ++dx) {
                            const int xx = x + dx - p;
                            if (xx < 0 || xx >= w) continue;
                            gr[dy * k + dx] += d * ip[yy * w + xx];
                            if (dip) dip[yy * w + xx] += d * wf[dy * k + dx];
                        }
                    }
                }
            }
        }
    }
}

// A model whose layer vectors disagree with its config (e.g. never built by
// init or load_model) must fail loudly, not index out of bounds.
void check_model_built(const NetworkModel& m) {
    if (m.conv.size() != m.config.conv_blocks.size() ||
        m.dense.size() != m.config.dense_widths.size())
        throw ValidationError("model layers do not match its config");
    for (size_t i = 0; i < m.conv.size(); ++i) {
        const auto& spec = m.config.conv_blocks[i];
        const ConvLayer& L = m.conv[i];
        const int in_ch = i == 0 ? 3 : m.config.conv_blocks[i - 1].filters;
        if (L.in_channels != in_ch || L.out_channels != spec.filters || L.kernel != spec.kernel ||
            L.weights.size() != static_cast<size_t>(spec.filters) * in_ch * spec.kernel *
                                    spec.kernel ||
            L.bias.size() != static_cast<size_t>(spec.filters))
            throw ValidationError("model layers do not match its config");
    }
    int in_w = m.flat_width() + kFeatureCount;
    for (size_t j = 0; j < m.dense.size(); ++j) {
        const DenseLayer& L = m.dense[j];
        if (L.in_width != in_w || L.out_width != m.config.dense_widths[j] ||
            L.weights.size() != static_cast<size_t>(L.in_width) * L.out_width ||
            L.bias.size() != static_cast<size_t>(L.out_width))
            throw ValidationError("model layers do not match its config");
        in_w = L.out_width;
    }
    if (m.head_variety.in_width != in_w || m.head_variety.out_width != kNumVarieties ||
        m.head_spoilage.in_width != in_w || m.head_spoilage.out_width != 1 ||
        m.head_shelf.in_width != in_w || m.head_shelf.out_width != 1)
        throw ValidationError("model layers do not match its config");
}

void check_sample_inputs(const NetworkModel& m, const ImageRaster& img, const FeatureVector& fv) {
    check_model_built(m);
    if (img.width != m.config.input_w || img.height != m.config.input_h)
        throw ValidationError("forward: image shape mismatch");
    if (!img.normalized) throw ValidationError("forward: image must be normalized");
    if (fv.layout != kFeatureLayoutTag)
        throw ValidationError("forward: unknown feature layout '" + fv.layout + "'");
}

// Standardize (when the scaler is fitted) and zero masked slots.
void prepare_features(const NetworkModel& m, const FeatureVector& fv, double* out) {
    FeatureVector scaled = m.scaler.fitted() ? m.scaler.transform(fv) : fv;
    for (int i = 0; i < kFeatureCount; ++i)
        out[i] = m.config.feature_mask[static_cast<size_t>(i)] ? scaled.values[static_cast<size_t>(i)] : 0.0;
}

void run_forward(const NetworkModel& m, const ImageRaster& img, const FeatureVector& fv, Activations& a) {
    check_sample_inputs(m, img, fv);
    const std::vector<Shape> shapes = stage_shapes(m.config);
    const size_t n_conv = m.conv.size();
    a.conv_relu.resize(n_conv);
    a.pool_out.resize(n_conv);
    a.pool_arg.resize(n_conv);
    planar_from_image(img, a.input);

    const std::vector<double>* cur = &a.input;
    for (size_t i = 0; i < n_conv; ++i) {
        const Shape& in_shape = shapes[i];
        conv_forward(m.conv[i], *cur, in_shape.h, in_shape.w, a.conv_relu[i]);
        for (double& v : a.conv_relu[i]) v = v > 0.0 ? v : 0.0;
        pool_forward(a.conv_relu[i], m.conv[i].out_channels, in_shape.h, in_shape.w, a.pool_out[i],
                     a.pool_arg[i]);
        cur = &a.pool_out[i];
    }

    const size_t flat = shapes.back().plane();
    a.trunk.resize(flat + kFeatureCount);
    std::copy(cur->begin(), cur->end(), a.trunk.begin());
    prepare_features(m, fv, a.trunk.data() + flat);

    a.dense_out.resize(m.dense.size());
    const double* din = a.trunk.data();
    for (size_t j = 0; j < m.dense.size(); ++j) {
        a.dense_out[j].resize(static_cast<size_t>(m.dense[j].out_width));
        dense_forward(m.dense[j], din, a.dense_out[j].data());
        for (double& v : a.dense_out[j]) v = v > 0.0 ? v : 0.0;
        din = a.dense_out[j].data();
    }

    dense_forward(m.head_variety, din, a.variety_logits.data());
    double slogit = 0.0, shelf = 0.0;
    dense_forward(m.head_spoilage, din, &slogit);
    dense_forward(m.head_shelf, din, &shelf);
    a.spoilage_logit = slogit;
    a.spoilage_prob = sigmoid(slogit);
    a.shelf_out = shelf;

    double mx = a.variety_logits[0];
    for (double z : a.variety_logits) mx = std::max(mx, z);
    double sum = 0.0;
    for (int j = 0; j < kNumVarieties; ++j) {
        a.variety_probs[static_cast<size_t>(j)] = std::exp(a.variety_logits[static_cast<size_t>(j)] - mx);
        sum += a.variety_probs[static_cast<size_t>(j)];
    }
    for (double& v : a.variety_probs) v /= sum;
}

struct SampleLoss {
    double variety = 0.0;
    double spoilage = 0.0;  // unweighted
    double shelf = 0.0;     // unweighted
};

SampleLoss sample_loss(const Activations& a, const TrainSample& s) {
    SampleLoss loss;
    double mx = a.variety_logits[0];
    for (double z : a.variety_logits) mx = std::max(mx, z);
    double sum = 0.0;
    for (double z : a.variety_logits) sum += std::exp(z - mx);
    loss.variety = mx + std::log(sum) - a.variety_logits[static_cast<size_t>(s.variety)];
    loss.spoilage = softplus(a.spoilage_logit) - static_cast<double>(s.spoiled) * a.spoilage_logit;
    const double err = a.shelf_out - s.shelf_days / 365.0;
    loss.shelf = err * err;
    return loss;
}

void check_train_sample(const NetworkModel& m, const TrainSample& s) {
    check_sample_inputs(m, s.image, s.features);
    if (s.variety < 0 || s.variety >= kNumVarieties) throw ValidationError("train: variety label out of range");
    if (s.spoiled != 0 && s.spoiled != 1) throw ValidationError("train: spoilage label must be 0 or 1");
    if (!(s.shelf_days >= 0.0 && s.shelf_days <= 365.0))
        throw ValidationError("train: shelf-life label outside [0, 365]");
}

// ---------------------------------------------------------------------------
// Augmentation (image-only, applied to copies)
// ---------------------------------------------------------------------------

void hflip(ImageRaster& img) {
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width / 2; ++x)
            for (int c = 0; c < 3; ++c) std::swap(img.at(x, y, c), img.at(img.width - 1 - x, y, c));
}

ImageRaster rot90(const ImageRaster& img, int quarter_turns) {
    ImageRaster out = img;
    const int n = img.width;  // square
    for (int y = 0; y < n; ++y) {
        for (int x = 0; x < n; ++x) {
            int sx = x, sy = y;
            switch (quarter_turns & 3) {
                case 1: sx = y; sy = n - 1 - x; break;            // 90 degrees
                case 2: sx = n - 1 - x; sy = n - 1 - y; break;    // 180 degrees
                case 3: sx = n - 1 - y; sy = x; break;            // 270 degrees
                default: break;
            }
            for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(sx, sy, c);
        }
    }
    return out;
}

void scale_brightness(ImageRaster& img, double factor) {
    for (double& v : img.data) v = std::clamp(v * factor, 0.0, 1.0);
}

void augment_in_place(const ModelConfig& cfg, TrainSample& sample, Rng& rng) {
    ImageRaster& img = sample.image;
    if (cfg.augment_flip && rng.bernoulli(0.5)) hflip(img);
    if (cfg.augment_rotate) {
        const int q = static_cast<int>(rng.uniform_int(4));
        if (q != 0) img = rot90(img, q);
    }
    if (cfg.augment_brightness) {
        const double f = rng.uniform(1.0 - cfg.augment_brightness_range,
                                     1.0 + cfg.augment_brightness_range);
        scale_brightness(img, f);
        // Keep the handcrafted features consistent with the scaled image:
        // color means and deviations are linear in brightness, wavelet
        // subband energies quadratic; the remaining slots are (close to)
        // brightness-invariant.
        for (int c = 0; c < 3; ++c) {
            sample.features.values[static_cast<std::size_t>(8 + 4 * c)] *= f;      // mean
            sample.features.values[static_cast<std::size_t>(9 + 4 * c)] *= f;      // stddev
        }
        for (int i = 21; i <= 27; ++i) sample.features.values[static_cast<std::size_t>(i)] *= f * f;
    }
}

void zero_like_params(const NetworkModel& m, Gradients& g) {
    const auto blocks = parameter_blocks(m);
    g.resize(blocks.size());
    for (size_t i = 0; i < blocks.size(); ++i) g[i].assign(blocks[i]->size(), 0.0);
}

// ---------------------------------------------------------------------------
// Serialization helpers
// ---------------------------------------------------------------------------

nlohmann::ordered_json dense_json(const DenseLayer& L) {
    return {{"in", L.in_width}, {"out", L.out_width}, {"w", L.weights}, {"b", L.bias}};
}

void dense_from_json(const nlohmann::json& j, DenseLayer& L, int expect_in, int expect_out) {
    L.in_width = j.at("in").get<int>();
    L.out_width = j.at("out").get<int>();
    L.weights = j.at("w").get<std::vector<double>>();
    L.bias = j.at("b").get<std::vector<double>>();
    if (L.in_width != expect_in || L.out_width != expect_out ||
        L.weights.size() != static_cast<size_t>(expect_in) * expect_out ||
        L.bias.size() != static_cast<size_t>(expect_out))
        throw ValidationError("model file layer shape mismatch");
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and construction
// ---------------------------------------------------------------------------

void validate_config(const ModelConfig& config) {
    if (config.input_h < 4 || config.input_w < 4)
        throw ValidationError("config: input spatial dimensions must be at least 4");
    if (config.conv_blocks.empty() || config.conv_blocks.size() > 4)
        throw ValidationError("config: between 1 and 4 conv blocks required");
    for (const ConvBlockSpec& b : config.conv_blocks) {
        if (b.filters < 1) throw ValidationError("config: conv filters must be at least 1");
        if (b.kernel != 3 && b.kernel != 5) throw ValidationError("config: kernel must be 3 or 5");
    }
    if (config.dense_widths.empty()) throw ValidationError("config: at least one dense layer required");
    for (int w : config.dense_widths) {
        if (w < 1) throw ValidationError("config: dense widths must be at least 1");
    }
    if (!(config.learning_rate >= 0.0) || !std::isfinite(config.learning_rate))
        throw ValidationError("config: learning rate must be non-negative");
    if (!(config.momentum >= 0.0 && config.momentum < 1.0))
        throw ValidationError("config: momentum must lie in [0, 1)");
    if (config.batch_size < 1) throw ValidationError("config: batch size must be at least 1");
    if (config.epochs < 1) throw ValidationError("config: epochs must be at least 1");
    if (config.spoilage_loss_weight < 0.0 || config.shelf_loss_weight < 0.0)
        throw ValidationError("config: loss weights must be non-negative");
    if (!(config.augment_brightness_range >= 0.0 && config.augment_brightness_range < 1.0))
        throw ValidationError("config: brightness range must lie in [0, 1)");
    const std::vector<Shape> shapes = stage_shapes(config);
    for (size_t i = 1; i < shapes.size(); ++i) {
        if (shapes[i].h < 1 || shapes[i].w < 1)
            throw ValidationError("config shrinks feature map to zero");
    }
}

int NetworkModel::output_h() const { return stage_shapes(config).back().h; }
int NetworkModel::output_w() const { return stage_shapes(config).back().w; }
int NetworkModel::flat_width() const { return static_cast<int>(stage_shapes(config).back().plane()); }

namespace {

// Allocates all layers with zeroed parameters; init() and load_model() fill
// them in.
NetworkModel build_shell(const ModelConfig& config) {
    validate_config(config);
    NetworkModel m;
    m.config = config;
    const std::vector<Shape> shapes = stage_shapes(config);
    for (size_t i = 0; i < config.conv_blocks.size(); ++i) {
        ConvLayer L;
        L.in_channels = shapes[i].c;
        L.out_channels = config.conv_blocks[i].filters;
        L.kernel = config.conv_blocks[i].kernel;
        L.weights.assign(static_cast<size_t>(L.out_channels) * L.in_channels * L.kernel * L.kernel, 0.0);
        L.bias.assign(static_cast<size_t>(L.out_channels), 0.0);
        m.conv.push_back(std::move(L));
    }
    int prev = static_cast<int>(shapes.back().plane()) + kFeatureCount;
    for (int width : config.dense_widths) {
        DenseLayer L;
        L.in_width = prev;
        L.out_width = width;
        L.weights.assign(static_cast<size_t>(width) * prev, 0.0);
        L.bias.assign(static_cast<size_t>(width), 0.0);
        m.dense.push_back(std::move(L));
        prev = width;
    }
    auto head = [&](int out) {
        DenseLayer L;
        L.in_width = prev;
        L.out_width = out;
        L.weights.assign(static_cast<size_t>(out) * prev, 0.0);
        L.bias.assign(static_cast<size_t>(out), 0.0);
        return L;
    };
    m.head_variety = head(kNumVarieties);
    m.head_spoilage = head(1);
    m.head_shelf = head(1);
    return m;
}

void he_fill(Rng& rng, std::vector<double>& w, int fan_in) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : w) v = rng.normal(0.0, stddev);
}

}  // namespace

NetworkModel init(const ModelConfig& config) {
    NetworkModel m = build_shell(config);
    Rng rng(derive_seed(config.seed, "init"));
    for (ConvLayer& L : m.conv) he_fill(rng, L.weights, L.in_channels * L.kernel * L.kernel);
    for (DenseLayer& L : m.dense) he_fill(rng, L.weights, L.in_width);
    // Task heads start at zero: the network then opens at uniform variety
    // probabilities, spoilage 0.5, and shelf-life 0, with all three initial
    // losses bounded (ln 8, ln 2, and at most 1).  He-scaled readouts put
    // the regression head several units from its [0,1] targets, which under
    // momentum can blow up on an unlucky early batch.
    return m;
}

std::vector<std::vector<double>*> parameter_blocks(NetworkModel& m) {
    std::vector<std::vector<double>*> blocks;
    for (ConvLayer& L : m.conv) {
        blocks.push_back(&L.weights);
        blocks.push_back(&L.bias);
    }
    for (DenseLayer& L : m.dense) {
        blocks.push_back(&L.weights);
        blocks.push_back(&L.bias);
    }
    for (DenseLayer* L : {&m.head_variety, &m.head_spoilage, &m.head_shelf}) {
        blocks.push_back(&L->weights);
        blocks.push_back(&L->bias);
    }
    return blocks;
}

std::vector<const std::vector<double>*> parameter_blocks(const NetworkModel& m) {
    std::vector<const std::vector<double>*> blocks;
    for (std::vector<double>* b : parameter_blocks(const_cast<NetworkModel&>(m))) blocks.push_back(b);
    return blocks;
}

size_t parameter_count(const NetworkModel& m) {
    size_t n = 0;
    for (const std::vector<double>* b : parameter_blocks(m)) n += b->size();
    return n;
}

// ---------------------------------------------------------------------------
// Forward / loss / backward
// ---------------------------------------------------------------------------

HeadOutputs forward(const NetworkModel& model, const std::vector<ImageRaster>& images,
                    const std::vector<FeatureVector>& features) {
    if (images.size() != features.size())
        throw ValidationError("forward: image and feature batch sizes differ");
    if (images.empty()) throw ValidationError("forward: empty batch");
    HeadOutputs out;
    Activations a;
    for (size_t i = 0; i < images.size(); ++i) {
        run_forward(model, images[i], features[i], a);
        out.variety.push_back(a.variety_probs);
        out.spoilage.push_back(a.spoilage_prob);
        out.shelf.push_back(a.shelf_out);
    }
    return out;
}

LossBreakdown compute_loss(const NetworkModel& model, const std::vector<TrainSample>& batch) {
    if (batch.empty()) throw ValidationError("compute_loss: empty batch");
    LossBreakdown lb;
    Activations a;
    for (const TrainSample& s : batch) {
        check_train_sample(model, s);
        run_forward(model, s.image, s.features, a);
        const SampleLoss loss = sample_loss(a, s);
        lb.variety += loss.variety;
        lb.spoilage += loss.spoilage;
        lb.shelf += loss.shelf;
    }
    const double n = static_cast<double>(batch.size());
    lb.variety /= n;
    lb.spoilage = lb.spoilage / n * model.config.spoilage_loss_weight;
    lb.shelf = lb.shelf / n * model.config.shelf_loss_weight;
    lb.total = lb.variety + lb.spoilage + lb.shelf;
    if (!std::isfinite(lb.total)) throw std::runtime_error("numerical divergence");
    return lb;
}

LossBreakdown backward(const NetworkModel& model, const std::vector<TrainSample>& batch, Gradients& grads) {
    if (batch.empty()) throw ValidationError("backward: empty batch");
    zero_like_params(model, grads);

    // Gradient block indices mirror parameter_blocks order.
    const size_t n_conv = model.conv.size();
    const size_t n_dense = model.dense.size();
    auto conv_w = [&](size_t i) -> std::vector<double>& { return grads[2 * i]; };
    auto conv_b = [&](size_t i) -> std::vector<double>& { return grads[2 * i + 1]; };
    auto dense_w = [&](size_t j) -> std::vector<double>& { return grads[2 * (n_conv + j)]; };
    auto dense_b = [&](size_t j) -> std::vector<double>& { return grads[2 * (n_conv + j) + 1]; };
    const size_t head_base = 2 * (n_conv + n_dense);

    const std::vector<Shape> shapes = stage_shapes(model.config);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    LossBreakdown lb;
    Activations a;
    std::vector<double> dtrunk, dbuf_a, dbuf_b;

    for (const TrainSample& s : batch) {
        check_train_sample(model, s);
        run_forward(model, s.image, s.features, a);
        const SampleLoss loss = sample_loss(a, s);
        lb.variety += loss.variety;
        lb.spoilage += loss.spoilage;
        lb.shelf += loss.shelf;

        // Head gradients at the logits (mean reduction folded in here).
        std::array<double, kNumVarieties> dvl{};
        for (int j = 0; j < kNumVarieties; ++j)
            dvl[static_cast<size_t>(j)] =
                (a.variety_probs[static_cast<size_t>(j)] - (j == s.variety ? 1.0 : 0.0)) * inv_n;
        const double dsl =
            (a.spoilage_prob - static_cast<double>(s.spoiled)) * model.config.spoilage_loss_weight * inv_n;
        const double dsh = 2.0 * (a.shelf_out - s.shelf_days / 365.0) * model.config.shelf_loss_weight * inv_n;

        const double* last = n_dense > 0 ? a.dense_out.back().data() : a.trunk.data();
        std::vector<double> dlast(static_cast<size_t>(model.head_variety.in_width), 0.0);
        dense_backward(model.head_variety, last, dvl.data(), grads[head_base], grads[head_base + 1],
                       dlast.data());
        dense_backward(model.head_spoilage, last, &dsl, grads[head_base + 2], grads[head_base + 3],
                       dlast.data());
        dense_backward(model.head_shelf, last, &dsh, grads[head_base + 4], grads[head_base + 5],
                       dlast.data());

        // Dense stack, newest to oldest, with ReLU masking.
        for (size_t j = n_dense; j-- > 0;) {
            for (int o = 0; o < model.dense[j].out_width; ++o)
                if (a.dense_out[j][static_cast<size_t>(o)] <= 0.0) dlast[static_cast<size_t>(o)] = 0.0;
            const double* in = j == 0 ? a.trunk.data() : a.dense_out[j - 1].data();
            std::vector<double>& din = j == 0 ? dtrunk : dbuf_a;
            din.assign(static_cast<size_t>(model.dense[j].in_width), 0.0);
            dense_backward(model.dense[j], in, dlast.data(), dense_w(j), dense_b(j), din.data());
            dlast = din;
        }

        // Trunk gradient: image part goes back through the conv stack, the
        // feature part stops (features are inputs, not parameters).
        const size_t flat = shapes.back().plane();
        std::vector<double> dplane(flat, 0.0);
        for (size_t i = 0; i < flat; ++i) dplane[i] = dlast[i];

        for (size_t i = n_conv; i-- > 0;) {
            const Shape& in_shape = shapes[i];
            // Un-pool into conv output dims, then apply the ReLU mask.
            dbuf_b.assign(static_cast<size_t>(model.conv[i].out_channels) * in_shape.h * in_shape.w, 0.0);
            for (size_t o = 0; o < a.pool_arg[i].size(); ++o)
                dbuf_b[static_cast<size_t>(a.pool_arg[i][o])] += dplane[o];
            for (size_t o = 0; o < dbuf_b.size(); ++o)
                if (a.conv_relu[i][o] <= 0.0) dbuf_b[o] = 0.0;
            const std::vector<double>& in = i == 0 ? a.input : a.pool_out[i - 1];
            if (i == 0) {
                conv_backward(model.conv[i], in, in_shape.h, in_shape.w, dbuf_b, conv_w(i), conv_b(i), nullptr);
            } else {
                conv_backward(model.conv[i], in, in_shape.h, in_shape.w, dbuf_b, conv_w(i), conv_b(i),
                              &dplane);
            }
        }
    }

    const double n = static_cast<double>(batch.size());
    lb.variety /= n;
    lb.spoilage = lb.spoilage / n * model.config.spoilage_loss_weight;
    lb.shelf = lb.shelf / n * model.config.shelf_loss_weight;
    lb.total = lb.variety + lb.spoilage + lb.shelf;
    if (!std::isfinite(lb.total)) throw std::runtime_error("numerical divergence");
    return lb;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

TrainReport train(NetworkModel& model, const std::vector<TrainSample>& dataset) {
    const auto t0 = std::chrono::steady_clock::now();
    validate_config(model.config);
    check_model_built(model);
    if (dataset.empty()) throw ValidationError("train: empty dataset");
    if (static_cast<int>(dataset.size()) < model.config.batch_size)
        throw ValidationError("train: dataset smaller than batch size");
    if (model.config.augment_rotate && model.config.input_h != model.config.input_w)
        throw ValidationError("train: rotation augmentation requires square inputs");
    for (const TrainSample& s : dataset) check_train_sample(model, s);

    std::vector<FeatureVector> fvs;
    fvs.reserve(dataset.size());
    for (const TrainSample& s : dataset) fvs.push_back(s.features);
    model.scaler.fit(fvs);

    Rng rng(derive_seed(model.config.seed, "train"));
    Gradients grads, velocity;
    zero_like_params(model, velocity);
    const auto blocks = parameter_blocks(model);

    TrainReport report;
    const size_t n = dataset.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 0; epoch < model.config.epochs; ++epoch) {
        rng.shuffle(order);
        double sum_total = 0.0, sum_v = 0.0, sum_s = 0.0, sum_sh = 0.0;
        for (size_t start = 0; start < n; start += static_cast<size_t>(model.config.batch_size)) {
            const size_t stop = std::min(n, start + static_cast<size_t>(model.config.batch_size));
            std::vector<TrainSample> batch;
            batch.reserve(stop - start);
            for (size_t i = start; i < stop; ++i) {
                batch.push_back(dataset[order[i]]);
                augment_in_place(model.config, batch.back(), rng);
            }
            const LossBreakdown lb = backward(model, batch, grads);
            const double lr = model.config.learning_rate, mu = model.config.momentum;
            for (size_t b = 0; b < blocks.size(); ++b) {
                std::vector<double>& w = *blocks[b];
                for (size_t j = 0; j < w.size(); ++j) {
                    velocity[b][j] = mu * velocity[b][j] - lr * grads[b][j];
                    w[j] += velocity[b][j];
                }
            }
            const double bs = static_cast<double>(stop - start);
            sum_total += lb.total * bs;
            sum_v += lb.variety * bs;
            sum_s += lb.spoilage * bs;
            sum_sh += lb.shelf * bs;
        }
        report.epoch_loss_total.push_back(sum_total / static_cast<double>(n));
        report.epoch_loss_variety.push_back(sum_v / static_cast<double>(n));
        report.epoch_loss_spoilage.push_back(sum_s / static_cast<double>(n));
        report.epoch_loss_shelf.push_back(sum_sh / static_cast<double>(n));
    }
    report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

std::vector<int> stratified_folds(const std::vector<int>& class_labels, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("stratified_folds: need at least 2 folds");
    if (class_labels.empty()) throw ValidationError("no samples");
    std::map<int, std::vector<size_t>> by_class;
    for (size_t i = 0; i < class_labels.size(); ++i) by_class[class_labels[i]].push_back(i);
    Rng rng(seed);
    std::vector<int> fold(class_labels.size(), 0);
    int class_rank = 0;
    for (auto& [label, idxs] : by_class) {
        if (static_cast<int>(idxs.size()) < k)
            throw ValidationError("stratification impossible: class " + std::to_string(label) +
                                  " has fewer samples than folds");
        rng.shuffle(idxs);
        // Round-robin dealing, staggered per class so no fold is always the
        // one that receives remainders.
        for (size_t j = 0; j < idxs.size(); ++j)
            fold[idxs[j]] = static_cast<int>((j + static_cast<size_t>(class_rank)) % static_cast<size_t>(k));
        ++class_rank;
    }
    return fold;
}

CvResult kfold_cv(const std::vector<TrainSample>& dataset, const ModelConfig& config, int k) {
    validate_config(config);
    if (k < 2) throw ValidationError("kfold_cv: need at least 2 folds");
    if (static_cast<int>(dataset.size()) < k) throw ValidationError("kfold_cv: dataset smaller than k");
    std::vector<int> labels;
    labels.reserve(dataset.size());
    for (const TrainSample& s : dataset) labels.push_back(s.variety);
    const std::vector<int> fold = stratified_folds(labels, k, derive_seed(config.seed, "folds"));

    CvResult result;
    for (int f = 0; f < k; ++f) {
        std::vector<TrainSample> train_set, val_set;
        for (size_t i = 0; i < dataset.size(); ++i)
            (fold[i] == f ? val_set : train_set).push_back(dataset[i]);
        ModelConfig fold_cfg = config;
        fold_cfg.seed = derive_seed(config.seed, "fold" + std::to_string(f));
        NetworkModel model = init(fold_cfg);
        train(model, train_set);
        long long correct = 0;
        for (const TrainSample& s : val_set)
            if (predict(model, s.image, s.features).variety == s.variety) ++correct;
        result.fold_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(val_set.size()));
    }
    result.mean_accuracy =
        std::accumulate(result.fold_accuracy.begin(), result.fold_accuracy.end(), 0.0) / static_cast<double>(k);
    return result;
}

// ---------------------------------------------------------------------------
// Prediction and persistence
// ---------------------------------------------------------------------------

Prediction predict(const NetworkModel& model, const ImageRaster& image, const FeatureVector& features) {
    Activations a;
    run_forward(model, image, features, a);
    Prediction p;
    p.variety_probs = a.variety_probs;
    for (int j = 1; j < kNumVarieties; ++j)
        if (a.variety_probs[static_cast<size_t>(j)] > a.variety_probs[static_cast<size_t>(p.variety)])
            p.variety = j;
    p.spoilage_prob = a.spoilage_prob;
    p.spoiled = a.spoilage_prob >= model.spoilage_threshold;
    const double days = a.shelf_out * 365.0;
    p.shelf_days = static_cast<int>(std::lround(std::clamp(days, 0.0, 365.0)));
    return p;
}

void save_model(const std::filesystem::path& path, const NetworkModel& model) {
    nlohmann::ordered_json j;
    j["layout"] = "dsmodel1";
    nlohmann::ordered_json cfg;
    cfg["input_h"] = model.config.input_h;
    cfg["input_w"] = model.config.input_w;
    nlohmann::ordered_json blocks = nlohmann::ordered_json::array();
    for (const ConvBlockSpec& b : model.config.conv_blocks)
        blocks.push_back({{"filters", b.filters}, {"kernel", b.kernel}});
    cfg["conv_blocks"] = std::move(blocks);
    cfg["dense_widths"] = model.config.dense_widths;
    cfg["learning_rate"] = model.config.learning_rate;
    cfg["momentum"] = model.config.momentum;
    cfg["batch_size"] = model.config.batch_size;
    cfg["epochs"] = model.config.epochs;
    cfg["spoilage_loss_weight"] = model.config.spoilage_loss_weight;
    cfg["shelf_loss_weight"] = model.config.shelf_loss_weight;
    cfg["augment_flip"] = model.config.augment_flip;
    cfg["augment_brightness"] = model.config.augment_brightness;
    cfg["augment_brightness_range"] = model.config.augment_brightness_range;
    cfg["augment_rotate"] = model.config.augment_rotate;
    cfg["feature_mask"] = std::vector<int>(model.config.feature_mask.begin(), model.config.feature_mask.end());
    cfg["seed"] = model.config.seed;
    j["config"] = std::move(cfg);

    j["scaler"] = {{"fitted", model.scaler.fitted()},
                   {"mean", std::vector<double>(model.scaler.mean().begin(), model.scaler.mean().end())},
                   {"stddev", std::vector<double>(model.scaler.stddev().begin(), model.scaler.stddev().end())}};
    j["spoilage_threshold"] = model.spoilage_threshold;
    j["calibration"] = {
        {"dark", std::vector<double>(model.calibration.dark.begin(), model.calibration.dark.end())},
        {"white", std::vector<double>(model.calibration.white.begin(), model.calibration.white.end())}};

    nlohmann::ordered_json conv = nlohmann::ordered_json::array();
    for (const ConvLayer& L : model.conv)
        conv.push_back({{"in", L.in_channels},
                        {"out", L.out_channels},
                        {"kernel", L.kernel},
                        {"w", L.weights},
                        {"b", L.bias}});
    j["conv"] = std::move(conv);
    nlohmann::ordered_json dense = nlohmann::ordered_json::array();
    for (const DenseLayer& L : model.dense) dense.push_back(dense_json(L));
    j["dense"] = std::move(dense);
    j["heads"] = {{"variety", dense_json(model.head_variety)},
                  {"spoilage", dense_json(model.head_spoilage)},
                  {"shelf", dense_json(model.head_shelf)}};

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

NetworkModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open model file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed model file: " + std::string(e.what()));
    }
    try {
        if (j.at("layout").get<std::string>() != "dsmodel1")
            throw ValidationError("unknown model layout: " + j.at("layout").get<std::string>());
        const nlohmann::json& cfg = j.at("config");
        ModelConfig config;
        config.input_h = cfg.at("input_h").get<int>();
        config.input_w = cfg.at("input_w").get<int>();
        config.conv_blocks.clear();
        for (const nlohmann::json& b : cfg.at("conv_blocks"))
            config.conv_blocks.push_back({b.at("filters").get<int>(), b.at("kernel").get<int>()});
        config.dense_widths = cfg.at("dense_widths").get<std::vector<int>>();
        config.learning_rate = cfg.at("learning_rate").get<double>();
        config.momentum = cfg.at("momentum").get<double>();
        config.batch_size = cfg.at("batch_size").get<int>();
        config.epochs = cfg.at("epochs").get<int>();
        config.spoilage_loss_weight = cfg.at("spoilage_loss_weight").get<double>();
        config.shelf_loss_weight = cfg.at("shelf_loss_weight").get<double>();
        config.augment_flip = cfg.at("augment_flip").get<bool>();
        config.augment_brightness = cfg.at("augment_brightness").get<bool>();
        config.augment_brightness_range = cfg.at("augment_brightness_range").get<double>();
        config.augment_rotate = cfg.at("augment_rotate").get<bool>();
        const std::vector<int> mask = cfg.at("feature_mask").get<std::vector<int>>();
        if (mask.size() != static_cast<size_t>(kFeatureCount))
            throw ValidationError("model file feature mask must have 46 entries");
        for (size_t i = 0; i < mask.size(); ++i) {
            if (mask[i] != 0 && mask[i] != 1) throw ValidationError("model file feature mask entries must be 0 or 1");
            config.feature_mask[i] = static_cast<std::uint8_t>(mask[i]);
        }
        config.seed = cfg.at("seed").get<std::uint64_t>();

        NetworkModel model = build_shell(config);
        const nlohmann::json& conv = j.at("conv");
        if (conv.size() != model.conv.size()) throw ValidationError("model file conv layer count mismatch");
        for (size_t i = 0; i < model.conv.size(); ++i) {
            ConvLayer& L = model.conv[i];
            if (conv[i].at("in").get<int>() != L.in_channels || conv[i].at("out").get<int>() != L.out_channels ||
                conv[i].at("kernel").get<int>() != L.kernel)
                throw ValidationError("model file layer shape mismatch");
            L.weights = conv[i].at("w").get<std::vector<double>>();
            L.bias = conv[i].at("b").get<std::vector<double>>();
            if (L.weights.size() != static_cast<size_t>(L.out_channels) * L.in_channels * L.kernel * L.kernel ||
                L.bias.size() != static_cast<size_t>(L.out_channels))
                throw ValidationError("model file layer shape mismatch");
        }
        const nlohmann::json& dense = j.at("dense");
        if (dense.size() != model.dense.size()) throw ValidationError("model file dense layer count mismatch");
        for (size_t i = 0; i < model.dense.size(); ++i)
            dense_from_json(dense[i], model.dense[i], model.dense[i].in_width, model.dense[i].out_width);
        dense_from_json(j.at("heads").at("variety"), model.head_variety, model.head_variety.in_width,
                        kNumVarieties);
        dense_from_json(j.at("heads").at("spoilage"), model.head_spoilage, model.head_spoilage.in_width, 1);
        dense_from_json(j.at("heads").at("shelf"), model.head_shelf, model.head_shelf.in_width, 1);

        const nlohmann::json& sc = j.at("scaler");
        if (sc.at("fitted").get<bool>()) {
            const std::vector<double> mean = sc.at("mean").get<std::vector<double>>();
            const std::vector<double> stddev = sc.at("stddev").get<std::vector<double>>();
            if (mean.size() != static_cast<size_t>(kFeatureCount) ||
                stddev.size() != static_cast<size_t>(kFeatureCount))
                throw ValidationError("model file scaler must have 46 entries");
            std::array<double, kFeatureCount> m{}, s{};
            std::copy(mean.begin(), mean.end(), m.begin());
            std::copy(stddev.begin(), stddev.end(), s.begin());
            model.scaler.restore(m, s);
        }
        model.spoilage_threshold = j.at("spoilage_threshold").get<double>();
        const std::vector<double> dark = j.at("calibration").at("dark").get<std::vector<double>>();
        const std::vector<double> white = j.at("calibration").at("white").get<std::vector<double>>();
        if (dark.size() != static_cast<size_t>(kSpectralChannels) ||
            white.size() != static_cast<size_t>(kSpectralChannels))
            throw ValidationError("model file calibration must have 18 channels");
        std::copy(dark.begin(), dark.end(), model.calibration.dark.begin());
        std::copy(white.begin(), white.end(), model.calibration.white.begin());
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed model file: " + std::string(e.what()));
    }
}

}  // namespace datesort
