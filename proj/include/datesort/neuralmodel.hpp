#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "datesort/features.hpp"
#include "datesort/types.hpp"

namespace datesort {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

// One convolutional block: same-padded kernel x kernel convolution, ReLU,
// then a 2x2 stride-2 max-pool (trailing odd row/column dropped).
struct ConvBlockSpec {
    int filters = 8;
    int kernel = 3;  // 3 or 5
};

struct ModelConfig {
    int input_h = 64;
    int input_w = 64;
    std::vector<ConvBlockSpec> conv_blocks{{8, 3}, {16, 3}};
    std::vector<int> dense_widths{64};
    double learning_rate = 0.05;
    double momentum = 0.9;
    int batch_size = 16;
    int epochs = 10;
    double spoilage_loss_weight = 1.0;
    double shelf_loss_weight = 1.0;
    bool augment_flip = true;
    bool augment_brightness = true;
    bool augment_rotate = true;
    // Brightness factors are drawn from [1 - range, 1 + range]; widen this
    // to harden a model against runtime lighting error.
    double augment_brightness_range = 0.1;
    std::array<std::uint8_t, kFeatureCount> feature_mask = [] {
        std::array<std::uint8_t, kFeatureCount> m{};
        m.fill(1);
        return m;
    }();
    std::uint64_t seed = 1;
};

// Throws ValidationError on out-of-range fields; the pooling check reports
// "config shrinks feature map to zero".
void validate_config(const ModelConfig& config);

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct ConvLayer {
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 0;
    std::vector<double> weights;  // out * in * kernel * kernel
    std::vector<double> bias;     // out
};

struct DenseLayer {
    int in_width = 0;
    int out_width = 0;
    std::vector<double> weights;  // out * in, row-major by output unit
    std::vector<double> bias;     // out
};

// Shared conv trunk, flatten + 46-dim side features, dense stack, and the
// three task heads.  The scaler/mask/threshold/calibration travel with the
// weights so a saved model is a self-contained runtime artifact.
struct NetworkModel {
    ModelConfig config;
    std::vector<ConvLayer> conv;
    std::vector<DenseLayer> dense;
    DenseLayer head_variety;   // 8 logits -> softmax
    DenseLayer head_spoilage;  // 1 logit -> sigmoid
    DenseLayer head_shelf;     // 1 linear output, shelf-life days / 365
    FeatureScaler scaler;
    double spoilage_threshold = 0.5;
    CalibrationReference calibration;

    // Height/width after each pool and the flattened trunk width.
    int output_h() const;
    int output_w() const;
    int flat_width() const;
};

// Seeded random weights: He-scaled (std sqrt(2/fan_in)) for the conv and
// hidden dense layers, zero for the task heads (bounded initial losses),
// zero biases everywhere.
NetworkModel init(const ModelConfig& config);

// Number of trainable parameters.
size_t parameter_count(const NetworkModel& model);

// Flat views over every trainable parameter, in a fixed layer order; used
// by the optimizer and by gradient checks.
std::vector<std::vector<double>*> parameter_blocks(NetworkModel& model);
std::vector<const std::vector<double>*> parameter_blocks(const NetworkModel& model);

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

// One training example: a normalized image whose dimensions match the
// config, the unscaled 46-entry feature vector, and the three targets.
struct TrainSample {
    ImageRaster image;
    FeatureVector features;
    int variety = 0;      // 0..7
    int spoiled = 0;      // 0/1
    double shelf_days = 0.0;
};

struct HeadOutputs {
    std::vector<std::array<double, kNumVarieties>> variety;  // softmax rows
    std::vector<double> spoilage;                            // sigmoid probabilities
    std::vector<double> shelf;                               // scaled (days / 365)
};

// ---------------------------------------------------------------------------
// Forward / loss / gradients
// ---------------------------------------------------------------------------

// Runs the network over a batch.  Feature vectors are standardized with the
// model's scaler (identity while unfitted) and masked slots are zeroed.
HeadOutputs forward(const NetworkModel& model, const std::vector<ImageRaster>& images,
                    const std::vector<FeatureVector>& features);

struct LossBreakdown {
    double total = 0.0;
    double variety = 0.0;   // cross-entropy
    double spoilage = 0.0;  // binary cross-entropy * weight
    double shelf = 0.0;     // mean squared error on days/365 * weight
};

// Mean loss over the batch; throws "numerical divergence" if not finite.
LossBreakdown compute_loss(const NetworkModel& model, const std::vector<TrainSample>& batch);

// Gradient blocks in parameter_blocks order.
using Gradients = std::vector<std::vector<double>>;

// Mean-loss gradients with respect to every parameter.
LossBreakdown backward(const NetworkModel& model, const std::vector<TrainSample>& batch, Gradients& grads);

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainReport {
    std::vector<double> epoch_loss_total;
    std::vector<double> epoch_loss_variety;
    std::vector<double> epoch_loss_spoilage;
    std::vector<double> epoch_loss_shelf;
    double wall_ms = 0.0;
    std::string weights_ref;  // filled by callers that persist the model
};

// Minibatch SGD with momentum over shuffled epochs.  Fits the feature
// scaler on the training set, then applies seeded on-the-fly augmentation
// (horizontal flip p=0.5, brightness jitter +/-10%, 90-degree rotations)
// per the config flags.  Deterministic for a fixed config seed.
TrainReport train(NetworkModel& model, const std::vector<TrainSample>& dataset);

// Deterministic stratified fold assignment: per-class shuffle then
// round-robin dealing.  Returns a fold index in [0,k) per sample.
std::vector<int> stratified_folds(const std::vector<int>& class_labels, int k, std::uint64_t seed);

struct CvResult {
    std::vector<double> fold_accuracy;  // variety accuracy per held-out fold
    double mean_accuracy = 0.0;
};

// k-fold cross-validation: each fold trains a fresh model on the remaining
// folds and scores variety accuracy on the held-out fold.
CvResult kfold_cv(const std::vector<TrainSample>& dataset, const ModelConfig& config, int k);

// ---------------------------------------------------------------------------
// Prediction and persistence
// ---------------------------------------------------------------------------

struct Prediction {
    int variety = 0;
    std::array<double, kNumVarieties> variety_probs{};
    double spoilage_prob = 0.0;
    bool spoiled = false;       // spoilage_prob >= model threshold
    int shelf_days = 0;         // clamped to [0, 365], rounded
};

Prediction predict(const NetworkModel& model, const ImageRaster& image, const FeatureVector& features);

// Model artifact: one JSON document, layout "dsmodel1".  Loading a file
// with a different layout tag or inconsistent shapes is an error; a loaded
// model predicts bit-identically to the saved one.
void save_model(const std::filesystem::path& path, const NetworkModel& model);
NetworkModel load_model(const std::filesystem::path& path);

}  // namespace datesort
