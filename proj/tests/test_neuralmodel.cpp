#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "datesort/neuralmodel.hpp"
#include "datesort/rng.hpp"
#include "doctest.h"

using namespace datesort;

namespace {

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.input_h = 8;
    cfg.input_w = 8;
    cfg.conv_blocks = {{2, 3}};
    cfg.dense_widths = {4};
    cfg.batch_size = 3;
    cfg.epochs = 1;
    cfg.seed = 77;
    return cfg;
}

TrainSample random_sample(Rng& rng, int h, int w) {
    TrainSample s;
    s.image = ImageRaster::raw(w, h);
    for (double& v : s.image.data) v = rng.uniform();
    s.image.normalized = true;
    for (double& v : s.features.values) v = rng.normal(0.0, 1.0);
    s.variety = static_cast<int>(rng.uniform_int(kNumVarieties));
    s.spoiled = rng.bernoulli(0.3) ? 1 : 0;
    s.shelf_days = rng.uniform(0.0, 365.0);
    return s;
}

std::vector<TrainSample> random_batch(Rng& rng, const ModelConfig& cfg, int n) {
    std::vector<TrainSample> batch;
    for (int i = 0; i < n; ++i) batch.push_back(random_sample(rng, cfg.input_h, cfg.input_w));
    return batch;
}

// A dataset the network can memorize: the class is written directly into
// one feature slot per class; images are seeded noise.
std::vector<TrainSample> separable_toy_set(int n, int n_classes, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<TrainSample> set;
    for (int i = 0; i < n; ++i) {
        TrainSample s = random_sample(rng, 16, 16);
        const int cls = i % n_classes;
        for (double& v : s.features.values) v = rng.normal(0.0, 0.1);
        s.features.values[static_cast<size_t>(cls)] = 5.0;
        s.variety = cls;
        s.spoiled = cls % 2;
        s.shelf_days = 40.0 * cls;
        set.push_back(std::move(s));
    }
    return set;
}

// Fills every parameter (task heads included — init() leaves those at
// zero) with random values so forward/backward checks exercise the whole
// network.
void randomize_params(NetworkModel& m, Rng& rng, double stddev) {
    for (std::vector<double>* blk : parameter_blocks(m))
        for (double& v : *blk) v = rng.normal(0.0, stddev);
}

bool models_equal(const NetworkModel& a, const NetworkModel& b) {
    const auto ba = parameter_blocks(a);
    const auto bb = parameter_blocks(b);
    if (ba.size() != bb.size()) return false;
    for (size_t i = 0; i < ba.size(); ++i)
        if (*ba[i] != *bb[i]) return false;
    return true;
}

}  // namespace

TEST_CASE("config validation catches bad shapes") {
    ModelConfig cfg = tiny_config();
    CHECK_NOTHROW(validate_config(cfg));

    ModelConfig five = cfg;
    five.input_h = five.input_w = 16;
    five.conv_blocks.assign(5, {2, 3});
    CHECK_THROWS_AS(validate_config(five), ValidationError);

    ModelConfig shrink = cfg;
    shrink.input_h = shrink.input_w = 8;
    shrink.conv_blocks.assign(4, {2, 3});  // 8 -> 4 -> 2 -> 1 -> 0
    CHECK_THROWS_WITH_AS(validate_config(shrink), "config shrinks feature map to zero", ValidationError);

    ModelConfig badk = cfg;
    badk.conv_blocks = {{4, 4}};
    CHECK_THROWS_AS(validate_config(badk), ValidationError);
    ModelConfig badlr = cfg;
    badlr.learning_rate = -0.1;
    CHECK_THROWS_AS(validate_config(badlr), ValidationError);
    ModelConfig nodense = cfg;
    nodense.dense_widths.clear();
    CHECK_THROWS_AS(validate_config(nodense), ValidationError);
}

TEST_CASE("init is deterministic and He-scaled") {
    ModelConfig cfg = tiny_config();
    NetworkModel a = init(cfg);
    NetworkModel b = init(cfg);
    CHECK(models_equal(a, b));

    ModelConfig other = cfg;
    other.seed = 78;
    CHECK_FALSE(models_equal(a, init(other)));

    for (const ConvLayer& L : a.conv)
        for (double v : L.bias) CHECK(v == 0.0);

    // A dense layer with fan_in 100: empirical weight std within 15%.
    ModelConfig wide = cfg;
    wide.dense_widths = {100, 50};
    NetworkModel m = init(wide);
    const DenseLayer& L = m.dense[1];
    REQUIRE(L.in_width == 100);
    double sum = 0.0, sq = 0.0;
    for (double v : L.weights) {
        sum += v;
        sq += v * v;
    }
    const double n = static_cast<double>(L.weights.size());
    const double stddev = std::sqrt(sq / n - (sum / n) * (sum / n));
    const double expected = std::sqrt(2.0 / 100.0);
    CHECK(stddev == doctest::Approx(expected).epsilon(0.15));
}

TEST_CASE("forward contracts: softmax, ranges, per-sample independence") {
    ModelConfig cfg = tiny_config();
    Rng rng(5150);
    for (int trial = 0; trial < 50; ++trial) {
        ModelConfig c = cfg;
        c.seed = 1000 + static_cast<std::uint64_t>(trial);
        NetworkModel m = init(c);
        randomize_params(m, rng, 0.3);
        std::vector<TrainSample> batch = random_batch(rng, c, 4);
        std::vector<ImageRaster> images;
        std::vector<FeatureVector> features;
        for (const TrainSample& s : batch) {
            images.push_back(s.image);
            features.push_back(s.features);
        }
        HeadOutputs out = forward(m, images, features);
        for (const auto& row : out.variety) {
            double sum = 0.0;
            for (double p : row) {
                CHECK(p >= 0.0);
                sum += p;
            }
            CHECK(std::abs(sum - 1.0) <= 1e-9);
        }
        for (double p : out.spoilage) {
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
        for (double v : out.shelf) CHECK(std::isfinite(v));
    }

    // Zero weights -> uniform variety probabilities and sigmoid(0)=0.5.
    NetworkModel zero = init(cfg);
    for (std::vector<double>* blk : parameter_blocks(zero)) std::fill(blk->begin(), blk->end(), 0.0);
    std::vector<TrainSample> batch = random_batch(rng, cfg, 2);
    HeadOutputs out = forward(zero, {batch[0].image, batch[1].image}, {batch[0].features, batch[1].features});
    for (const auto& row : out.variety)
        for (double p : row) CHECK(p == doctest::Approx(0.125).epsilon(1e-12));
    for (double p : out.spoilage) CHECK(p == 0.5);

    // Duplicating a sample duplicates its output row exactly.
    NetworkModel m = init(cfg);
    randomize_params(m, rng, 0.3);
    HeadOutputs dup = forward(m, {batch[0].image, batch[0].image}, {batch[0].features, batch[0].features});
    CHECK(dup.variety[0] == dup.variety[1]);
    CHECK(dup.spoilage[0] == dup.spoilage[1]);
    CHECK(dup.shelf[0] == dup.shelf[1]);

    // Shape checks.
    ImageRaster wrong = ImageRaster::raw(4, 4);
    wrong.normalized = true;
    CHECK_THROWS_WITH_AS(forward(m, {wrong}, {batch[0].features}), "forward: image shape mismatch",
                         ValidationError);
    ImageRaster unnorm = batch[0].image;
    unnorm.normalized = false;
    CHECK_THROWS_AS(forward(m, {unnorm}, {batch[0].features}), ValidationError);
    FeatureVector badfv = batch[0].features;
    badfv.layout = "fv0";
    CHECK_THROWS_AS(forward(m, {batch[0].image}, {badfv}), ValidationError);
    CHECK_THROWS_AS(forward(m, {}, {}), ValidationError);
    CHECK_THROWS_AS(forward(m, {batch[0].image}, {}), ValidationError);
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig cfg = tiny_config();
    NetworkModel m = init(cfg);
    Rng rng(33);
    randomize_params(m, rng, 0.3);
    std::vector<TrainSample> batch = random_batch(rng, cfg, 3);

    Gradients grads;
    backward(m, batch, grads);
    auto blocks = parameter_blocks(m);

    size_t total = 0;
    for (const std::vector<double>* b : blocks) total += b->size();

    // 100 random parameters plus a hand-picked one from every block.
    std::vector<std::pair<size_t, size_t>> picks;
    for (size_t b = 0; b < blocks.size(); ++b)
        picks.push_back({b, blocks[b]->size() / 2});
    for (int i = 0; i < 100; ++i) {
        size_t flat = rng.uniform_int(total);
        size_t b = 0;
        while (flat >= blocks[b]->size()) {
            flat -= blocks[b]->size();
            ++b;
        }
        picks.push_back({b, flat});
    }

    const double h = 1e-5;
    for (const auto& [b, off] : picks) {
        double& w = (*blocks[b])[off];
        const double orig = w;
        w = orig + h;
        const double lp = compute_loss(m, batch).total;
        w = orig - h;
        const double lm = compute_loss(m, batch).total;
        w = orig;
        const double numeric = (lp - lm) / (2.0 * h);
        const double analytic = grads[b][off];
        const double rel = std::abs(analytic - numeric) / (std::abs(analytic) + std::abs(numeric) + 1e-8);
        CHECK(rel <= 1e-4);
    }
}

TEST_CASE("gradient linearity and cross-entropy minimum") {
    ModelConfig cfg = tiny_config();
    NetworkModel m = init(cfg);
    Rng rng(34);
    randomize_params(m, rng, 0.3);
    std::vector<TrainSample> one = random_batch(rng, cfg, 1);
    std::vector<TrainSample> two = {one[0], one[0]};
    Gradients g1, g2;
    backward(m, one, g1);
    backward(m, two, g2);
    for (size_t b = 0; b < g1.size(); ++b)
        for (size_t j = 0; j < g1[b].size(); ++j) CHECK(g2[b][j] == doctest::Approx(g1[b][j]).epsilon(1e-12));

    // Saturated correct one-hot: variety-head gradient vanishes.
    NetworkModel sat = init(cfg);
    for (std::vector<double>* blk : parameter_blocks(sat)) std::fill(blk->begin(), blk->end(), 0.0);
    sat.head_variety.bias[static_cast<size_t>(one[0].variety)] = 60.0;
    for (int j = 0; j < kNumVarieties; ++j)
        if (j != one[0].variety) sat.head_variety.bias[static_cast<size_t>(j)] = -60.0;
    Gradients gs;
    backward(sat, one, gs);
    const size_t head_w = gs.size() - 6;  // variety head weight block
    for (double v : gs[head_w]) CHECK(std::abs(v) <= 1e-40);
    for (double v : gs[head_w + 1]) CHECK(std::abs(v) <= 1e-40);
}

TEST_CASE("training with zero learning rate leaves weights untouched") {
    ModelConfig cfg = tiny_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 3;
    NetworkModel m = init(cfg);
    NetworkModel before = m;
    Rng rng(35);
    std::vector<TrainSample> data = random_batch(rng, cfg, 8);
    TrainReport report = train(m, data);
    CHECK(models_equal(m, before));
    CHECK(report.epoch_loss_total.size() == 3);
    CHECK(report.epoch_loss_variety.size() == 3);
    CHECK(report.epoch_loss_spoilage.size() == 3);
    CHECK(report.epoch_loss_shelf.size() == 3);
}

TEST_CASE("training is deterministic per seed, augmentation on") {
    ModelConfig cfg = tiny_config();
    cfg.epochs = 2;
    cfg.batch_size = 4;
    Rng rng(36);
    std::vector<TrainSample> data = random_batch(rng, cfg, 12);

    NetworkModel m1 = init(cfg);
    TrainReport r1 = train(m1, data);
    NetworkModel m2 = init(cfg);
    TrainReport r2 = train(m2, data);
    CHECK(r1.epoch_loss_total == r2.epoch_loss_total);
    CHECK(r1.epoch_loss_variety == r2.epoch_loss_variety);
    CHECK(r1.epoch_loss_spoilage == r2.epoch_loss_spoilage);
    CHECK(r1.epoch_loss_shelf == r2.epoch_loss_shelf);
    CHECK(models_equal(m1, m2));

    ModelConfig other = cfg;
    other.seed = 99;
    NetworkModel m3 = init(other);
    TrainReport r3 = train(m3, data);
    CHECK(r1.epoch_loss_total != r3.epoch_loss_total);
}

TEST_CASE("a separable toy set is memorized and loss decreases") {
    ModelConfig cfg;
    cfg.input_h = cfg.input_w = 16;
    cfg.conv_blocks = {{4, 3}};
    cfg.dense_widths = {16};
    cfg.learning_rate = 0.02;
    cfg.batch_size = 4;
    cfg.epochs = 50;
    cfg.seed = 11;
    std::vector<TrainSample> data = separable_toy_set(20, 4, 600);
    NetworkModel m = init(cfg);
    TrainReport report = train(m, data);

    int correct = 0;
    for (const TrainSample& s : data)
        if (predict(m, s.image, s.features).variety == s.variety) ++correct;
    CHECK(correct == 20);
    CHECK(report.epoch_loss_total.back() < report.epoch_loss_total.front());

    // Spoilage head learns the parity labels too.
    int spoil_correct = 0;
    for (const TrainSample& s : data)
        if ((predict(m, s.image, s.features).spoiled ? 1 : 0) == s.spoiled) ++spoil_correct;
    CHECK(spoil_correct >= 18);
}

TEST_CASE("train input validation") {
    ModelConfig cfg = tiny_config();
    NetworkModel m = init(cfg);
    Rng rng(37);
    CHECK_THROWS_AS(train(m, {}), ValidationError);
    std::vector<TrainSample> small = random_batch(rng, cfg, 2);  // batch_size is 3
    CHECK_THROWS_AS(train(m, small), ValidationError);

    std::vector<TrainSample> bad = random_batch(rng, cfg, 3);
    bad[1].variety = 8;
    NetworkModel m2 = init(cfg);
    CHECK_THROWS_AS(train(m2, bad), ValidationError);
    bad[1].variety = 0;
    bad[2].shelf_days = 400.0;
    CHECK_THROWS_AS(train(m2, bad), ValidationError);

    ModelConfig rect = cfg;
    rect.input_w = 12;
    rect.augment_rotate = true;
    NetworkModel m3 = init(rect);
    std::vector<TrainSample> rect_data = random_batch(rng, rect, 3);
    CHECK_THROWS_AS(train(m3, rect_data), ValidationError);
    rect.augment_rotate = false;
    NetworkModel m4 = init(rect);
    CHECK_NOTHROW(train(m4, rect_data));
}

TEST_CASE("stratified folds partition every class across folds") {
    // 4 classes x 25 samples, k=5 -> every fold holds exactly 20 samples.
    std::vector<int> labels;
    for (int i = 0; i < 100; ++i) labels.push_back(i % 4);
    std::vector<int> fold = stratified_folds(labels, 5, 42);
    REQUIRE(fold.size() == 100);
    std::vector<int> fold_sizes(5, 0);
    std::vector<std::vector<int>> class_fold(4, std::vector<int>(5, 0));
    for (size_t i = 0; i < labels.size(); ++i) {
        REQUIRE(fold[i] >= 0);
        REQUIRE(fold[i] < 5);
        fold_sizes[static_cast<size_t>(fold[i])]++;
        class_fold[static_cast<size_t>(labels[i])][static_cast<size_t>(fold[i])]++;
    }
    for (int s : fold_sizes) CHECK(s == 20);
    for (const auto& row : class_fold)
        for (int c : row) CHECK(c == 5);

    CHECK(stratified_folds(labels, 5, 42) == fold);
    CHECK(stratified_folds(labels, 5, 43) != fold);

    std::vector<int> sparse = {0, 0, 0, 1};  // class 1 has one sample
    CHECK_THROWS_AS(stratified_folds(sparse, 2, 1), ValidationError);
}

TEST_CASE("cross-validation is deterministic and chance-level for a frozen model") {
    ModelConfig cfg = tiny_config();
    cfg.learning_rate = 0.0;
    cfg.epochs = 1;
    cfg.batch_size = 8;
    cfg.seed = 12;
    Rng rng(38);
    std::vector<TrainSample> data;
    for (int i = 0; i < 128; ++i) {
        TrainSample s = random_sample(rng, cfg.input_h, cfg.input_w);
        s.variety = i % 8;  // balanced
        data.push_back(std::move(s));
    }
    CvResult a = kfold_cv(data, cfg, 4);
    CvResult b = kfold_cv(data, cfg, 4);
    CHECK(a.fold_accuracy == b.fold_accuracy);
    CHECK(a.mean_accuracy == b.mean_accuracy);
    REQUIRE(a.fold_accuracy.size() == 4);
    CHECK(a.mean_accuracy == doctest::Approx(0.125).epsilon(1.0));
    CHECK(a.mean_accuracy >= 0.0);
    CHECK(a.mean_accuracy <= 0.3);

    CHECK_THROWS_AS(kfold_cv(data, cfg, 1), ValidationError);
    std::vector<TrainSample> three(data.begin(), data.begin() + 3);
    CHECK_THROWS_AS(kfold_cv(three, cfg, 4), ValidationError);
}

TEST_CASE("predict thresholds, argmax, and clamping") {
    ModelConfig cfg = tiny_config();
    NetworkModel m = init(cfg);
    for (std::vector<double>* blk : parameter_blocks(m)) std::fill(blk->begin(), blk->end(), 0.0);
    m.head_variety.bias[0] = 2.0;  // argmax -> class 0
    m.head_spoilage.bias[0] = std::log(0.49 / 0.51);
    m.head_shelf.bias[0] = -3.2;

    Rng rng(39);
    TrainSample s = random_sample(rng, cfg.input_h, cfg.input_w);
    Prediction p = predict(m, s.image, s.features);
    CHECK(p.variety == 0);
    CHECK(p.spoilage_prob == doctest::Approx(0.49).epsilon(1e-12));
    CHECK_FALSE(p.spoiled);  // threshold 0.5
    CHECK(p.shelf_days == 0);  // head output -3.2 clamps to zero days

    m.spoilage_threshold = 0.45;
    Prediction q = predict(m, s.image, s.features);
    CHECK(q.spoiled);

    m.head_shelf.bias[0] = 0.5;  // 182.5 days
    Prediction r = predict(m, s.image, s.features);
    CHECK(r.shelf_days == 183);
    m.head_shelf.bias[0] = 2.0;  // 730 -> clamp 365
    CHECK(predict(m, s.image, s.features).shelf_days == 365);
}

TEST_CASE("model serialization round-trips bit-exactly") {
    ModelConfig cfg = tiny_config();
    cfg.feature_mask[3] = 0;
    cfg.feature_mask[40] = 0;
    NetworkModel m = init(cfg);
    Rng rng(40);
    std::vector<TrainSample> data = random_batch(rng, cfg, 6);
    train(m, data);  // fits the scaler so that state round-trips too
    m.spoilage_threshold = 0.42;
    m.calibration.dark[0] = 111.0;
    m.calibration.white[17] = 4321.0;

    const std::filesystem::path path =
        std::filesystem::temp_directory_path() / "datesort_model_roundtrip.json";
    save_model(path, m);
    NetworkModel loaded = load_model(path);

    CHECK(models_equal(m, loaded));
    CHECK(loaded.config.feature_mask == m.config.feature_mask);
    CHECK(loaded.config.seed == m.config.seed);
    CHECK(loaded.spoilage_threshold == 0.42);
    CHECK(loaded.calibration.dark[0] == 111.0);
    CHECK(loaded.calibration.white[17] == 4321.0);
    CHECK(loaded.scaler.fitted());
    CHECK(loaded.scaler.mean() == m.scaler.mean());
    CHECK(loaded.scaler.stddev() == m.scaler.stddev());

    for (const TrainSample& s : data) {
        Prediction a = predict(m, s.image, s.features);
        Prediction b = predict(loaded, s.image, s.features);
        CHECK(a.variety == b.variety);
        CHECK(a.variety_probs == b.variety_probs);
        CHECK(a.spoilage_prob == b.spoilage_prob);
        CHECK(a.shelf_days == b.shelf_days);
    }
    std::filesystem::remove(path);
}

TEST_CASE("model loader rejects foreign layouts and malformed files") {
    ModelConfig cfg = tiny_config();
    NetworkModel m = init(cfg);
    const std::filesystem::path dir = std::filesystem::temp_directory_path();
    const std::filesystem::path path = dir / "datesort_model_reject.json";
    save_model(path, m);

    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    in.close();
    std::string text = ss.str();

    std::string foreign = text;
    foreign.replace(foreign.find("dsmodel1"), 8, "dsmodel2");
    std::ofstream(path) << foreign;
    CHECK_THROWS_AS(load_model(path), ValidationError);

    std::ofstream(path) << "{ not json";
    CHECK_THROWS_AS(load_model(path), ValidationError);

    std::string truncated = text;
    const size_t wpos = truncated.find("\"w\": [");
    REQUIRE(wpos != std::string::npos);
    truncated.replace(wpos, 6, "\"w\": [1.5,");
    std::ofstream(path) << truncated;
    CHECK_THROWS_AS(load_model(path), ValidationError);

    CHECK_THROWS_AS(load_model(dir / "datesort_no_such_model.json"), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("masked feature slots do not influence the forward pass") {
    ModelConfig cfg = tiny_config();
    cfg.feature_mask.fill(0);
    cfg.feature_mask[0] = 1;
    NetworkModel m = init(cfg);
    Rng rng(41);
    randomize_params(m, rng, 0.3);
    TrainSample s = random_sample(rng, cfg.input_h, cfg.input_w);
    Prediction base = predict(m, s.image, s.features);
    FeatureVector perturbed = s.features;
    for (int i = 1; i < kFeatureCount; ++i) perturbed.values[static_cast<size_t>(i)] += 100.0;
    Prediction same = predict(m, s.image, perturbed);
    CHECK(base.variety_probs == same.variety_probs);
    CHECK(base.spoilage_prob == same.spoilage_prob);

    FeatureVector live = s.features;
    live.values[0] += 1.0;
    Prediction moved = predict(m, s.image, live);
    CHECK(base.variety_probs != moved.variety_probs);
}

TEST_CASE("a model whose layers were never built is rejected, not misread") {
    ModelConfig cfg = tiny_config();
    NetworkModel unbuilt;
    unbuilt.config = cfg;  // layer vectors still empty

    Rng rng(321);
    const std::vector<TrainSample> batch = random_batch(rng, cfg, 3);
    CHECK_THROWS_WITH_AS(train(unbuilt, batch), "model layers do not match its config",
                         ValidationError);
    CHECK_THROWS_AS(predict(unbuilt, batch[0].image, batch[0].features), ValidationError);

    // A built model whose config was edited afterwards is just as invalid.
    NetworkModel stale = init(cfg);
    stale.config.conv_blocks.push_back({4, 3});
    CHECK_THROWS_AS(predict(stale, batch[0].image, batch[0].features), ValidationError);
    NetworkModel narrowed = init(cfg);
    narrowed.config.dense_widths = {8};
    CHECK_THROWS_AS(predict(narrowed, batch[0].image, batch[0].features), ValidationError);
}
