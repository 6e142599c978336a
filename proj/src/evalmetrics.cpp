#include "datesort/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace datesort {

namespace {

double safe_ratio(double num, double den) {
    return den > 0.0 ? num / den : 0.0;
}

double f1_of(double precision, double recall) {
    double s = precision + recall;
    return s > 0.0 ? 2.0 * precision * recall / s : 0.0;
}

void check_binary_inputs(const std::vector<double>& scores, const std::vector<int>& labels, const char* op) {
    if (scores.size() != labels.size())
        throw ValidationError(std::string(op) + ": scores and labels differ in length");
    if (scores.empty()) throw ValidationError(std::string(op) + ": no samples");
    for (double s : scores) {
        if (!std::isfinite(s)) throw ValidationError(std::string(op) + ": non-finite score");
    }
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError(std::string(op) + ": labels must be 0 or 1");
    }
}

// Indices sorted by score descending; tied scores stay adjacent so the
// sweep can collapse them into one threshold step.
std::vector<size_t> descending_order(const std::vector<double>& scores) {
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });
    return idx;
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

nlohmann::ordered_json metrics_json(const ClassMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"specificity", m.specificity}};
}

nlohmann::ordered_json classification_json(const ClassificationReport& rep,
                                           const std::vector<std::string>& class_names) {
    nlohmann::ordered_json j;
    j["classes"] = class_names;
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int t = 0; t < rep.cm.n_classes; ++t) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (int p = 0; p < rep.cm.n_classes; ++p) row.push_back(rep.cm.at(t, p));
        rows.push_back(std::move(row));
    }
    j["confusion"] = std::move(rows);
    j["accuracy"] = rep.metrics.accuracy;
    nlohmann::ordered_json per = nlohmann::ordered_json::array();
    for (const ClassMetrics& m : rep.metrics.per_class) per.push_back(metrics_json(m));
    j["per_class"] = std::move(per);
    j["macro"] = metrics_json(rep.metrics.macro);
    j["micro"] = {{"precision", rep.metrics.micro_precision},
                  {"recall", rep.metrics.micro_recall},
                  {"f1", rep.metrics.micro_f1}};
    j["macro_auc"] = rep.macro_auc;
    nlohmann::ordered_json curves = nlohmann::ordered_json::array();
    for (const ClassCurves& cc : rep.curves) {
        nlohmann::ordered_json c;
        c["defined"] = cc.defined;
        if (cc.defined) {
            c["auc"] = cc.roc.auc;
            nlohmann::ordered_json roc = nlohmann::ordered_json::array();
            for (const RocPoint& p : cc.roc.points) roc.push_back({p.fpr, p.tpr});
            c["roc"] = std::move(roc);
            nlohmann::ordered_json pr = nlohmann::ordered_json::array();
            for (const PrPoint& p : cc.pr.points) pr.push_back({p.recall, p.precision});
            c["pr"] = std::move(pr);
        }
        curves.push_back(std::move(c));
    }
    if (!rep.curves.empty()) j["curves"] = std::move(curves);
    return j;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open for writing: " + path.string());
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_curve_files(const std::filesystem::path& dir, const std::string& stem, const ClassCurves& cc) {
    if (!cc.defined) return;
    std::string roc = "fpr,tpr\n";
    for (const RocPoint& p : cc.roc.points)
        roc += format_double(p.fpr) + "," + format_double(p.tpr) + "\n";
    write_text_file(dir / ("roc_" + stem + ".csv"), roc);
    std::string pr = "recall,precision\n";
    for (const PrPoint& p : cc.pr.points)
        pr += format_double(p.recall) + "," + format_double(p.precision) + "\n";
    write_text_file(dir / ("pr_" + stem + ".csv"), pr);
}

std::string confusion_csv(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    std::string text = "true\\pred";
    for (const std::string& name : class_names) text += "," + name;
    text += "\n";
    for (int t = 0; t < cm.n_classes; ++t) {
        text += class_names[t];
        for (int p = 0; p < cm.n_classes; ++p) text += "," + std::to_string(cm.at(t, p));
        text += "\n";
    }
    return text;
}

std::vector<std::string> variety_class_names() {
    std::vector<std::string> names;
    for (int v = 0; v < kNumVarieties; ++v) names.push_back(variety_name(static_cast<Variety>(v)));
    return names;
}

}  // namespace

long long ConfusionMatrix::total() const {
    long long sum = 0;
    for (long long c : counts) sum += c;
    return sum;
}

long long ConfusionMatrix::trace() const {
    long long sum = 0;
    for (int c = 0; c < n_classes; ++c) sum += at(c, c);
    return sum;
}

ConfusionMatrix confusion(const std::vector<int>& truth, const std::vector<int>& predicted, int n_classes) {
    if (n_classes < 2) throw ValidationError("confusion: need at least 2 classes");
    if (truth.size() != predicted.size())
        throw ValidationError("confusion: truth and predictions differ in length");
    if (truth.empty()) throw ValidationError("no samples");
    ConfusionMatrix cm;
    cm.n_classes = n_classes;
    cm.counts.assign(static_cast<size_t>(n_classes) * n_classes, 0);
    for (size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes)
            throw ValidationError("confusion: true label out of range");
        if (predicted[i] < 0 || predicted[i] >= n_classes)
            throw ValidationError("confusion: predicted label out of range");
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

ClassMetricsReport class_metrics(const ConfusionMatrix& cm) {
    if (cm.n_classes < 2 || cm.counts.size() != static_cast<size_t>(cm.n_classes) * cm.n_classes)
        throw ValidationError("class_metrics: malformed confusion matrix");
    long long total = cm.total();
    if (total <= 0) throw ValidationError("class_metrics: empty confusion matrix");

    ClassMetricsReport rep;
    rep.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    long long sum_tp = 0, sum_fp = 0, sum_fn = 0;
    for (int c = 0; c < cm.n_classes; ++c) {
        long long tp = cm.at(c, c);
        long long row = 0, col = 0;
        for (int k = 0; k < cm.n_classes; ++k) {
            row += cm.at(c, k);
            col += cm.at(k, c);
        }
        long long fn = row - tp;
        long long fp = col - tp;
        long long tn = total - tp - fn - fp;
        ClassMetrics m;
        m.precision = safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
        m.recall = safe_ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
        m.specificity = safe_ratio(static_cast<double>(tn), static_cast<double>(tn + fp));
        m.f1 = f1_of(m.precision, m.recall);
        rep.per_class.push_back(m);
        rep.macro.precision += m.precision;
        rep.macro.recall += m.recall;
        rep.macro.f1 += m.f1;
        rep.macro.specificity += m.specificity;
        sum_tp += tp;
        sum_fp += fp;
        sum_fn += fn;
    }
    rep.macro.precision /= cm.n_classes;
    rep.macro.recall /= cm.n_classes;
    rep.macro.f1 /= cm.n_classes;
    rep.macro.specificity /= cm.n_classes;
    rep.micro_precision = safe_ratio(static_cast<double>(sum_tp), static_cast<double>(sum_tp + sum_fp));
    rep.micro_recall = safe_ratio(static_cast<double>(sum_tp), static_cast<double>(sum_tp + sum_fn));
    rep.micro_f1 = f1_of(rep.micro_precision, rep.micro_recall);
    return rep;
}

RocCurve roc_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary_inputs(scores, labels, "roc_curve");
    long long pos = std::count(labels.begin(), labels.end(), 1);
    long long neg = static_cast<long long>(labels.size()) - pos;
    if (pos == 0 || neg == 0) throw ValidationError("AUC undefined: need both a positive and a negative label");

    std::vector<size_t> idx = descending_order(scores);
    RocCurve out;
    out.points.push_back({0.0, 0.0});
    long long tp = 0, fp = 0;
    double auc = 0.0;
    size_t i = 0;
    while (i < idx.size()) {
        double threshold = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == threshold) {
            if (labels[idx[i]] == 1) ++tp; else ++fp;
            ++i;
        }
        RocPoint p{static_cast<double>(fp) / neg, static_cast<double>(tp) / pos};
        const RocPoint& prev = out.points.back();
        auc += (p.fpr - prev.fpr) * (p.tpr + prev.tpr) / 2.0;
        out.points.push_back(p);
    }
    out.auc = auc;
    return out;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    check_binary_inputs(scores, labels, "pr_curve");
    long long pos = std::count(labels.begin(), labels.end(), 1);
    if (pos == 0) throw ValidationError("pr_curve: no positive samples");

    std::vector<size_t> idx = descending_order(scores);
    PrCurve out;
    long long tp = 0, fp = 0;
    size_t i = 0;
    while (i < idx.size() && tp < pos) {
        double threshold = scores[idx[i]];
        while (i < idx.size() && scores[idx[i]] == threshold) {
            if (labels[idx[i]] == 1) ++tp; else ++fp;
            ++i;
        }
        out.points.push_back({static_cast<double>(tp) / pos,
                              static_cast<double>(tp) / static_cast<double>(tp + fp)});
    }
    return out;
}

ClassificationReport build_classification_report(const std::vector<int>& truth,
                                                 const std::vector<int>& predicted,
                                                 const std::vector<std::vector<double>>& scores,
                                                 int n_classes) {
    ClassificationReport rep;
    rep.cm = confusion(truth, predicted, n_classes);
    rep.metrics = class_metrics(rep.cm);
    if (scores.empty()) return rep;

    if (scores.size() != truth.size())
        throw ValidationError("build_classification_report: scores and labels differ in length");
    for (const std::vector<double>& row : scores) {
        if (static_cast<int>(row.size()) != n_classes)
            throw ValidationError("build_classification_report: score row width mismatch");
    }
    rep.curves.resize(n_classes);
    double auc_sum = 0.0;
    int auc_count = 0;
    for (int c = 0; c < n_classes; ++c) {
        std::vector<int> one_vs_rest(truth.size());
        std::vector<double> class_scores(truth.size());
        long long pos = 0;
        for (size_t i = 0; i < truth.size(); ++i) {
            one_vs_rest[i] = truth[i] == c ? 1 : 0;
            pos += one_vs_rest[i];
            class_scores[i] = scores[i][c];
        }
        if (pos == 0 || pos == static_cast<long long>(truth.size())) continue;
        ClassCurves& cc = rep.curves[c];
        cc.defined = true;
        cc.roc = roc_curve(class_scores, one_vs_rest);
        cc.pr = pr_curve(class_scores, one_vs_rest);
        auc_sum += cc.roc.auc;
        ++auc_count;
    }
    rep.macro_auc = auc_count > 0 ? auc_sum / auc_count : 0.0;
    return rep;
}

MetricsReport build_report(const EvalInputs& inputs) {
    size_t n = inputs.variety_truth.size();
    if (n == 0) throw ValidationError("no samples");
    if (inputs.variety_pred.size() != n || inputs.spoilage_truth.size() != n ||
        inputs.spoilage_pred.size() != n || inputs.shelf_truth_days.size() != n ||
        inputs.shelf_pred_days.size() != n)
        throw ValidationError("build_report: input lists differ in length");
    if (!inputs.variety_scores.empty() && inputs.variety_scores.size() != n)
        throw ValidationError("build_report: variety score list length mismatch");
    if (!inputs.spoilage_scores.empty() && inputs.spoilage_scores.size() != n)
        throw ValidationError("build_report: spoilage score list length mismatch");

    MetricsReport rep;
    rep.count = static_cast<long long>(n);

    std::vector<std::vector<double>> vscores;
    vscores.reserve(inputs.variety_scores.size());
    for (const auto& row : inputs.variety_scores)
        vscores.emplace_back(row.begin(), row.end());
    rep.variety = build_classification_report(inputs.variety_truth, inputs.variety_pred, vscores, kNumVarieties);

    std::vector<std::vector<double>> sscores;
    sscores.reserve(inputs.spoilage_scores.size());
    for (double p : inputs.spoilage_scores) sscores.push_back({1.0 - p, p});
    rep.spoilage = build_classification_report(inputs.spoilage_truth, inputs.spoilage_pred, sscores, 2);

    double abs_sum = 0.0;
    for (size_t i = 0; i < n; ++i)
        abs_sum += std::abs(inputs.shelf_truth_days[i] - inputs.shelf_pred_days[i]);
    rep.shelf_life_mae = abs_sum / static_cast<double>(n);
    return rep;
}

std::string report_to_json(const MetricsReport& report) {
    nlohmann::ordered_json j;
    j["layout"] = "dsreport1";
    j["count"] = report.count;
    j["variety"] = classification_json(report.variety, variety_class_names());
    j["spoilage"] = classification_json(report.spoilage, {"edible", "spoiled"});
    j["shelf_life_mae_days"] = report.shelf_life_mae;
    return j.dump(2) + "\n";
}

void write_report_files(const std::filesystem::path& dir, const MetricsReport& report) {
    std::filesystem::create_directories(dir);
    write_text_file(dir / "report.json", report_to_json(report));
    write_text_file(dir / "confusion.csv", confusion_csv(report.variety.cm, variety_class_names()));
    write_text_file(dir / "confusion_spoilage.csv", confusion_csv(report.spoilage.cm, {"edible", "spoiled"}));
    for (int c = 0; c < static_cast<int>(report.variety.curves.size()); ++c) {
        std::string stem = variety_name(static_cast<Variety>(c));
        std::transform(stem.begin(), stem.end(), stem.begin(),
                       [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
        write_curve_files(dir, stem, report.variety.curves[c]);
    }
    if (report.spoilage.curves.size() == 2) write_curve_files(dir, "spoiled", report.spoilage.curves[1]);
}

}  // namespace datesort
