#pragma once

#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tinyseg/label_map.hpp"

namespace tinyseg {

inline const std::vector<std::string>& gleason_class_names() {
    static const std::vector<std::string> kNames{"BG", "NC", "GP3", "GP4", "GP5"};
    return kNames;
}

/// Square pixel-count matrix; entry (truth, predicted). Classes are kept
/// in ordinal order (BG < NC < GP3 < GP4 < GP5 for the Gleason head).
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(int num_classes = 5)
        : num_classes_(num_classes),
          counts_(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(num_classes),
                  0) {
        require(num_classes >= 1, "confusion matrix needs at least one class");
    }

    int num_classes() const { return num_classes_; }

    std::int64_t at(int truth, int pred) const {
        return counts_[static_cast<std::size_t>(truth * num_classes_ + pred)];
    }

    void add(int truth, int pred, std::int64_t count = 1) {
        counts_[static_cast<std::size_t>(truth * num_classes_ + pred)] += count;
    }

    std::int64_t total() const {
        std::int64_t sum = 0;
        for (std::int64_t v : counts_) {
            sum += v;
        }
        return sum;
    }

    std::int64_t row_sum(int truth) const {
        std::int64_t sum = 0;
        for (int j = 0; j < num_classes_; ++j) {
            sum += at(truth, j);
        }
        return sum;
    }

    std::int64_t col_sum(int pred) const {
        std::int64_t sum = 0;
        for (int i = 0; i < num_classes_; ++i) {
            sum += at(i, pred);
        }
        return sum;
    }

    /// Entrywise sum; per-image matrices merge associatively.
    ConfusionMatrix& operator+=(const ConfusionMatrix& other) {
        require(num_classes_ == other.num_classes_, "confusion matrix size mismatch");
        for (std::size_t i = 0; i < counts_.size(); ++i) {
            counts_[i] += other.counts_[i];
        }
        return *this;
    }

private:
    int num_classes_;
    std::vector<std::int64_t> counts_;
};

/// Tallies pixel pairs into a confusion matrix.
inline ConfusionMatrix confusion(const LabelMap& pred, const LabelMap& truth,
                                 int num_classes = 5) {
    require(pred.n == truth.n && pred.h == truth.h && pred.w == truth.w,
            "confusion: prediction and truth label maps differ in shape");
    ConfusionMatrix cm(num_classes);
    for (std::size_t i = 0; i < pred.labels.size(); ++i) {
        const int p = pred.labels[i];
        const int t = truth.labels[i];
        require(p < num_classes && t < num_classes,
                "confusion: label out of range for " + std::to_string(num_classes) + " classes");
        cm.add(t, p);
    }
    return cm;
}

/// Cohen's kappa with quadratic weights w_ij = (i-j)^2 / (K-1)^2:
///   kappa = 1 - sum(w*O) / sum(w*E),
/// O the observed proportion matrix and E the outer product of its
/// marginals. Returns nullopt when the expected disagreement is zero
/// (both raters constant), where the statistic is undefined.
inline std::optional<double> quadratic_kappa(const ConfusionMatrix& cm,
                                             bool include_background = true) {
    const int k_full = cm.num_classes();
    const int first = include_background ? 0 : 1;
    const int k = k_full - first;
    require(k >= 1, "quadratic_kappa: no classes left to rate");
    double total = 0.0;
    for (int i = first; i < k_full; ++i) {
        for (int j = first; j < k_full; ++j) {
            total += static_cast<double>(cm.at(i, j));
        }
    }
    require(total > 0.0, "quadratic_kappa: empty confusion matrix");
    if (k == 1) {
        return std::nullopt;
    }
    std::vector<double> row(static_cast<std::size_t>(k), 0.0);
    std::vector<double> col(static_cast<std::size_t>(k), 0.0);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double o = static_cast<double>(cm.at(i + first, j + first)) / total;
            row[static_cast<std::size_t>(i)] += o;
            col[static_cast<std::size_t>(j)] += o;
        }
    }
    const double denom_scale = static_cast<double>(k - 1) * static_cast<double>(k - 1);
    double observed = 0.0;
    double expected = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double w = static_cast<double>((i - j) * (i - j)) / denom_scale;
            observed += w * static_cast<double>(cm.at(i + first, j + first)) / total;
            expected += w * row[static_cast<std::size_t>(i)] * col[static_cast<std::size_t>(j)];
        }
    }
    if (expected == 0.0) {
        return std::nullopt;
    }
    return 1.0 - observed / expected;
}

/// Hard-label per-class metrics. Classes absent from both prediction and
/// truth have no defined value and report nullopt ("n/a" in the CSV).
struct ClassMetrics {
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> dice;
    std::optional<double> iou;
};

struct MetricsReport {
    std::vector<ClassMetrics> per_class;
    double accuracy = 0.0;
    std::optional<double> kappa;
    std::optional<double> mean_foreground_dice;
};

inline MetricsReport per_class_report(const ConfusionMatrix& cm,
                                      bool kappa_include_background = true) {
    const int k = cm.num_classes();
    const double total = static_cast<double>(cm.total());
    require(total > 0.0, "per_class_report: empty confusion matrix");
    MetricsReport report;
    double trace = 0.0;
    double fg_dice_sum = 0.0;
    int fg_dice_count = 0;
    for (int i = 0; i < k; ++i) {
        const double tp = static_cast<double>(cm.at(i, i));
        const double fp = static_cast<double>(cm.col_sum(i)) - tp;
        const double fn = static_cast<double>(cm.row_sum(i)) - tp;
        trace += tp;
        ClassMetrics m;
        if (tp + fp + fn > 0.0) {
            m.dice = 2.0 * tp / (2.0 * tp + fp + fn);
            m.iou = tp / (tp + fp + fn);
            if (tp + fp > 0.0) {
                m.precision = tp / (tp + fp);
            }
            if (tp + fn > 0.0) {
                m.recall = tp / (tp + fn);
            }
            if (i > 0) {
                fg_dice_sum += *m.dice;
                ++fg_dice_count;
            }
        }
        report.per_class.push_back(m);
    }
    report.accuracy = trace / total;
    report.kappa = quadratic_kappa(cm, kappa_include_background);
    if (fg_dice_count > 0) {
        report.mean_foreground_dice = fg_dice_sum / static_cast<double>(fg_dice_count);
    }
    return report;
}

namespace detail {

inline std::string format_metric(const std::optional<double>& value) {
    if (!value.has_value()) {
        return "n/a";
    }
    std::ostringstream out;
    out << std::fixed << std::setprecision(6) << *value;
    return out.str();
}

}  // namespace detail

/// CSV report: one row per class with precision/recall/dice/iou, then the
/// summary rows `accuracy`, `quadratic_kappa` and `mean_foreground_dice`.
inline void write_metrics_csv(std::ostream& out, const MetricsReport& report,
                              const std::vector<std::string>& class_names) {
    require(class_names.size() == report.per_class.size(),
            "write_metrics_csv: class name count mismatch");
    out << "class,precision,recall,dice,iou\n";
    for (std::size_t i = 0; i < report.per_class.size(); ++i) {
        const ClassMetrics& m = report.per_class[i];
        out << class_names[i] << ',' << detail::format_metric(m.precision) << ','
            << detail::format_metric(m.recall) << ',' << detail::format_metric(m.dice) << ','
            << detail::format_metric(m.iou) << '\n';
    }
    out << "accuracy," << detail::format_metric(report.accuracy) << '\n';
    out << "quadratic_kappa," << detail::format_metric(report.kappa) << '\n';
    out << "mean_foreground_dice," << detail::format_metric(report.mean_foreground_dice) << '\n';
}

inline std::vector<std::string> class_names_for(int num_classes) {
    if (num_classes == 5) {
        return gleason_class_names();
    }
    std::vector<std::string> names;
    for (int i = 0; i < num_classes; ++i) {
        names.push_back("class" + std::to_string(i));
    }
    return names;
}

}  // namespace tinyseg
