#include "etcn/evaluation.hpp"

#include "etcn/io.hpp"

#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

namespace etcn {

std::int64_t ConfusionMatrix::total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t{0}); }

std::int64_t ConfusionMatrix::trace() const {
    std::int64_t t = 0;
    for (int i = 0; i < n_classes; ++i) t += at(i, i);
    return t;
}

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int n_classes) {
    if (truth.size() != predicted.size()) throw std::invalid_argument("confusion_matrix: label vectors differ in length");
    if (n_classes < 1) throw std::invalid_argument("confusion_matrix: n_classes must be >= 1");
    ConfusionMatrix cm;
    cm.n_classes = n_classes;
    cm.counts.assign(static_cast<std::size_t>(n_classes * n_classes), 0);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= n_classes || predicted[i] < 0 || predicted[i] >= n_classes)
            throw std::invalid_argument("confusion_matrix: class id out of range");
        ++cm.at(truth[i], predicted[i]);
    }
    return cm;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
    const std::int64_t total = cm.total();
    if (total <= 0) throw std::invalid_argument("compute_metrics: empty confusion matrix");
    MetricsReport r;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    r.per_class.resize(static_cast<std::size_t>(cm.n_classes));
    std::int64_t tp_sum = 0, fp_sum = 0, fn_sum = 0;
    int clean = 0;
    for (int c = 0; c < cm.n_classes; ++c) {
        std::int64_t tp = cm.at(c, c);
        std::int64_t predicted = 0, actual = 0;
        for (int k = 0; k < cm.n_classes; ++k) {
            predicted += cm.at(k, c);
            actual += cm.at(c, k);
        }
        const std::int64_t fp = predicted - tp;
        const std::int64_t fn = actual - tp;
        tp_sum += tp;
        fp_sum += fp;
        fn_sum += fn;
        auto& m = r.per_class[static_cast<std::size_t>(c)];
        m.support = actual;
        if (tp + fp > 0) m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        else m.degenerate = true;
        if (tp + fn > 0) m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
        else m.degenerate = true;
        if (m.precision + m.recall > 0.0) m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        else m.degenerate = true;

        r.macro_precision += m.precision;
        r.macro_recall += m.recall;
        r.macro_f1 += m.f1;
        if (!m.degenerate) {
            ++clean;
            r.macro_precision_excluding_degenerate += m.precision;
            r.macro_recall_excluding_degenerate += m.recall;
            r.macro_f1_excluding_degenerate += m.f1;
        }
    }
    const double k = cm.n_classes;
    r.macro_precision /= k;
    r.macro_recall /= k;
    r.macro_f1 /= k;
    if (clean > 0) {
        r.macro_precision_excluding_degenerate /= clean;
        r.macro_recall_excluding_degenerate /= clean;
        r.macro_f1_excluding_degenerate /= clean;
    }
    r.micro_precision = tp_sum + fp_sum > 0 ? static_cast<double>(tp_sum) / static_cast<double>(tp_sum + fp_sum) : 0.0;
    r.micro_recall = tp_sum + fn_sum > 0 ? static_cast<double>(tp_sum) / static_cast<double>(tp_sum + fn_sum) : 0.0;
    r.micro_f1 = r.micro_precision + r.micro_recall > 0.0
                     ? 2.0 * r.micro_precision * r.micro_recall / (r.micro_precision + r.micro_recall)
                     : 0.0;
    return r;
}

std::vector<double> row_normalized(const ConfusionMatrix& cm) {
    std::vector<double> out(cm.counts.size(), 0.0);
    for (int i = 0; i < cm.n_classes; ++i) {
        std::int64_t row = 0;
        for (int j = 0; j < cm.n_classes; ++j) row += cm.at(i, j);
        if (row == 0) continue;
        for (int j = 0; j < cm.n_classes; ++j)
            out[static_cast<std::size_t>(i * cm.n_classes + j)] =
                static_cast<double>(cm.at(i, j)) / static_cast<double>(row);
    }
    return out;
}

RunMetrics summary(const MetricsReport& report) {
    return {report.accuracy, report.macro_precision, report.macro_recall, report.macro_f1};
}

std::vector<AblationRow> ablation_table(std::span<const VariantResult> results) {
    std::vector<AblationRow> rows;
    for (const auto& v : results) {
        if (v.split_fingerprint != results.front().split_fingerprint)
            throw std::invalid_argument("ablation_table: variants were evaluated on different splits");
        if (v.runs.empty()) throw std::invalid_argument("ablation_table: variant " + v.variant + " has no runs");
        AblationRow row;
        row.variant = v.variant;
        row.runs = static_cast<int>(v.runs.size());
        auto stat = [&](double RunMetrics::*field, double& mean, double& sd) {
            double sum = 0.0;
            for (const auto& r : v.runs) sum += r.*field;
            mean = sum / row.runs;
            double sq = 0.0;
            for (const auto& r : v.runs) sq += (r.*field - mean) * (r.*field - mean);
            sd = row.runs > 1 ? std::sqrt(sq / (row.runs - 1)) : 0.0;
        };
        stat(&RunMetrics::accuracy, row.mean.accuracy, row.stddev.accuracy);
        stat(&RunMetrics::precision, row.mean.precision, row.stddev.precision);
        stat(&RunMetrics::recall, row.mean.recall, row.stddev.recall);
        stat(&RunMetrics::f1, row.mean.f1, row.stddev.f1);
        rows.push_back(row);
    }
    return rows;
}

void write_metrics_csv(std::ostream& out, const MetricsReport& r) {
    out << "accuracy,precision,recall,f1\n";
    out << format_double(r.accuracy) << ',' << format_double(r.macro_precision) << ','
        << format_double(r.macro_recall) << ',' << format_double(r.macro_f1) << '\n';
    out << "\nclass,precision,recall,f1,support,degenerate\n";
    for (std::size_t c = 0; c < r.per_class.size(); ++c) {
        const auto& m = r.per_class[c];
        out << c << ',' << format_double(m.precision) << ',' << format_double(m.recall) << ',' << format_double(m.f1)
            << ',' << m.support << ',' << (m.degenerate ? 1 : 0) << '\n';
    }
    out << "\naverage,precision,recall,f1\n";
    out << "micro," << format_double(r.micro_precision) << ',' << format_double(r.micro_recall) << ','
        << format_double(r.micro_f1) << '\n';
    out << "macro_excluding_degenerate," << format_double(r.macro_precision_excluding_degenerate) << ','
        << format_double(r.macro_recall_excluding_degenerate) << ',' << format_double(r.macro_f1_excluding_degenerate)
        << '\n';
}

void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
    out << "true\\pred";
    for (int j = 0; j < cm.n_classes; ++j) out << ',' << j;
    out << '\n';
    for (int i = 0; i < cm.n_classes; ++i) {
        out << i;
        for (int j = 0; j < cm.n_classes; ++j) out << ',' << cm.at(i, j);
        out << '\n';
    }
}

void write_normalized_confusion_csv(std::ostream& out, const ConfusionMatrix& cm) {
    const auto norm = row_normalized(cm);
    out << "true\\pred";
    for (int j = 0; j < cm.n_classes; ++j) out << ',' << j;
    out << '\n';
    for (int i = 0; i < cm.n_classes; ++i) {
        out << i;
        for (int j = 0; j < cm.n_classes; ++j) out << ',' << format_double(norm[static_cast<std::size_t>(i * cm.n_classes + j)]);
        out << '\n';
    }
}

void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows) {
    out << "variant,runs,accuracy_mean,accuracy_std,precision_mean,precision_std,recall_mean,recall_std,f1_mean,f1_std\n";
    for (const auto& r : rows) {
        out << r.variant << ',' << r.runs << ',' << format_double(r.mean.accuracy) << ','
            << format_double(r.stddev.accuracy) << ',' << format_double(r.mean.precision) << ','
            << format_double(r.stddev.precision) << ',' << format_double(r.mean.recall) << ','
            << format_double(r.stddev.recall) << ',' << format_double(r.mean.f1) << ',' << format_double(r.stddev.f1)
            << '\n';
    }
}

}  // namespace etcn
