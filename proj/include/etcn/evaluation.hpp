#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace etcn {

/// counts[i][j] = number of samples of true class i predicted as class j.
struct ConfusionMatrix {
    int n_classes = 0;
    std::vector<std::int64_t> counts;  // row-major n_classes x n_classes

    std::int64_t at(int truth, int predicted) const {
        return counts[static_cast<std::size_t>(truth * n_classes + predicted)];
    }
    std::int64_t& at(int truth, int predicted) { return counts[static_cast<std::size_t>(truth * n_classes + predicted)]; }
    std::int64_t total() const;
    std::int64_t trace() const;
};

ConfusionMatrix confusion_matrix(std::span<const int> truth, std::span<const int> predicted, int n_classes);

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    std::int64_t support = 0;    // true samples of the class
    bool degenerate = false;     // a zero denominator occurred
};

struct MetricsReport {
    double accuracy = 0.0;
    double macro_precision = 0.0;
    double macro_recall = 0.0;
    double macro_f1 = 0.0;
    // Micro averages; equal to accuracy for single-label data.
    double micro_precision = 0.0;
    double micro_recall = 0.0;
    double micro_f1 = 0.0;
    // Macro averages over classes that are neither absent nor unpredicted.
    double macro_precision_excluding_degenerate = 0.0;
    double macro_recall_excluding_degenerate = 0.0;
    double macro_f1_excluding_degenerate = 0.0;
    std::vector<ClassMetrics> per_class;
};

/// Accuracy = trace / total; per-class one-vs-rest precision, recall and F1
/// (0 with the degenerate flag when a denominator vanishes); unweighted
/// class means for the macro scores.
MetricsReport compute_metrics(const ConfusionMatrix& cm);

/// Row-stochastic copy of the matrix (rows with no samples stay zero).
std::vector<double> row_normalized(const ConfusionMatrix& cm);

struct RunMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

RunMetrics summary(const MetricsReport& report);

struct VariantResult {
    std::string variant;
    std::vector<RunMetrics> runs;
    std::uint64_t split_fingerprint = 0;  // identifies the test split used
};

struct AblationRow {
    std::string variant;
    int runs = 0;
    RunMetrics mean;
    RunMetrics stddev;  // sample standard deviation; 0 for a single run
};

/// One row per variant in input order. Throws when the variants were not
/// evaluated on the same split.
std::vector<AblationRow> ablation_table(std::span<const VariantResult> results);

void write_metrics_csv(std::ostream& out, const MetricsReport& report);
void write_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
void write_normalized_confusion_csv(std::ostream& out, const ConfusionMatrix& cm);
void write_ablation_csv(std::ostream& out, std::span<const AblationRow> rows);

}  // namespace etcn
