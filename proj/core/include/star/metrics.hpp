#pragma once
// Evaluation suite: pooled error metrics, per-benchmark rank metrics
// with tie-aware handling, their weighted aggregation, and top-k recall
// for the selection experiment.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "star/types.hpp"

namespace star::metrics {

// Pooled over all test cells. Empty or mismatched inputs are rejected.
double mae(std::span<const double> pred, std::span<const double> truth);
double rmse(std::span<const double> pred, std::span<const double> truth);

// 1-based ranks, largest value first, ties averaged.
std::vector<double> average_ranks(std::span<const double> values);

// Pearson correlation of average ranks. A constant vector on either side
// has no ordering information; the correlation is reported as 0.
double spearman_rho(std::span<const double> pred, std::span<const double> truth);

// Tie-corrected Kendall tau-b, O(n log n) via merge-sort inversion
// counting. Degenerate (all-tied) inputs again report 0.
double kendall_tau_b(std::span<const double> pred, std::span<const double> truth);

// Rank metrics for one benchmark group, already normalized to [0,100]:
// srcc = (1+rho)/2*100, krcc = (1+tau_b)/2*100, mae_at_k = share of
// models whose rank error is within k positions.
struct GroupRankMetrics {
    double srcc = 0;
    double krcc = 0;
    double mae_at_k = 0;
    long n_models = 0;
};
GroupRankMetrics group_rank_metrics(std::span<const double> pred, std::span<const double> truth,
                                    int k);

// benchmark_id -> aligned (predicted, true) vectors over its test models
using GroupedPairs =
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>>;

struct MetricReport {
    double mae = 0;
    double rmse = 0;
    double score_avg = 0;  // (mae + rmse) / 2

    // Absent when no benchmark group has >= 3 test models.
    std::optional<double> srcc;
    std::optional<double> krcc;
    std::optional<double> mae_at_3;
    std::optional<double> rank_avg;  // mean of the three rank metrics
    std::optional<double> total;     // rank_avg - score_avg

    std::map<std::string, GroupRankMetrics> per_benchmark;  // eligible groups only
    long n_cells = 0;
    long excluded_groups = 0;  // groups with < 3 test models

    std::string to_json() const;              // pretty-printed object
    static std::string csv_header();          // flat row schema
    std::string csv_row(const std::string& method, const std::string& split,
                        const std::string& run) const;
};

// Derived-field arithmetic used by evaluate(), exposed so audits can
// feed published component values through the same code path.
inline double score_average(double mae, double rmse) { return (mae + rmse) / 2.0; }
inline double rank_average(double srcc, double krcc, double mae_at_k) {
    return (srcc + krcc + mae_at_k) / 3.0;
}
inline double total_score(double rank_avg, double score_avg) { return rank_avg - score_avg; }

// Error metrics pooled across every group; rank metrics computed per
// benchmark over groups with >= 3 test models and averaged weighted by
// group cell count.
MetricReport evaluate(const GroupedPairs& groups, int k = 3);

// |recommended ∩ TopK(truth)| / k. The true top-k sorts by score
// descending with ties broken toward the smaller id.
double top_k_recall(const std::vector<ScoreRef>& truth,
                    const std::vector<std::string>& recommended, int k);

}  // namespace star::metrics
