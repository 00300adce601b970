#pragma once
// Domain types for the score memory: records, the observed matrix,
// model/benchmark profiles, and split specifications.

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "star/common.hpp"

namespace star {

// One cell of the score matrix, by index into ScoreMatrix ordering.
struct Cell {
    int model = 0;
    int benchmark = 0;
    friend auto operator<=>(const Cell&, const Cell&) = default;
};

// A (model, score) reference used when citing observed scores.
struct ScoreRef {
    std::string model_id;
    double score = 0.0;
    friend bool operator==(const ScoreRef&, const ScoreRef&) = default;
};

struct ScoreRecord {
    std::string model_id;
    std::string benchmark_id;
    double raw_score = 0.0;
    double normalized_score = 0.0;  // always on the 0-100 scale
};

// Dense M x N score array plus observation mask. Rows and columns are
// sorted by id so indices are stable across processes.
struct ScoreMatrix {
    std::vector<std::string> models;      // length M
    std::vector<std::string> benchmarks;  // length N
    Eigen::MatrixXd values;               // M x N, defined only where mask = 1
    Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic> mask;

    int rows() const { return static_cast<int>(models.size()); }
    int cols() const { return static_cast<int>(benchmarks.size()); }
    bool observed(int m, int n) const { return mask(m, n) != 0; }

    long observed_count() const;
    long row_observed_count(int m) const;
    long col_observed_count(int n) const;

    // Index lookups; return -1 when the id is unknown.
    int model_index(const std::string& id) const;
    int benchmark_index(const std::string& id) const;

    std::vector<Cell> observed_cells() const;

    // Mean over observed entries; throws ConfigError when none observed.
    double observed_mean() const;
};

enum class MetricKind : std::uint8_t { accuracy, score };

struct ModelProfile {
    std::string model_id;
    std::string display_name;
    std::string family;        // defaults to the leading alphabetic run of model_id
    std::string organization;
    std::optional<double> parameter_count;  // billions
    Date release_date;
    std::vector<std::string> source_refs;
    std::set<std::string> tags;  // e.g. "moe", "rlhf"
};

struct BenchmarkProfile {
    std::string benchmark_id;
    std::string display_name;
    std::string category;
    int num_samples = 1;
    MetricKind metric_kind = MetricKind::accuracy;
    double raw_max = 100.0;  // normalization divisor, > 0
    std::vector<std::string> source_refs;
};

enum class SplitKind : std::uint8_t { temporal_masking, model_shift, benchmark_shift };

std::string to_string(SplitKind kind);
SplitKind split_kind_from_string(const std::string& name);

struct SplitSpec {
    SplitKind kind = SplitKind::temporal_masking;
    double mask_ratio = 0.0;  // P in [0,1]
    std::optional<Date> cutoff_date;
    std::set<std::string> held_out_models;
    std::set<std::string> held_out_benchmarks;
    std::uint64_t seed = 0;
};

using ModelProfileMap = std::map<std::string, ModelProfile>;
using BenchmarkProfileMap = std::map<std::string, BenchmarkProfile>;

// Complete memory state: the observed matrix plus a profile for every
// row and column.
struct MemoryState {
    ScoreMatrix matrix;
    ModelProfileMap model_profiles;
    BenchmarkProfileMap benchmark_profiles;

    // Throws ConfigError if any matrix row/column lacks a profile.
    void validate() const;

    const ModelProfile& model(const std::string& id) const;
    const BenchmarkProfile& benchmark(const std::string& id) const;
};

}  // namespace star
