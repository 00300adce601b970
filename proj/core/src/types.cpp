#include "star/types.hpp"

#include <algorithm>

namespace star {

long ScoreMatrix::observed_count() const {
    long total = 0;
    for (int m = 0; m < rows(); ++m) total += row_observed_count(m);
    return total;
}

long ScoreMatrix::row_observed_count(int m) const {
    long total = 0;
    for (int n = 0; n < cols(); ++n) total += mask(m, n) != 0;
    return total;
}

long ScoreMatrix::col_observed_count(int n) const {
    long total = 0;
    for (int m = 0; m < rows(); ++m) total += mask(m, n) != 0;
    return total;
}

int ScoreMatrix::model_index(const std::string& id) const {
    auto it = std::lower_bound(models.begin(), models.end(), id);
    if (it == models.end() || *it != id) return -1;
    return static_cast<int>(it - models.begin());
}

int ScoreMatrix::benchmark_index(const std::string& id) const {
    auto it = std::lower_bound(benchmarks.begin(), benchmarks.end(), id);
    if (it == benchmarks.end() || *it != id) return -1;
    return static_cast<int>(it - benchmarks.begin());
}

std::vector<Cell> ScoreMatrix::observed_cells() const {
    std::vector<Cell> cells;
    cells.reserve(static_cast<std::size_t>(observed_count()));
    for (int m = 0; m < rows(); ++m) {
        for (int n = 0; n < cols(); ++n) {
            if (observed(m, n)) cells.push_back({m, n});
        }
    }
    return cells;
}

double ScoreMatrix::observed_mean() const {
    double sum = 0.0;
    long count = 0;
    for (int m = 0; m < rows(); ++m) {
        for (int n = 0; n < cols(); ++n) {
            if (observed(m, n)) {
                sum += values(m, n);
                ++count;
            }
        }
    }
    if (count == 0) throw ConfigError("score matrix has no observed entries");
    return sum / static_cast<double>(count);
}

std::string to_string(SplitKind kind) {
    switch (kind) {
        case SplitKind::temporal_masking: return "temporal_masking";
        case SplitKind::model_shift: return "model_shift";
        case SplitKind::benchmark_shift: return "benchmark_shift";
    }
    return "unknown";
}

SplitKind split_kind_from_string(const std::string& name) {
    if (name == "temporal_masking") return SplitKind::temporal_masking;
    if (name == "model_shift") return SplitKind::model_shift;
    if (name == "benchmark_shift") return SplitKind::benchmark_shift;
    throw ConfigError("unknown split kind: '" + name + "'");
}

void MemoryState::validate() const {
    for (const auto& id : matrix.models) {
        if (!model_profiles.count(id)) {
            throw ConfigError("matrix row '" + id + "' has no model profile");
        }
    }
    for (const auto& id : matrix.benchmarks) {
        if (!benchmark_profiles.count(id)) {
            throw ConfigError("matrix column '" + id + "' has no benchmark profile");
        }
    }
}

const ModelProfile& MemoryState::model(const std::string& id) const {
    auto it = model_profiles.find(id);
    if (it == model_profiles.end()) throw ConfigError("unknown model id: '" + id + "'");
    return it->second;
}

const BenchmarkProfile& MemoryState::benchmark(const std::string& id) const {
    auto it = benchmark_profiles.find(id);
    if (it == benchmark_profiles.end()) throw ConfigError("unknown benchmark id: '" + id + "'");
    return it->second;
}

}  // namespace star
