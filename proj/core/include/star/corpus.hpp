#pragma once
// Historical memory: score ingestion, normalization, matrix assembly,
// train/test split construction, and score-based neighbor lookups.

#include <optional>
#include <string>
#include <vector>

#include "star/types.hpp"

namespace star::features {
class FeatureStore;
}

namespace star::corpus {

// Profile files are JSON objects keyed by id. Dates are ISO-8601.
ModelProfileMap load_model_profiles(const std::string& path);
BenchmarkProfileMap load_benchmark_profiles(const std::string& path);

// Family fallback when a profile omits it: the leading alphabetic run
// of the model id ("InternVL3-78B" -> "InternVL"), or the full id when
// the id does not start with a letter.
std::string default_family(const std::string& model_id);

// 100 * raw / raw_max clamped to [0,100]. raw must be >= 0 and the
// profile's raw_max positive.
double normalize_score(double raw, const BenchmarkProfile& profile);

// CSV with header "model_id,benchmark_id,score". Scores are raw and get
// normalized through the referenced benchmark profile. Unknown ids,
// malformed numbers, and duplicate (model, benchmark) pairs are rejected
// with the offending line number.
std::vector<ScoreRecord> load_scores(const std::string& path, const ModelProfileMap& models,
                                     const BenchmarkProfileMap& benchmarks);

// Assemble the observed matrix. Rows/columns sorted by id; mask set
// exactly where records exist. Throws on an empty record list.
ScoreMatrix build_matrix(const std::vector<ScoreRecord>& records);

// A split keeps the original matrix shape; train is the same matrix with
// test (and dropped) cells cleared from the mask.
struct Split {
    ScoreMatrix train;
    std::vector<Cell> test_cells;   // sorted
    SplitSpec spec;
    long dropped_cells = 0;         // in-distribution cells masked out entirely (pattern shifts)
    std::vector<std::string> warnings;
};

// Temporal masking: models released before the cutoff keep all cells in
// train. For each later model with k observed cells, min(ceil(P*k), k-1)
// cells are sampled into test, so at least one train cell is always
// retained. Reproducible for a fixed seed.
Split temporal_masking_split(const ScoreMatrix& matrix, const ModelProfileMap& profiles,
                             Date cutoff_date, double mask_ratio, std::uint64_t seed);

// Pattern-shift scenario: a named held-out model set (by tag / explicit
// ids / top-k mean score) or benchmark set (by id or category).
struct Scenario {
    std::string name;
    SplitKind kind = SplitKind::model_shift;  // model_shift or benchmark_shift
    std::set<std::string> held_out_tags;        // models carrying any of these tags
    std::set<std::string> held_out_ids;         // explicit model or benchmark ids
    std::set<std::string> held_out_categories;  // benchmark categories
    int top_k_models = 0;                       // hold out top-k by mean observed score
    double in_dist_mask_ratio = 0.40;           // masking applied to remaining entries
};

// Model-side: every cell of a held-out model is test. Benchmark-side:
// every cell of a held-out benchmark is test. Remaining in-distribution
// entries are masked (dropped from train, not tested) at
// in_dist_mask_ratio per model.
Split pattern_shift_split(const ScoreMatrix& matrix, const ModelProfileMap& model_profiles,
                          const BenchmarkProfileMap& benchmark_profiles, const Scenario& scenario,
                          std::uint64_t seed);

void save_split(const Split& split, const std::string& path);
Split load_split(const std::string& path, const ScoreMatrix& full_matrix);

// Other members of the model's family with an observed score on the
// given benchmark. Empty when the family is a singleton.
std::vector<ScoreRef> family_members(const MemoryState& memory, const std::string& model_id,
                                     const std::string& benchmark_id);

// Top-K neighbors by smallest RMSE over co-observed benchmarks. When no
// candidate shares a benchmark with the target, falls back to cosine
// similarity of semantic features (zero-feature entities are skipped).
// Ties break on model id. May return fewer than K.
std::vector<std::string> similar_models(const ScoreMatrix& matrix, const std::string& model_id,
                                        int k, const features::FeatureStore* store = nullptr);

}  // namespace star::corpus
