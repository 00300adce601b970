#include "star/corpus.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "star/features.hpp"

namespace star::corpus {
namespace {

using nlohmann::json;

// Deterministic across platforms, unlike std random distributions.
struct SplitMixRng {
    std::uint64_t state;
    explicit SplitMixRng(std::uint64_t seed) : state(seed) {}

    std::uint64_t next() {
        state += 0x9e3779b97f4a7c15ULL;
        return splitmix64(state);
    }

    // Unbiased draw in [0, bound) via rejection.
    std::uint64_t below(std::uint64_t bound) {
        const std::uint64_t threshold = (0 - bound) % bound;
        for (;;) {
            const std::uint64_t r = next();
            if (r >= threshold) return r % bound;
        }
    }
};

template <typename T>
void fisher_yates(std::vector<T>& items, SplitMixRng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.below(i)]);
    }
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    return doc;
}

std::string trimmed(std::string s) {
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(s.back())) s.pop_back();
    std::size_t i = 0;
    while (i < s.size() && is_space(s[i])) ++i;
    return s.substr(i);
}

long masked_count(double ratio, long k) {
    // ceil(ratio*k) with a nudge so morally-integral products stay put
    const auto t = static_cast<long>(std::ceil(ratio * static_cast<double>(k) - 1e-12));
    return std::clamp(t, 0L, k);
}

std::vector<int> observed_columns(const ScoreMatrix& m, int row) {
    std::vector<int> cols;
    for (int n = 0; n < m.cols(); ++n) {
        if (m.observed(row, n)) cols.push_back(n);
    }
    return cols;
}

json cells_to_json(const ScoreMatrix& m, const std::vector<Cell>& cells) {
    json arr = json::array();
    for (const Cell& c : cells) {
        arr.push_back({m.models[c.model], m.benchmarks[c.benchmark]});
    }
    return arr;
}

}  // namespace

std::string default_family(const std::string& model_id) {
    std::size_t n = 0;
    while (n < model_id.size() && std::isalpha(static_cast<unsigned char>(model_id[n]))) ++n;
    return n == 0 ? model_id : model_id.substr(0, n);
}

ModelProfileMap load_model_profiles(const std::string& path) {
    const json doc = load_json_file(path);
    if (!doc.is_object()) throw ParseError(path + ": expected an object keyed by model id");

    ModelProfileMap out;
    for (const auto& [id, body] : doc.items()) {
        if (id.empty()) throw ParseError(path + ": empty model id");
        if (!body.is_object()) throw ParseError(path + ": profile for '" + id + "' is not an object");
        ModelProfile p;
        p.model_id = id;
        p.display_name = body.value("display_name", id);
        p.family = body.value("family", std::string{});
        if (p.family.empty()) p.family = default_family(id);
        p.organization = body.value("organization", std::string{});
        if (body.contains("parameter_count") && !body["parameter_count"].is_null()) {
            p.parameter_count = body["parameter_count"].get<double>();
        }
        if (!body.contains("release_date")) {
            throw ParseError(path + ": profile for '" + id + "' lacks release_date");
        }
        try {
            p.release_date = Date::parse(body["release_date"].get<std::string>());
        } catch (const Error& e) {
            throw ParseError(path + ": profile for '" + id + "': " + e.what());
        }
        for (const auto& ref : body.value("source_refs", json::array())) {
            p.source_refs.push_back(ref.get<std::string>());
        }
        for (const auto& tag : body.value("tags", json::array())) {
            p.tags.insert(tag.get<std::string>());
        }
        out.emplace(id, std::move(p));
    }
    return out;
}

BenchmarkProfileMap load_benchmark_profiles(const std::string& path) {
    const json doc = load_json_file(path);
    if (!doc.is_object()) throw ParseError(path + ": expected an object keyed by benchmark id");

    BenchmarkProfileMap out;
    for (const auto& [id, body] : doc.items()) {
        if (id.empty()) throw ParseError(path + ": empty benchmark id");
        if (!body.is_object()) throw ParseError(path + ": profile for '" + id + "' is not an object");
        BenchmarkProfile p;
        p.benchmark_id = id;
        p.display_name = body.value("display_name", id);
        p.category = body.value("category", std::string{});
        p.num_samples = body.value("num_samples", 1);
        if (p.num_samples < 1) {
            throw ParseError(path + ": benchmark '" + id + "' has num_samples < 1");
        }
        const std::string metric = body.value("metric", "accuracy");
        if (metric == "accuracy") {
            p.metric_kind = MetricKind::accuracy;
        } else if (metric == "score") {
            p.metric_kind = MetricKind::score;
        } else {
            throw ParseError(path + ": benchmark '" + id + "' has unknown metric '" + metric + "'");
        }
        p.raw_max = body.value("raw_max", 100.0);
        if (p.raw_max <= 0) {
            throw ParseError(path + ": benchmark '" + id + "' has raw_max <= 0");
        }
        for (const auto& ref : body.value("source_refs", json::array())) {
            p.source_refs.push_back(ref.get<std::string>());
        }
        out.emplace(id, std::move(p));
    }
    return out;
}

double normalize_score(double raw, const BenchmarkProfile& profile) {
    if (profile.raw_max <= 0) {
        throw ConfigError("benchmark '" + profile.benchmark_id + "' has raw_max <= 0");
    }
    return clamp_score(100.0 * raw / profile.raw_max);
}

std::vector<ScoreRecord> load_scores(const std::string& path, const ModelProfileMap& models,
                                     const BenchmarkProfileMap& benchmarks) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);

    auto fail = [&](long line, const std::string& msg) -> ParseError {
        return ParseError(path + ":" + std::to_string(line) + ": " + msg);
    };

    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw fail(1, "empty file");
    ++line_no;
    if (trimmed(line) != "model_id,benchmark_id,score") {
        throw fail(line_no, "expected header 'model_id,benchmark_id,score'");
    }

    std::vector<ScoreRecord> records;
    std::map<std::pair<std::string, std::string>, long> seen;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string row = trimmed(line);
        if (row.empty()) continue;

        std::array<std::string, 3> fields;
        std::size_t start = 0;
        for (int f = 0; f < 3; ++f) {
            const std::size_t comma = row.find(',', start);
            const bool last = (f == 2);
            if (!last && comma == std::string::npos) throw fail(line_no, "expected 3 fields");
            if (last && comma != std::string::npos) throw fail(line_no, "expected 3 fields");
            fields[f] = trimmed(row.substr(start, comma == std::string::npos ? std::string::npos
                                                                             : comma - start));
            start = comma + 1;
        }

        const std::string& model_id = fields[0];
        const std::string& benchmark_id = fields[1];
        const auto model_it = models.find(model_id);
        if (model_it == models.end()) throw fail(line_no, "unknown model '" + model_id + "'");
        const auto bench_it = benchmarks.find(benchmark_id);
        if (bench_it == benchmarks.end()) {
            throw fail(line_no, "unknown benchmark '" + benchmark_id + "'");
        }

        double raw = 0.0;
        const char* first = fields[2].data();
        const char* last = first + fields[2].size();
        const auto [ptr, ec] = std::from_chars(first, last, raw);
        if (ec != std::errc{} || ptr != last) {
            throw fail(line_no, "malformed score '" + fields[2] + "'");
        }
        if (raw < 0) throw fail(line_no, "negative score " + fields[2]);

        const auto key = std::make_pair(model_id, benchmark_id);
        if (const auto dup = seen.find(key); dup != seen.end()) {
            throw fail(line_no, "duplicate entry for (" + model_id + ", " + benchmark_id +
                                    "), first seen at line " + std::to_string(dup->second));
        }
        seen.emplace(key, line_no);

        records.push_back({model_id, benchmark_id, raw, normalize_score(raw, bench_it->second)});
    }
    return records;
}

ScoreMatrix build_matrix(const std::vector<ScoreRecord>& records) {
    if (records.empty()) throw ConfigError("no observations");

    std::set<std::string> model_ids, benchmark_ids;
    for (const ScoreRecord& r : records) {
        model_ids.insert(r.model_id);
        benchmark_ids.insert(r.benchmark_id);
    }

    ScoreMatrix m;
    m.models.assign(model_ids.begin(), model_ids.end());
    m.benchmarks.assign(benchmark_ids.begin(), benchmark_ids.end());
    m.values = Eigen::MatrixXd::Zero(m.rows(), m.cols());
    m.mask.setZero(m.rows(), m.cols());
    for (const ScoreRecord& r : records) {
        const int row = m.model_index(r.model_id);
        const int col = m.benchmark_index(r.benchmark_id);
        m.values(row, col) = r.normalized_score;
        m.mask(row, col) = 1;
    }
    return m;
}

Split temporal_masking_split(const ScoreMatrix& matrix, const ModelProfileMap& profiles,
                             Date cutoff_date, double mask_ratio, std::uint64_t seed) {
    if (mask_ratio < 0 || mask_ratio > 1) {
        throw ConfigError("mask_ratio must lie in [0,1]");
    }

    std::vector<int> post_cutoff;
    int pre_cutoff = 0;
    for (int m = 0; m < matrix.rows(); ++m) {
        const auto it = profiles.find(matrix.models[m]);
        if (it == profiles.end()) {
            throw ConfigError("model '" + matrix.models[m] + "' has no profile");
        }
        if (it->second.release_date >= cutoff_date) {
            post_cutoff.push_back(m);
        } else {
            ++pre_cutoff;
        }
    }
    if (pre_cutoff == 0 || post_cutoff.empty()) {
        throw ConfigError("cutoff " + cutoff_date.to_string() +
                          " does not partition models into non-empty old/new sets");
    }

    Split split;
    split.train = matrix;
    for (const int m : post_cutoff) {
        std::vector<int> cols = observed_columns(matrix, m);
        const long k = static_cast<long>(cols.size());
        if (k == 0) {
            split.warnings.push_back("model '" + matrix.models[m] +
                                     "' has no observed cells; skipped");
            continue;
        }
        // keep at least one train cell per test model
        const long take = std::min(masked_count(mask_ratio, k), k - 1);
        if (take <= 0) continue;
        SplitMixRng rng(derive_seed(seed, matrix.models[m]));
        fisher_yates(cols, rng);
        for (long i = 0; i < take; ++i) {
            split.train.mask(m, cols[i]) = 0;
            split.test_cells.push_back({m, cols[i]});
        }
    }
    std::sort(split.test_cells.begin(), split.test_cells.end());

    split.spec.kind = SplitKind::temporal_masking;
    split.spec.mask_ratio = mask_ratio;
    split.spec.cutoff_date = cutoff_date;
    split.spec.seed = seed;
    return split;
}

Split pattern_shift_split(const ScoreMatrix& matrix, const ModelProfileMap& model_profiles,
                          const BenchmarkProfileMap& benchmark_profiles, const Scenario& scenario,
                          std::uint64_t seed) {
    if (scenario.kind == SplitKind::temporal_masking) {
        throw ConfigError("scenario '" + scenario.name + "' must be model- or benchmark-side");
    }
    const bool model_side = scenario.kind == SplitKind::model_shift;

    std::set<int> held_out;
    if (model_side) {
        for (const std::string& id : scenario.held_out_ids) {
            const int row = matrix.model_index(id);
            if (row < 0) {
                throw ConfigError("scenario '" + scenario.name + "': model '" + id +
                                  "' has no observations");
            }
            held_out.insert(row);
        }
        if (!scenario.held_out_tags.empty()) {
            for (int m = 0; m < matrix.rows(); ++m) {
                const auto it = model_profiles.find(matrix.models[m]);
                if (it == model_profiles.end()) continue;
                for (const std::string& tag : scenario.held_out_tags) {
                    if (it->second.tags.count(tag)) {
                        held_out.insert(m);
                        break;
                    }
                }
            }
        }
        if (scenario.top_k_models > 0) {
            std::vector<std::pair<double, int>> ranked;
            for (int m = 0; m < matrix.rows(); ++m) {
                double sum = 0;
                long k = 0;
                for (int n = 0; n < matrix.cols(); ++n) {
                    if (matrix.observed(m, n)) {
                        sum += matrix.values(m, n);
                        ++k;
                    }
                }
                if (k > 0) ranked.emplace_back(sum / static_cast<double>(k), m);
            }
            std::sort(ranked.begin(), ranked.end(), [&](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first > b.first;
                return matrix.models[a.second] < matrix.models[b.second];
            });
            const auto take = std::min<std::size_t>(ranked.size(), scenario.top_k_models);
            for (std::size_t i = 0; i < take; ++i) held_out.insert(ranked[i].second);
        }
    } else {
        for (const std::string& id : scenario.held_out_ids) {
            const int col = matrix.benchmark_index(id);
            if (col < 0) {
                throw ConfigError("scenario '" + scenario.name + "': benchmark '" + id +
                                  "' has no observations");
            }
            held_out.insert(col);
        }
        if (!scenario.held_out_categories.empty()) {
            for (int n = 0; n < matrix.cols(); ++n) {
                const auto it = benchmark_profiles.find(matrix.benchmarks[n]);
                if (it != benchmark_profiles.end() &&
                    scenario.held_out_categories.count(it->second.category)) {
                    held_out.insert(n);
                }
            }
        }
    }
    if (held_out.empty()) {
        throw ConfigError("scenario '" + scenario.name + "' selects nothing to hold out");
    }
    if (static_cast<int>(held_out.size()) >= (model_side ? matrix.rows() : matrix.cols())) {
        throw ConfigError("scenario '" + scenario.name + "' holds out every " +
                          (model_side ? std::string("model") : std::string("benchmark")));
    }

    Split split;
    split.train = matrix;
    for (int m = 0; m < matrix.rows(); ++m) {
        for (int n = 0; n < matrix.cols(); ++n) {
            if (!matrix.observed(m, n)) continue;
            if (held_out.count(model_side ? m : n)) {
                split.train.mask(m, n) = 0;
                split.test_cells.push_back({m, n});
            }
        }
    }

    // Remaining in-distribution entries keep the sparsity regime of the
    // masking experiments: a per-model share is dropped from train
    // without entering the test set.
    if (scenario.in_dist_mask_ratio > 0) {
        for (int m = 0; m < matrix.rows(); ++m) {
            if (model_side && held_out.count(m)) continue;
            std::vector<int> cols;
            for (int n = 0; n < matrix.cols(); ++n) {
                if (!model_side && held_out.count(n)) continue;
                if (matrix.observed(m, n)) cols.push_back(n);
            }
            const long k = static_cast<long>(cols.size());
            const long take = masked_count(scenario.in_dist_mask_ratio, k);
            if (take <= 0) continue;
            SplitMixRng rng(derive_seed(seed, matrix.models[m]));
            fisher_yates(cols, rng);
            for (long i = 0; i < take; ++i) {
                split.train.mask(m, cols[i]) = 0;
                ++split.dropped_cells;
            }
        }
    }
    std::sort(split.test_cells.begin(), split.test_cells.end());

    split.spec.kind = scenario.kind;
    split.spec.mask_ratio = scenario.in_dist_mask_ratio;
    split.spec.seed = seed;
    for (const int idx : held_out) {
        if (model_side) {
            split.spec.held_out_models.insert(matrix.models[idx]);
        } else {
            split.spec.held_out_benchmarks.insert(matrix.benchmarks[idx]);
        }
    }
    return split;
}

void save_split(const Split& split, const std::string& path) {
    json spec;
    spec["kind"] = to_string(split.spec.kind);
    spec["mask_ratio"] = split.spec.mask_ratio;
    if (split.spec.cutoff_date) spec["cutoff_date"] = split.spec.cutoff_date->to_string();
    spec["held_out_models"] = split.spec.held_out_models;
    spec["held_out_benchmarks"] = split.spec.held_out_benchmarks;
    spec["seed"] = split.spec.seed;

    std::vector<Cell> train_cells = split.train.observed_cells();
    json doc;
    doc["spec"] = std::move(spec);
    doc["train"] = cells_to_json(split.train, train_cells);
    doc["test"] = cells_to_json(split.train, split.test_cells);
    doc["dropped_cells"] = split.dropped_cells;
    doc["warnings"] = split.warnings;

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << doc.dump(2) << '\n';
}

Split load_split(const std::string& path, const ScoreMatrix& full_matrix) {
    const json doc = load_json_file(path);

    auto read_cells = [&](const char* key) {
        std::vector<Cell> cells;
        for (const auto& entry : doc.at(key)) {
            const auto model_id = entry.at(0).get<std::string>();
            const auto benchmark_id = entry.at(1).get<std::string>();
            const int m = full_matrix.model_index(model_id);
            const int n = full_matrix.benchmark_index(benchmark_id);
            if (m < 0 || n < 0 || !full_matrix.observed(m, n)) {
                throw ConfigError(path + ": cell (" + model_id + ", " + benchmark_id +
                                  ") is not observed in the matrix");
            }
            cells.push_back({m, n});
        }
        return cells;
    };

    Split split;
    split.train = full_matrix;
    split.train.mask.setZero(full_matrix.rows(), full_matrix.cols());
    for (const Cell& c : read_cells("train")) split.train.mask(c.model, c.benchmark) = 1;
    split.test_cells = read_cells("test");
    std::sort(split.test_cells.begin(), split.test_cells.end());
    for (const Cell& c : split.test_cells) {
        if (split.train.observed(c.model, c.benchmark)) {
            throw ConfigError(path + ": cell (" + full_matrix.models[c.model] + ", " +
                              full_matrix.benchmarks[c.benchmark] + ") is in both train and test");
        }
    }
    split.dropped_cells = doc.value("dropped_cells", 0L);
    for (const auto& w : doc.value("warnings", json::array())) {
        split.warnings.push_back(w.get<std::string>());
    }

    const json& spec = doc.at("spec");
    split.spec.kind = split_kind_from_string(spec.at("kind").get<std::string>());
    split.spec.mask_ratio = spec.value("mask_ratio", 0.0);
    if (spec.contains("cutoff_date")) {
        split.spec.cutoff_date = Date::parse(spec["cutoff_date"].get<std::string>());
    }
    for (const auto& id : spec.value("held_out_models", json::array())) {
        split.spec.held_out_models.insert(id.get<std::string>());
    }
    for (const auto& id : spec.value("held_out_benchmarks", json::array())) {
        split.spec.held_out_benchmarks.insert(id.get<std::string>());
    }
    split.spec.seed = spec.value("seed", 0ULL);
    return split;
}

std::vector<ScoreRef> family_members(const MemoryState& memory, const std::string& model_id,
                                     const std::string& benchmark_id) {
    const ModelProfile& target = memory.model(model_id);
    const int col = memory.matrix.benchmark_index(benchmark_id);
    if (col < 0) throw ConfigError("unknown benchmark '" + benchmark_id + "'");

    std::vector<ScoreRef> refs;
    for (int m = 0; m < memory.matrix.rows(); ++m) {
        const std::string& other_id = memory.matrix.models[m];
        if (other_id == model_id) continue;
        const auto it = memory.model_profiles.find(other_id);
        if (it == memory.model_profiles.end() || it->second.family != target.family) continue;
        if (memory.matrix.observed(m, col)) {
            refs.push_back({other_id, memory.matrix.values(m, col)});
        }
    }
    return refs;
}

std::vector<std::string> similar_models(const ScoreMatrix& matrix, const std::string& model_id,
                                        int k, const features::FeatureStore* store) {
    if (k < 1) throw ConfigError("similar_models requires K >= 1");
    const int target = matrix.model_index(model_id);
    if (target < 0) throw ConfigError("unknown model '" + model_id + "'");

    std::vector<std::pair<double, std::string>> by_rmse;
    for (int m = 0; m < matrix.rows(); ++m) {
        if (m == target) continue;
        double sq = 0;
        long shared = 0;
        for (int n = 0; n < matrix.cols(); ++n) {
            if (matrix.observed(target, n) && matrix.observed(m, n)) {
                const double d = matrix.values(target, n) - matrix.values(m, n);
                sq += d * d;
                ++shared;
            }
        }
        if (shared > 0) {
            by_rmse.emplace_back(std::sqrt(sq / static_cast<double>(shared)), matrix.models[m]);
        }
    }

    std::vector<std::string> out;
    if (!by_rmse.empty()) {
        std::sort(by_rmse.begin(), by_rmse.end());
        for (std::size_t i = 0; i < by_rmse.size() && out.size() < static_cast<std::size_t>(k);
             ++i) {
            out.push_back(by_rmse[i].second);
        }
        return out;
    }

    if (store == nullptr) return out;
    const features::FeatureLookup anchor = store->lookup(model_id);
    if (!anchor.found || anchor.degenerate) return out;

    std::vector<std::pair<double, std::string>> by_cosine;
    for (int m = 0; m < matrix.rows(); ++m) {
        if (m == target) continue;
        const features::FeatureLookup other = store->lookup(matrix.models[m]);
        if (!other.found || other.degenerate) continue;
        // vectors are unit-normalized at read, so the dot product is the cosine
        by_cosine.emplace_back(-anchor.values.dot(other.values), matrix.models[m]);
    }
    std::sort(by_cosine.begin(), by_cosine.end());
    for (std::size_t i = 0; i < by_cosine.size() && out.size() < static_cast<std::size_t>(k); ++i) {
        out.push_back(by_cosine[i].second);
    }
    return out;
}

}  // namespace star::corpus
