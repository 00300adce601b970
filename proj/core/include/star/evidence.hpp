#pragma once
// Evidence retrieval: a pluggable backend (fixture corpus by default)
// feeding structured bundles per model or benchmark, with a release
// date window, score-leakage filtering, and a content-addressed cache.

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "star/types.hpp"

namespace star::evidence {

enum class Source : std::uint8_t { search, arxiv, model_hub, fixture };

std::string to_string(Source source);
Source source_from_string(const std::string& name);  // throws ParseError

struct EvidenceDoc {
    Source source = Source::fixture;
    std::string url;
    std::optional<Date> published;
    std::string text;  // non-empty

    friend bool operator==(const EvidenceDoc&, const EvidenceDoc&) = default;
};

// Docs grouped into schema slots. Model retrieval fills the first
// three, benchmark retrieval the last three; notes carry flags and
// per-source error strings instead of hard failures.
struct EvidenceBundle {
    std::vector<EvidenceDoc> technical_summary;
    std::vector<EvidenceDoc> base_model_analysis;
    std::vector<EvidenceDoc> community_feedback;

    std::vector<EvidenceDoc> task_description;
    std::vector<EvidenceDoc> protocol;
    std::vector<EvidenceDoc> subcategories;

    std::vector<std::string> notes;
    long leakage_removals = 0;  // sentences dropped by the filter

    bool empty() const;
    std::vector<const EvidenceDoc*> all_docs() const;

    std::string to_json() const;
    static EvidenceBundle from_json(const std::string& text);  // throws ParseError
};

struct RetrieverConfig {
    std::string fixture_dir;  // backend location; empty = no backend
    std::string cache_dir;    // empty = caching off
    int window_days = 8;      // model docs kept when published - release in [0, window]
    std::vector<std::string> leakage_patterns;  // benchmark names to scrub

    void validate() const;  // throws ConfigError
};

// Raw doc source; fetch may throw TransportError when unreachable and
// should append per-file problems to notes instead of failing.
class EvidenceBackend {
public:
    virtual ~EvidenceBackend() = default;
    virtual std::vector<EvidenceDoc> fetch(const std::string& entity_id,
                                           std::vector<std::string>& notes) = 0;
    virtual std::string name() const = 0;
};

// Directory of *.json files, each one doc or an array of docs shaped
// {source, url, published?, text, entity_id}.
std::unique_ptr<EvidenceBackend> make_fixture_backend(const std::string& dir);

// Sentence-level score scrubbing. A sentence is dropped when it holds
// a benchmark name with a digit within ten tokens either side, or a
// digit within sixty characters after the name on the same line;
// repeated until stable, so the filter is idempotent.
struct FilterResult {
    std::string text;
    int removed = 0;  // sentences
};
FilterResult leakage_filter(const std::string& text, const std::vector<std::string>& names);

// Gather docs for the entity, apply the date window (models only:
// published - release_date in [0, window_days]; undated docs are kept
// and noted), scrub leakage, and group into schema slots. A backend
// failure yields a degraded bundle with the error in notes.
EvidenceBundle retrieve_model_evidence(const ModelProfile& profile, const RetrieverConfig& config);
EvidenceBundle retrieve_model_evidence(const ModelProfile& profile, const RetrieverConfig& config,
                                       EvidenceBackend& backend);

// Benchmarks are static documents: no date window, same scrubbing.
EvidenceBundle retrieve_benchmark_evidence(const BenchmarkProfile& profile,
                                           const RetrieverConfig& config);
EvidenceBundle retrieve_benchmark_evidence(const BenchmarkProfile& profile,
                                           const RetrieverConfig& config,
                                           EvidenceBackend& backend);

// Content-addressed bundle cache. Keys combine the entity id with a
// hash of the filter-relevant configuration; corrupt entries read as
// misses. Writers are serialized, readers are not.
enum class CacheLookup : std::uint8_t { hit, miss, corrupt };

std::string cache_key(const std::string& entity_id, const RetrieverConfig& config);
CacheLookup cache_get(const std::string& cache_dir, const std::string& key, EvidenceBundle& out);
void cache_put(const std::string& cache_dir, const std::string& key, const EvidenceBundle& bundle);

}  // namespace star::evidence
