#include "star/evidence.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <utility>

#include "json.hpp"

namespace star::evidence {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }

bool all_whitespace(const std::string& text) {
    return std::all_of(text.begin(), text.end(), [](char c) { return is_space(c); });
}

using Span = std::pair<std::size_t, std::size_t>;

// Sentences end at ./!/? followed by whitespace or end-of-text, and at
// newlines; the terminator plus trailing whitespace stays attached so
// kept sentences re-join verbatim.
std::vector<Span> sentence_spans(const std::string& text) {
    std::vector<Span> spans;
    const std::size_t n = text.size();
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < n) {
        const char c = text[i];
        const bool stop = c == '\n' || ((c == '.' || c == '!' || c == '?') &&
                                        (i + 1 == n || is_space(text[i + 1])));
        if (!stop) {
            ++i;
            continue;
        }
        std::size_t end = i + 1;
        while (end < n && is_space(text[end])) ++end;
        spans.emplace_back(start, end);
        start = end;
        i = end;
    }
    if (start < n) spans.emplace_back(start, n);
    return spans;
}

std::vector<Span> token_spans(const std::string& text) {
    std::vector<Span> spans;
    const std::size_t n = text.size();
    std::size_t i = 0;
    while (i < n) {
        while (i < n && is_space(text[i])) ++i;
        if (i >= n) break;
        const std::size_t start = i;
        while (i < n && !is_space(text[i])) ++i;
        spans.emplace_back(start, i);
    }
    return spans;
}

// Index of the span covering pos (spans sorted, non-overlapping).
std::size_t span_index(const std::vector<Span>& spans, std::size_t pos) {
    std::size_t lo = 0;
    std::size_t hi = spans.size();
    while (lo + 1 < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (spans[mid].first <= pos) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;
}

constexpr int kTokenWindow = 10;
constexpr std::size_t kCharWindow = 60;

// One removal pass; returns the number of sentences dropped.
int filter_pass(std::string& text, const std::vector<std::string>& names) {
    const std::vector<Span> sentences = sentence_spans(text);
    if (sentences.empty()) return 0;
    const std::vector<Span> tokens = token_spans(text);

    std::vector<char> token_digit(tokens.size(), 0);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        for (std::size_t p = tokens[t].first; p < tokens[t].second; ++p) {
            if (is_digit(text[p])) {
                token_digit[t] = 1;
                break;
            }
        }
    }

    auto triggered = [&](std::size_t pos, std::size_t len) {
        if (!tokens.empty()) {
            const std::size_t ti = span_index(tokens, pos);
            const std::size_t lo = ti >= kTokenWindow ? ti - kTokenWindow : 0;
            const std::size_t hi = std::min(tokens.size() - 1,
                                            ti + static_cast<std::size_t>(kTokenWindow));
            for (std::size_t j = lo; j <= hi; ++j) {
                if (token_digit[j]) return true;
            }
        }
        const std::size_t from = pos + len;
        const std::size_t to = std::min(text.size(), from + kCharWindow + 1);
        for (std::size_t p = from; p < to && text[p] != '\n'; ++p) {
            if (is_digit(text[p])) return true;
        }
        return false;
    };

    std::vector<char> drop(sentences.size(), 0);
    for (const std::string& name : names) {
        if (name.empty()) continue;
        std::size_t pos = text.find(name);
        while (pos != std::string::npos) {
            if (triggered(pos, name.size())) drop[span_index(sentences, pos)] = 1;
            pos = text.find(name, pos + 1);
        }
    }

    int removed = 0;
    std::string kept;
    kept.reserve(text.size());
    for (std::size_t s = 0; s < sentences.size(); ++s) {
        if (drop[s]) {
            ++removed;
        } else {
            kept.append(text, sentences[s].first, sentences[s].second - sentences[s].first);
        }
    }
    if (removed > 0) text = std::move(kept);
    return removed;
}

json doc_to_json(const EvidenceDoc& doc) {
    json out;
    out["source"] = to_string(doc.source);
    out["url"] = doc.url;
    out["published"] = doc.published ? json(doc.published->to_string()) : json(nullptr);
    out["text"] = doc.text;
    return out;
}

EvidenceDoc doc_from_json(const json& j) {
    EvidenceDoc doc;
    doc.source = source_from_string(j.at("source").get<std::string>());
    doc.url = j.value("url", std::string());
    if (j.contains("published") && !j.at("published").is_null()) {
        const std::string raw = j.at("published").get<std::string>();
        if (!raw.empty()) doc.published = Date::parse(raw);
    }
    doc.text = j.at("text").get<std::string>();
    if (doc.text.empty()) throw ParseError("evidence doc has empty text");
    return doc;
}

json docs_to_json(const std::vector<EvidenceDoc>& docs) {
    json arr = json::array();
    for (const EvidenceDoc& doc : docs) arr.push_back(doc_to_json(doc));
    return arr;
}

std::vector<EvidenceDoc> docs_from_json(const json& arr) {
    std::vector<EvidenceDoc> docs;
    for (const json& j : arr) docs.push_back(doc_from_json(j));
    return docs;
}

class FixtureBackend : public EvidenceBackend {
public:
    explicit FixtureBackend(std::string dir) : dir_(std::move(dir)) {}

    std::vector<EvidenceDoc> fetch(const std::string& entity_id,
                                   std::vector<std::string>& notes) override {
        std::error_code ec;
        if (dir_.empty() || !fs::is_directory(dir_, ec)) {
            throw TransportError("fixture directory '" + dir_ + "' is not readable");
        }
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir_, ec)) {
            if (entry.path().extension() == ".json") files.push_back(entry.path());
        }
        if (ec) throw TransportError("cannot list fixture directory '" + dir_ + "'");
        std::sort(files.begin(), files.end());

        std::vector<EvidenceDoc> docs;
        for (const fs::path& file : files) {
            std::ifstream in(file, std::ios::binary);
            if (!in) {
                notes.push_back("fixture " + file.filename().string() + ": unreadable");
                continue;
            }
            const std::string raw((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
            try {
                const json parsed = json::parse(raw);
                const json items = parsed.is_array() ? parsed : json::array({parsed});
                for (const json& item : items) {
                    if (item.value("entity_id", std::string()) != entity_id) continue;
                    docs.push_back(doc_from_json(item));
                }
            } catch (const std::exception& e) {
                notes.push_back("fixture " + file.filename().string() + ": " + e.what());
            }
        }
        return docs;
    }

    std::string name() const override { return "fixture:" + dir_; }

private:
    std::string dir_;
};

fs::path cache_path(const std::string& cache_dir, const std::string& key) {
    return fs::path(cache_dir) / (hex64(fnv1a64(key)) + ".json");
}

// Shared retrieval core; model bundles get the date window and the
// model-side schema slots, benchmark bundles the benchmark-side ones.
EvidenceBundle retrieve_common(const std::string& entity_id, const std::optional<Date>& release,
                               const RetrieverConfig& config, EvidenceBackend& backend,
                               bool model_slots) {
    config.validate();

    const std::string key = cache_key(entity_id, config);
    EvidenceBundle bundle;
    if (!config.cache_dir.empty()) {
        EvidenceBundle cached;
        switch (cache_get(config.cache_dir, key, cached)) {
            case CacheLookup::hit: return cached;
            case CacheLookup::corrupt:
                bundle.notes.push_back("cache: corrupt entry ignored for " + key);
                break;
            case CacheLookup::miss: break;
        }
    }

    bool degraded = false;
    std::vector<EvidenceDoc> docs;
    try {
        docs = backend.fetch(entity_id, bundle.notes);
    } catch (const Error& e) {
        bundle.notes.push_back("degraded: " + backend.name() + ": " + e.what());
        degraded = true;
    }

    for (EvidenceDoc& doc : docs) {
        if (release && doc.published) {
            const int age = days_between(*release, *doc.published);
            if (age < 0 || age > config.window_days) continue;
        } else if (release && !doc.published) {
            bundle.notes.push_back("undated: " + doc.url);
        }

        FilterResult filtered = leakage_filter(doc.text, config.leakage_patterns);
        bundle.leakage_removals += filtered.removed;
        if (filtered.text.empty() || all_whitespace(filtered.text)) {
            bundle.notes.push_back("leakage-dropped: " + doc.url);
            continue;
        }
        doc.text = std::move(filtered.text);

        if (model_slots) {
            switch (doc.source) {
                case Source::arxiv: bundle.base_model_analysis.push_back(std::move(doc)); break;
                case Source::search: bundle.community_feedback.push_back(std::move(doc)); break;
                default: bundle.technical_summary.push_back(std::move(doc)); break;
            }
        } else {
            switch (doc.source) {
                case Source::arxiv: bundle.protocol.push_back(std::move(doc)); break;
                case Source::search: bundle.subcategories.push_back(std::move(doc)); break;
                default: bundle.task_description.push_back(std::move(doc)); break;
            }
        }
    }

    if (bundle.empty()) bundle.notes.push_back("empty");
    if (!degraded && !config.cache_dir.empty()) cache_put(config.cache_dir, key, bundle);
    return bundle;
}

}  // namespace

std::string to_string(Source source) {
    switch (source) {
        case Source::search: return "search";
        case Source::arxiv: return "arxiv";
        case Source::model_hub: return "model_hub";
        case Source::fixture: return "fixture";
    }
    return "unknown";
}

Source source_from_string(const std::string& name) {
    if (name == "search") return Source::search;
    if (name == "arxiv") return Source::arxiv;
    if (name == "model_hub") return Source::model_hub;
    if (name == "fixture") return Source::fixture;
    throw ParseError("unknown evidence source '" + name + "'");
}

bool EvidenceBundle::empty() const {
    return technical_summary.empty() && base_model_analysis.empty() &&
           community_feedback.empty() && task_description.empty() && protocol.empty() &&
           subcategories.empty();
}

std::vector<const EvidenceDoc*> EvidenceBundle::all_docs() const {
    std::vector<const EvidenceDoc*> out;
    for (const auto* slot : {&technical_summary, &base_model_analysis, &community_feedback,
                             &task_description, &protocol, &subcategories}) {
        for (const EvidenceDoc& doc : *slot) out.push_back(&doc);
    }
    return out;
}

std::string EvidenceBundle::to_json() const {
    json doc;
    doc["technical_summary"] = docs_to_json(technical_summary);
    doc["base_model_analysis"] = docs_to_json(base_model_analysis);
    doc["community_feedback"] = docs_to_json(community_feedback);
    doc["task_description"] = docs_to_json(task_description);
    doc["protocol"] = docs_to_json(protocol);
    doc["subcategories"] = docs_to_json(subcategories);
    doc["notes"] = notes;
    doc["leakage_removals"] = leakage_removals;
    return doc.dump();
}

EvidenceBundle EvidenceBundle::from_json(const std::string& text) {
    try {
        const json doc = json::parse(text);
        EvidenceBundle bundle;
        bundle.technical_summary = docs_from_json(doc.at("technical_summary"));
        bundle.base_model_analysis = docs_from_json(doc.at("base_model_analysis"));
        bundle.community_feedback = docs_from_json(doc.at("community_feedback"));
        bundle.task_description = docs_from_json(doc.at("task_description"));
        bundle.protocol = docs_from_json(doc.at("protocol"));
        bundle.subcategories = docs_from_json(doc.at("subcategories"));
        bundle.notes = doc.at("notes").get<std::vector<std::string>>();
        bundle.leakage_removals = doc.at("leakage_removals").get<long>();
        return bundle;
    } catch (const ParseError&) {
        throw;
    } catch (const std::exception& e) {
        throw ParseError(std::string("bad evidence bundle: ") + e.what());
    }
}

void RetrieverConfig::validate() const {
    if (window_days < 0) throw ConfigError("window_days must be >= 0");
}

std::unique_ptr<EvidenceBackend> make_fixture_backend(const std::string& dir) {
    return std::make_unique<FixtureBackend>(dir);
}

FilterResult leakage_filter(const std::string& text, const std::vector<std::string>& names) {
    FilterResult out{text, 0};
    if (text.empty() || names.empty()) return out;
    for (;;) {
        const int removed = filter_pass(out.text, names);
        if (removed == 0) break;
        out.removed += removed;
    }
    return out;
}

EvidenceBundle retrieve_model_evidence(const ModelProfile& profile,
                                       const RetrieverConfig& config) {
    const auto backend = make_fixture_backend(config.fixture_dir);
    return retrieve_model_evidence(profile, config, *backend);
}

EvidenceBundle retrieve_model_evidence(const ModelProfile& profile, const RetrieverConfig& config,
                                       EvidenceBackend& backend) {
    return retrieve_common(profile.model_id, profile.release_date, config, backend, true);
}

EvidenceBundle retrieve_benchmark_evidence(const BenchmarkProfile& profile,
                                           const RetrieverConfig& config) {
    const auto backend = make_fixture_backend(config.fixture_dir);
    return retrieve_benchmark_evidence(profile, config, *backend);
}

EvidenceBundle retrieve_benchmark_evidence(const BenchmarkProfile& profile,
                                           const RetrieverConfig& config,
                                           EvidenceBackend& backend) {
    return retrieve_common(profile.benchmark_id, std::nullopt, config, backend, false);
}

std::string cache_key(const std::string& entity_id, const RetrieverConfig& config) {
    std::string blob = std::to_string(config.window_days);
    blob.push_back('\x1f');
    blob += config.fixture_dir;
    for (const std::string& pattern : config.leakage_patterns) {
        blob.push_back('\x1f');
        blob += pattern;
    }
    return entity_id + "@" + hex64(fnv1a64(blob));
}

CacheLookup cache_get(const std::string& cache_dir, const std::string& key, EvidenceBundle& out) {
    std::ifstream in(cache_path(cache_dir, key), std::ios::binary);
    if (!in) return CacheLookup::miss;
    const std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        const json doc = json::parse(raw);
        if (doc.at("key").get<std::string>() != key) return CacheLookup::corrupt;
        out = EvidenceBundle::from_json(doc.at("bundle").dump());
        return CacheLookup::hit;
    } catch (const std::exception&) {
        return CacheLookup::corrupt;
    }
}

void cache_put(const std::string& cache_dir, const std::string& key,
               const EvidenceBundle& bundle) {
    if (cache_dir.empty()) throw ConfigError("cache directory not set");
    fs::create_directories(cache_dir);

    json doc;
    doc["key"] = key;
    doc["bundle"] = json::parse(bundle.to_json());
    const std::string payload = doc.dump();

    const fs::path target = cache_path(cache_dir, key);
    const fs::path tmp = target.string() + ".tmp";
    static std::mutex write_mutex;
    std::scoped_lock lock(write_mutex);
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    }
    fs::rename(tmp, target);
}

}  // namespace star::evidence
