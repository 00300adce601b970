#include "star/reasoning.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>

#include "json.hpp"

namespace star::reasoning {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kFamilySystem =
    "You analyze benchmark score histories within a model family.";
constexpr const char* kCrossSystem =
    "You compare a score estimate against capability-similar models.";
constexpr const char* kAggregateSystem =
    "You merge statistical and analyst signals into a bounded correction.";

constexpr const char* kFamilyTemplate = R"(You are estimating how a model will score on a benchmark.
Statistical expectation: {{r_hat}} (posterior sd {{sigma}}).

Family history on this benchmark:
{{family_scores}}

Background evidence:
{{evidence}}

Review the family trajectory and the evidence, identify reference
scores, and explain how the target model's lineage should move them.
Reply with strict JSON: {"findings": string, "cited_scores":
[{"model_id": string, "score": number}], "flags": [string]}.
)";

constexpr const char* kCrossTemplate = R"(You are sanity-checking a benchmark score estimate.
Statistical expectation: {{r_hat}}.

Scores of capability-similar models on this benchmark:
{{neighbor_scores}}

Compare the expectation against these models and flag likely over- or
under-estimation. Reply with strict JSON: {"findings": string,
"cited_scores": [{"model_id": string, "score": number}], "flags":
[string]}.
)";

constexpr const char* kAggregateTemplate = R"(You are combining a statistical expectation with analyst reports.
Expectation: {{r_hat}} (posterior sd {{sigma}}).

Family analysis (flags: {{family_flags}}):
{{family_findings}}
Referenced family scores:
{{family_scores}}

Cross-model analysis (flags: {{cross_flags}}):
{{cross_findings}}
Referenced similar-model scores:
{{neighbor_scores}}

Propose a bounded correction to the expectation. The correction must
stay within +/-{{delta_cap}} points. Reply with strict JSON: {"delta":
number, "confidence": number, "explanation": string} with confidence
in [0, 1].
)";

constexpr const char* kSchemaReminder =
    "\n\nYour previous reply was not the required JSON. Reply with exactly "
    "{\"delta\": number, \"confidence\": number, \"explanation\": string} "
    "and nothing else.";

std::string load_template(const ReasoningConfig& config, const std::string& name,
                          const char* fallback) {
    if (config.template_dir.empty()) return fallback;
    const fs::path path = fs::path(config.template_dir) / (name + ".txt");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("prompt template '" + path.string() + "' is missing");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string render_scores(const std::vector<llm::ScoreCitation>& scores) {
    if (scores.empty()) return "none";
    std::string out;
    for (const llm::ScoreCitation& s : scores) {
        out += "- " + s.model_id + ": " + format_number(s.score) + "\n";
    }
    out.pop_back();
    return out;
}

std::string render_flags(const std::set<std::string>& flags) {
    if (flags.empty()) return "none";
    std::string out;
    for (const std::string& flag : flags) {
        if (!out.empty()) out += ", ";
        out += flag;
    }
    return out;
}

std::string render_evidence(const evidence::EvidenceBundle& bundle) {
    if (bundle.empty()) return "none";
    std::string out;
    for (const evidence::EvidenceDoc* doc : bundle.all_docs()) {
        if (!out.empty()) out += "\n";
        out += "[" + to_string(doc->source) + "] " + doc->text;
    }
    return out;
}

std::optional<std::string> complete_with_retry(llm::LlmClient& client,
                                               const llm::LlmRequest& request, int max_retries) {
    const int attempts = std::max(1, max_retries + 1);
    for (int attempt = 0; attempt < attempts; ++attempt) {
        try {
            return client.complete(request);
        } catch (const TransportError&) {
        }
    }
    return std::nullopt;
}

void write_transcript(const ReasoningConfig& config, const std::string& step,
                      const llm::LlmRequest& request, const std::string& reply,
                      const std::string& backend) {
    if (config.transcript_dir.empty()) return;
    fs::create_directories(config.transcript_dir);
    json doc;
    doc["step"] = step;
    doc["system"] = request.system;
    doc["prompt"] = request.prompt;
    doc["reply"] = reply;
    doc["backend"] = backend;
    const std::string stem =
        config.transcript_tag.empty() ? step : config.transcript_tag + "-" + step;
    std::ofstream out(fs::path(config.transcript_dir) / (stem + ".json"),
                      std::ios::binary | std::ios::trunc);
    const std::string payload = doc.dump(2);
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
}

bool parse_analysis_reply(const std::string& raw, AnalysisReport& report) {
    json doc;
    try {
        doc = json::parse(raw);
    } catch (const json::parse_error&) {
        return false;
    }
    if (!doc.is_object()) return false;
    try {
        report.findings = doc.value("findings", std::string());
        for (const json& cite : doc.value("cited_scores", json::array())) {
            report.cited_scores.push_back(
                {cite.at("model_id").get<std::string>(), cite.at("score").get<double>()});
        }
        for (const json& flag : doc.value("flags", json::array())) {
            report.flags.insert(flag.get<std::string>());
        }
    } catch (const std::exception&) {
        return false;
    }
    return true;
}

// Keep only citations whose id and printed score both appear in the
// provided prompt context.
void validate_citations(AnalysisReport& report,
                        const std::vector<llm::ScoreCitation>& provided) {
    std::vector<llm::ScoreCitation> kept;
    for (const llm::ScoreCitation& cite : report.cited_scores) {
        const bool known = std::any_of(
            provided.begin(), provided.end(), [&](const llm::ScoreCitation& p) {
                return p.model_id == cite.model_id &&
                       format_number(p.score) == format_number(cite.score);
            });
        if (known) {
            kept.push_back(cite);
        } else {
            report.flags.insert("hallucination");
        }
    }
    report.cited_scores = std::move(kept);
}

AnalysisReport run_analysis(AnalysisStep step, llm::LlmRequest request,
                            const std::vector<llm::ScoreCitation>& provided,
                            llm::LlmClient& client, const ReasoningConfig& config) {
    AnalysisReport report;
    report.step = step;

    const std::string step_name = to_string(step);
    const std::optional<std::string> reply =
        complete_with_retry(client, request, config.max_retries);
    if (!reply) {
        report.findings = "analysis unavailable";
        report.flags.insert("degraded");
    } else {
        write_transcript(config, step_name, request, *reply, client.backend_name());
        if (!parse_analysis_reply(*reply, report)) {
            report.findings = *reply;
            report.flags.insert("unstructured");
        }
        validate_citations(report, provided);
    }

    if (provided.empty()) {
        report.flags.insert(step == AnalysisStep::family ? "no_family" : "no_neighbors");
    }
    return report;
}

std::string hallucination_key(double value) { return format_number(std::fabs(value)); }

}  // namespace

std::string to_string(AnalysisStep step) {
    switch (step) {
        case AnalysisStep::family: return "family";
        case AnalysisStep::cross_model: return "cross_model";
    }
    return "unknown";
}

void ReasoningConfig::validate() const {
    if (delta_cap < 0) throw ConfigError("delta_cap must be >= 0");
    if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(text.size());
    std::size_t pos = 0;
    while (pos < text.size()) {
        const std::size_t open = text.find("{{", pos);
        if (open == std::string::npos) {
            out.append(text, pos, text.size() - pos);
            break;
        }
        out.append(text, pos, open - pos);
        const std::size_t close = text.find("}}", open + 2);
        if (close == std::string::npos) {
            throw ConfigError("unterminated placeholder in template");
        }
        const std::string key = text.substr(open + 2, close - open - 2);
        const auto it = values.find(key);
        if (it == values.end()) throw ConfigError("template placeholder '" + key + "' unknown");
        out += it->second;
        pos = close + 2;
    }
    return out;
}

AnalysisReport intra_family_analysis(double r_hat, double sigma,
                                     const evidence::EvidenceBundle& model_evidence,
                                     const std::vector<llm::ScoreCitation>& family_scores,
                                     llm::LlmClient& client, const ReasoningConfig& config) {
    config.validate();
    llm::LlmRequest request;
    request.kind = llm::RequestKind::family_analysis;
    request.system = kFamilySystem;
    request.r_hat = r_hat;
    request.sigma = sigma;
    request.family_scores = family_scores;
    request.prompt = render_template(load_template(config, "family", kFamilyTemplate),
                                     {{"r_hat", format_number(r_hat)},
                                      {"sigma", format_number(sigma)},
                                      {"family_scores", render_scores(family_scores)},
                                      {"evidence", render_evidence(model_evidence)}});
    return run_analysis(AnalysisStep::family, std::move(request), family_scores, client, config);
}

AnalysisReport cross_model_comparison(double r_hat,
                                      const std::vector<llm::ScoreCitation>& neighbor_scores,
                                      llm::LlmClient& client, const ReasoningConfig& config) {
    config.validate();
    llm::LlmRequest request;
    request.kind = llm::RequestKind::cross_model_analysis;
    request.system = kCrossSystem;
    request.r_hat = r_hat;
    request.neighbor_scores = neighbor_scores;
    request.prompt = render_template(load_template(config, "cross_model", kCrossTemplate),
                                     {{"r_hat", format_number(r_hat)},
                                      {"neighbor_scores", render_scores(neighbor_scores)}});
    return run_analysis(AnalysisStep::cross_model, std::move(request), neighbor_scores, client,
                        config);
}

Adjustment aggregate(double r_hat, double sigma, const AnalysisReport& family_report,
                     const AnalysisReport& cross_report, llm::LlmClient& client,
                     const ReasoningConfig& config) {
    config.validate();
    if (family_report.step != AnalysisStep::family ||
        cross_report.step != AnalysisStep::cross_model) {
        throw ConfigError("aggregate needs one family report and one cross-model report");
    }

    Adjustment out;
    if (family_report.cited_scores.empty() && cross_report.cited_scores.empty()) {
        out.explanation = "no validated references; expectation kept";
        return out;
    }
    for (const llm::ScoreCitation& cite : family_report.cited_scores) {
        out.evidence_refs.push_back("family:" + cite.model_id);
    }
    for (const llm::ScoreCitation& cite : cross_report.cited_scores) {
        out.evidence_refs.push_back("neighbor:" + cite.model_id);
    }

    llm::LlmRequest request;
    request.kind = llm::RequestKind::aggregate;
    request.system = kAggregateSystem;
    request.r_hat = r_hat;
    request.sigma = sigma;
    request.family_scores = family_report.cited_scores;
    request.neighbor_scores = cross_report.cited_scores;
    request.prompt = render_template(
        load_template(config, "aggregate", kAggregateTemplate),
        {{"r_hat", format_number(r_hat)},
         {"sigma", format_number(sigma)},
         {"family_flags", render_flags(family_report.flags)},
         {"family_findings",
          family_report.findings.empty() ? std::string("none") : family_report.findings},
         {"family_scores", render_scores(family_report.cited_scores)},
         {"cross_flags", render_flags(cross_report.flags)},
         {"cross_findings",
          cross_report.findings.empty() ? std::string("none") : cross_report.findings},
         {"neighbor_scores", render_scores(cross_report.cited_scores)},
         {"delta_cap", format_number(config.delta_cap)}});

    auto fail = [&] {
        out.delta = 0;
        out.confidence = 0;
        out.explanation = "aggregation failed";
        out.evidence_refs.push_back("aggregation_failed");
        return out;
    };

    // one shot plus one schema-repair re-prompt
    bool parsed = false;
    double delta = 0;
    double confidence = 0;
    std::string explanation;
    for (int round = 0; round < 2 && !parsed; ++round) {
        if (round == 1) request.prompt += kSchemaReminder;
        const std::optional<std::string> reply =
            complete_with_retry(client, request, config.max_retries);
        if (!reply) return fail();
        write_transcript(config, round == 0 ? "aggregate" : "aggregate-repair", request, *reply,
                         client.backend_name());
        try {
            const json doc = json::parse(*reply);
            delta = doc.at("delta").get<double>();
            confidence = doc.at("confidence").get<double>();
            explanation = doc.value("explanation", std::string());
            parsed = true;
        } catch (const std::exception&) {
        }
    }
    if (!parsed) return fail();

    out.delta = std::clamp(delta, -config.delta_cap, config.delta_cap);
    out.confidence = std::clamp(confidence, 0.0, 1.0);
    out.explanation = std::move(explanation);

    // every figure in the explanation must come from the prompt context
    std::set<std::string> allowed = {hallucination_key(r_hat), hallucination_key(sigma),
                                     hallucination_key(config.delta_cap),
                                     hallucination_key(out.delta),
                                     hallucination_key(out.confidence)};
    allowed.insert(hallucination_key(r_hat + out.delta));
    allowed.insert(hallucination_key(r_hat + out.confidence * out.delta));
    for (const llm::ScoreCitation& cite : family_report.cited_scores) {
        allowed.insert(hallucination_key(cite.score));
    }
    for (const llm::ScoreCitation& cite : cross_report.cited_scores) {
        allowed.insert(hallucination_key(cite.score));
    }
    for (const double value : extract_numbers(out.explanation)) {
        if (allowed.count(hallucination_key(value)) == 0) {
            out.explanation = "explanation withheld (cited unverifiable figures)";
            out.evidence_refs.push_back("hallucination_stripped");
            break;
        }
    }
    return out;
}

double final_prediction(double r_hat, const Adjustment& adjustment) {
    return clamp_score(r_hat + adjustment.confidence * adjustment.delta);
}

Refinement refine_prediction(double r_hat, double sigma,
                             const evidence::EvidenceBundle& model_evidence,
                             const std::vector<llm::ScoreCitation>& family_scores,
                             const std::vector<llm::ScoreCitation>& neighbor_scores,
                             llm::LlmClient& client, const ReasoningConfig& config) {
    Refinement out;
    out.family_report =
        intra_family_analysis(r_hat, sigma, model_evidence, family_scores, client, config);
    out.cross_report = cross_model_comparison(r_hat, neighbor_scores, client, config);
    out.adjustment = aggregate(r_hat, sigma, out.family_report, out.cross_report, client, config);
    out.prediction = final_prediction(r_hat, out.adjustment);
    return out;
}

}  // namespace star::reasoning
