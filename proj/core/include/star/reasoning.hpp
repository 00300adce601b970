#pragma once
// Expectation refinement: two analysis passes over an LLM client
// (family history, capability-similar models), credibility-weighted
// aggregation into a bounded correction, and the final combination
// prediction = clamp(expectation + confidence * delta).

#include <map>
#include <set>
#include <string>
#include <vector>

#include "star/evidence.hpp"
#include "star/llm.hpp"

namespace star::reasoning {

enum class AnalysisStep : std::uint8_t { family, cross_model };

std::string to_string(AnalysisStep step);

struct AnalysisReport {
    AnalysisStep step = AnalysisStep::family;
    std::string findings;
    std::vector<llm::ScoreCitation> cited_scores;  // only validated citations survive
    std::set<std::string> flags;
};

struct Adjustment {
    double delta = 0;       // |delta| <= delta_cap
    double confidence = 0;  // in [0, 1]
    std::string explanation;
    std::vector<std::string> evidence_refs;
};

struct ReasoningConfig {
    double delta_cap = 15.0;      // correction bound on the 0-100 scale
    int max_retries = 1;          // transport retries per client call
    std::string template_dir;     // empty = built-in prompt templates
    std::string transcript_dir;   // empty = no transcript files
    std::string transcript_tag;   // file prefix, e.g. "m3-b7"

    void validate() const;  // throws ConfigError
};

// Replace every {{key}} in the template; unknown or leftover
// placeholders throw ConfigError.
std::string render_template(const std::string& text,
                            const std::map<std::string, std::string>& values);

// Family positioning: reads the evidence bundle and the family's
// observed scores on the target benchmark. Transport failure degrades
// to a neutral report flagged "degraded"; citations not present in
// the prompt are stripped and flagged "hallucination".
AnalysisReport intra_family_analysis(double r_hat, double sigma,
                                     const evidence::EvidenceBundle& model_evidence,
                                     const std::vector<llm::ScoreCitation>& family_scores,
                                     llm::LlmClient& client, const ReasoningConfig& config = {});

// Capability-similar comparison over neighbor scores; same degradation
// and citation rules.
AnalysisReport cross_model_comparison(double r_hat,
                                      const std::vector<llm::ScoreCitation>& neighbor_scores,
                                      llm::LlmClient& client, const ReasoningConfig& config = {});

// Merge both reports into {delta, confidence, explanation}. Reports
// with no validated citations on either side force delta = 0 without a
// client call. A reply that fails the schema gets one repair re-prompt,
// then falls back to delta 0, confidence 0, "aggregation failed".
Adjustment aggregate(double r_hat, double sigma, const AnalysisReport& family_report,
                     const AnalysisReport& cross_report, llm::LlmClient& client,
                     const ReasoningConfig& config = {});

// clamp(r_hat + confidence * delta, 0, 100)
double final_prediction(double r_hat, const Adjustment& adjustment);

// Convenience pipeline for one cell: both analyses, aggregation, and
// the final combination.
struct Refinement {
    AnalysisReport family_report;
    AnalysisReport cross_report;
    Adjustment adjustment;
    double prediction = 0;
};

Refinement refine_prediction(double r_hat, double sigma,
                             const evidence::EvidenceBundle& model_evidence,
                             const std::vector<llm::ScoreCitation>& family_scores,
                             const std::vector<llm::ScoreCitation>& neighbor_scores,
                             llm::LlmClient& client, const ReasoningConfig& config = {});

}  // namespace star::reasoning
