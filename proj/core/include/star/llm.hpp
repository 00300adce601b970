#pragma once
// Abstract chat-completion client used by the direct-scoring baseline
// and the reasoning pipeline. Two backends: an HTTP chat endpoint and a
// deterministic rule-based mock that emits the same wire formats, so
// downstream parsing is exercised identically.

#include <memory>
#include <string>
#include <vector>

#include "star/common.hpp"

namespace star::llm {

// A score attributed to a model, as passed into prompts and cited back.
struct ScoreCitation {
    std::string model_id;
    double score = 0.0;

    friend bool operator==(const ScoreCitation&, const ScoreCitation&) = default;
};

enum class RequestKind : std::uint8_t {
    direct_score,          // predict a score from profiles alone
    family_analysis,       // position the target within its model family
    cross_model_analysis,  // compare against capability-similar models
    aggregate,             // fold both analyses into {delta, confidence}
};

std::string to_string(RequestKind kind);

// The rendered prompt plus the numeric context it was rendered from.
// Rule-based backends work from the context; HTTP backends see only the
// text, exactly like a real service would.
struct LlmRequest {
    RequestKind kind = RequestKind::direct_score;
    std::string system;
    std::string prompt;

    double r_hat = 0.0;
    double sigma = 0.0;
    std::vector<ScoreCitation> family_scores;
    std::vector<ScoreCitation> neighbor_scores;
};

class LlmClient {
public:
    virtual ~LlmClient() = default;

    // Raw reply text; transport failures throw TransportError.
    virtual std::string complete(const LlmRequest& request) = 0;
    virtual std::string backend_name() const = 0;
};

// Rule parameters for the mock backend. All rules are pure functions of
// the request, so runs are reproducible byte for byte.
struct MockRules {
    double weight = 1.0;        // delta = weight * (reference_mean - r_hat)
    double delta_cap = 15.0;    // adjustment truncation, 0-100 scale
    double sigma_ref = 5.0;     // confidence = min(1, sigma / sigma_ref)
    double family_boost = 0.2;  // extra confidence when family scores exist
    double direct_score = 50.0; // constant reply for direct-score requests
    double disagreement_threshold = 2.0;  // flags over/underestimation
};

class DeterministicMockClient : public LlmClient {
public:
    explicit DeterministicMockClient(MockRules rules = {}) : rules_(rules) {}

    std::string complete(const LlmRequest& request) override;
    std::string backend_name() const override { return "deterministic_mock"; }

    const MockRules& rules() const { return rules_; }

private:
    MockRules rules_;
};

// Raw POST of a JSON body, split out so tests can fake the wire.
class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    virtual std::string post_json(const std::string& body) = 0;
};

std::unique_ptr<ChatTransport> make_http_chat_transport(const std::string& endpoint,
                                                        const std::string& api_key,
                                                        int timeout_seconds);

struct ChatConfig {
    std::string endpoint;  // scheme://host[:port]/path
    std::string api_key;
    std::string model;
    int timeout_seconds = 60;
    int max_retries = 1;

    // STAR_LLM_ENDPOINT, STAR_LLM_API_KEY, STAR_LLM_MODEL, STAR_LLM_TIMEOUT
    static ChatConfig from_env();
};

// OpenAI-style chat completion: temperature 0, one system and one user
// message, first choice's content returned. Calls are serialized.
class HttpChatClient : public LlmClient {
public:
    explicit HttpChatClient(ChatConfig config);                                // own transport
    HttpChatClient(ChatConfig config, std::unique_ptr<ChatTransport> transport);  // injected

    std::string complete(const LlmRequest& request) override;
    std::string backend_name() const override { return "http_chat:" + config_.model; }

private:
    ChatConfig config_;
    std::unique_ptr<ChatTransport> transport_;
};

// First score-like number in a reply: prefers the number following a
// "score" marker, falls back to the first number anywhere. Returns
// false when no number can be found.
bool parse_score_reply(const std::string& reply, double& out);

}  // namespace star::llm
