#include "star/llm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <mutex>

#include "json.hpp"

#include "httplib.h"

namespace star::llm {
namespace {

using nlohmann::json;

double mean_score(const std::vector<ScoreCitation>& scores) {
    double sum = 0;
    for (const ScoreCitation& s : scores) sum += s.score;
    return sum / static_cast<double>(scores.size());
}

json cited_scores_json(const std::vector<ScoreCitation>& scores) {
    json arr = json::array();
    for (const ScoreCitation& s : scores) {
        arr.push_back(json{{"model_id", s.model_id}, {"score", s.score}});
    }
    return arr;
}

std::string mock_family_reply(const LlmRequest& request) {
    json doc;
    if (request.family_scores.empty()) {
        doc["findings"] = "no family history available for this model";
        doc["cited_scores"] = json::array();
        doc["flags"] = json::array({"no_family"});
        return doc.dump();
    }
    const double mean = mean_score(request.family_scores);
    doc["findings"] = "family members average " + format_number(mean) +
                      " on this benchmark; the expectation " + format_number(request.r_hat) +
                      " should track that reference";
    doc["cited_scores"] = cited_scores_json(request.family_scores);
    doc["flags"] = json::array({"reference_found"});
    return doc.dump();
}

std::string mock_cross_reply(const LlmRequest& request, const MockRules& rules) {
    json doc;
    if (request.neighbor_scores.empty()) {
        doc["findings"] = "no capability-similar models available";
        doc["cited_scores"] = json::array();
        doc["flags"] = json::array({"no_neighbors"});
        return doc.dump();
    }
    const double mean = mean_score(request.neighbor_scores);
    const double diff = request.r_hat - mean;
    doc["cited_scores"] = cited_scores_json(request.neighbor_scores);
    if (diff > rules.disagreement_threshold) {
        doc["findings"] = "expectation " + format_number(request.r_hat) +
                          " sits above the similar-model mean " + format_number(mean);
        doc["flags"] = json::array({"overestimation"});
    } else if (diff < -rules.disagreement_threshold) {
        doc["findings"] = "expectation " + format_number(request.r_hat) +
                          " sits below the similar-model mean " + format_number(mean);
        doc["flags"] = json::array({"underestimation"});
    } else {
        doc["findings"] = "expectation " + format_number(request.r_hat) +
                          " is consistent with the similar-model mean " + format_number(mean);
        doc["flags"] = json::array();
    }
    return doc.dump();
}

std::string mock_aggregate_reply(const LlmRequest& request, const MockRules& rules) {
    json doc;
    const bool has_family = !request.family_scores.empty();
    const std::vector<ScoreCitation>& refs =
        has_family ? request.family_scores : request.neighbor_scores;
    if (refs.empty()) {
        doc["delta"] = 0.0;
        doc["confidence"] = 0.0;
        doc["explanation"] = "no reference scores available";
        return doc.dump();
    }

    const double mean = mean_score(refs);
    double delta = rules.weight * (mean - request.r_hat);
    delta = std::clamp(delta, -rules.delta_cap, rules.delta_cap);

    double confidence = 0.0;
    if (request.sigma > 0) {
        confidence = std::min(1.0, request.sigma / rules.sigma_ref);
        if (has_family) confidence = std::min(1.0, confidence + rules.family_boost);
    }

    doc["delta"] = delta;
    doc["confidence"] = confidence;
    doc["explanation"] = "reference mean " + format_number(mean) + " against expectation " +
                         format_number(request.r_hat);
    return doc.dump();
}

class HttpChatTransport : public ChatTransport {
public:
    HttpChatTransport(std::string endpoint, std::string api_key, int timeout_seconds)
        : api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
        const auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos) {
            throw ConfigError("chat endpoint '" + endpoint + "' lacks a scheme");
        }
        const auto path_start = endpoint.find('/', scheme_end + 3);
        base_ = endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
    }

    std::string post_json(const std::string& body) override {
        httplib::Client client(base_);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        httplib::Headers headers;
        if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
        auto res = client.Post(path_, headers, body, "application/json");
        if (!res) {
            throw TransportError("chat request to " + base_ + path_ + " failed: " +
                                 httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw TransportError("chat request to " + base_ + path_ + " returned status " +
                                 std::to_string(res->status));
        }
        return res->body;
    }

private:
    std::string base_;
    std::string path_;
    std::string api_key_;
    int timeout_seconds_ = 60;
};

}  // namespace

std::string to_string(RequestKind kind) {
    switch (kind) {
        case RequestKind::direct_score: return "direct_score";
        case RequestKind::family_analysis: return "family_analysis";
        case RequestKind::cross_model_analysis: return "cross_model_analysis";
        case RequestKind::aggregate: return "aggregate";
    }
    return "unknown";
}

std::string DeterministicMockClient::complete(const LlmRequest& request) {
    switch (request.kind) {
        case RequestKind::direct_score:
            return "score: " + format_number(rules_.direct_score);
        case RequestKind::family_analysis:
            return mock_family_reply(request);
        case RequestKind::cross_model_analysis:
            return mock_cross_reply(request, rules_);
        case RequestKind::aggregate:
            return mock_aggregate_reply(request, rules_);
    }
    throw ConfigError("unknown request kind");
}

std::unique_ptr<ChatTransport> make_http_chat_transport(const std::string& endpoint,
                                                        const std::string& api_key,
                                                        int timeout_seconds) {
    return std::make_unique<HttpChatTransport>(endpoint, api_key, timeout_seconds);
}

ChatConfig ChatConfig::from_env() {
    ChatConfig cfg;
    if (const char* e = std::getenv("STAR_LLM_ENDPOINT")) cfg.endpoint = e;
    if (const char* k = std::getenv("STAR_LLM_API_KEY")) cfg.api_key = k;
    if (const char* m = std::getenv("STAR_LLM_MODEL")) cfg.model = m;
    if (const char* t = std::getenv("STAR_LLM_TIMEOUT")) cfg.timeout_seconds = std::atoi(t);
    return cfg;
}

HttpChatClient::HttpChatClient(ChatConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) {
        throw ConfigError("chat backend requested but STAR_LLM_ENDPOINT is not set");
    }
    transport_ =
        make_http_chat_transport(config_.endpoint, config_.api_key, config_.timeout_seconds);
}

HttpChatClient::HttpChatClient(ChatConfig config, std::unique_ptr<ChatTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (transport_ == nullptr) throw ConfigError("chat client needs a transport");
}

std::string HttpChatClient::complete(const LlmRequest& request) {
    json body;
    body["model"] = config_.model;
    body["temperature"] = 0;
    json messages = json::array();
    if (!request.system.empty()) {
        messages.push_back(json{{"role", "system"}, {"content", request.system}});
    }
    messages.push_back(json{{"role", "user"}, {"content", request.prompt}});
    body["messages"] = std::move(messages);
    const std::string payload = body.dump();

    static std::mutex wire_mutex;  // httplib clients are not reentrant
    std::string raw;
    const int attempts = std::max(1, config_.max_retries + 1);
    for (int attempt = 0;; ++attempt) {
        try {
            std::scoped_lock lock(wire_mutex);
            raw = transport_->post_json(payload);
            break;
        } catch (const TransportError&) {
            if (attempt + 1 >= attempts) throw;
        }
    }

    json doc;
    try {
        doc = json::parse(raw);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("chat reply is not JSON: ") + e.what());
    }
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
        throw ParseError("chat reply lacks choices");
    }
    const json& msg = doc["choices"][0];
    if (!msg.contains("message") || !msg["message"].contains("content") ||
        !msg["message"]["content"].is_string()) {
        throw ParseError("chat reply lacks message content");
    }
    return msg["message"]["content"].get<std::string>();
}

bool parse_score_reply(const std::string& reply, double& out) {
    std::string lower = reply;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto marker = lower.find("score");
    if (marker != std::string::npos) {
        const std::vector<double> after =
            extract_numbers(std::string_view(reply).substr(marker + 5));
        if (!after.empty()) {
            out = after.front();
            return true;
        }
    }
    const std::vector<double> any = extract_numbers(reply);
    if (any.empty()) return false;
    out = any.front();
    return true;
}

}  // namespace star::llm
