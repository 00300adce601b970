#include "star/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include "json.hpp"
#include "star/common.hpp"

// httplib is header-only and heavy; keep it out of our public headers.
#include "httplib.h"

namespace star::features {
namespace {

using nlohmann::json;

Eigen::VectorXd parse_vector(const json& arr, const std::string& id) {
    if (!arr.is_array()) throw ParseError("feature entry '" + id + "' is not an array");
    Eigen::VectorXd v(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        if (!arr[i].is_number()) {
            throw ParseError("feature entry '" + id + "' holds a non-numeric value");
        }
        v[static_cast<Eigen::Index>(i)] = arr[i].get<double>();
        if (!std::isfinite(v[static_cast<Eigen::Index>(i)])) {
            throw ParseError("feature entry '" + id + "' holds a non-finite value");
        }
    }
    return v;
}

json vector_to_json(const Eigen::VectorXd& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
    return arr;
}

FeatureLookup normalized(const Eigen::VectorXd& raw, bool found) {
    FeatureLookup out;
    out.found = found;
    const double norm = raw.norm();
    if (!found || norm == 0.0) {
        out.values = Eigen::VectorXd::Zero(raw.size());
        out.degenerate = true;
    } else {
        out.values = raw / norm;
    }
    return out;
}

void ingest_section(const json& section, int& dim, std::map<std::string, Eigen::VectorXd>& into,
                    const std::string& path) {
    for (const auto& [id, arr] : section.items()) {
        Eigen::VectorXd v = parse_vector(arr, id);
        if (dim == 0) {
            dim = static_cast<int>(v.size());
            if (dim == 0) throw ParseError(path + ": feature entry '" + id + "' is empty");
        } else if (v.size() != dim) {
            throw ParseError(path + ": feature entry '" + id + "' has dimension " +
                             std::to_string(v.size()) + ", expected " + std::to_string(dim));
        }
        into[id] = std::move(v);
    }
}

}  // namespace

FeatureStore::FeatureStore(int dim, std::map<std::string, Eigen::VectorXd> model_features,
                           std::map<std::string, Eigen::VectorXd> benchmark_features)
    : dim_(dim),
      model_features_(std::move(model_features)),
      benchmark_features_(std::move(benchmark_features)) {
    for (const auto* map : {&model_features_, &benchmark_features_}) {
        for (const auto& [id, v] : *map) {
            if (v.size() != dim_) {
                throw ConfigError("feature entry '" + id + "' has dimension " +
                                  std::to_string(v.size()) + ", expected " + std::to_string(dim_));
            }
        }
    }
}

FeatureStore FeatureStore::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
    }
    if (!doc.is_object()) throw ParseError(path + ": expected a JSON object");

    FeatureStore store;
    const bool sectioned = doc.contains("models") || doc.contains("benchmarks");
    if (sectioned) {
        if (doc.contains("models")) {
            ingest_section(doc["models"], store.dim_, store.model_features_, path);
        }
        if (doc.contains("benchmarks")) {
            ingest_section(doc["benchmarks"], store.dim_, store.benchmark_features_, path);
        }
    } else {
        // flat map: entries serve both model and benchmark lookups
        ingest_section(doc, store.dim_, store.model_features_, path);
        store.benchmark_features_ = store.model_features_;
    }
    return store;
}

void FeatureStore::save(const std::string& path) const {
    json models = json::object();
    for (const auto& [id, v] : model_features_) models[id] = vector_to_json(v);
    json benchmarks = json::object();
    for (const auto& [id, v] : benchmark_features_) benchmarks[id] = vector_to_json(v);

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << json{{"models", std::move(models)}, {"benchmarks", std::move(benchmarks)}}.dump(2)
        << '\n';
}

FeatureLookup FeatureStore::model(const std::string& id) const {
    const auto it = model_features_.find(id);
    if (it == model_features_.end()) return normalized(Eigen::VectorXd::Zero(dim_), false);
    return normalized(it->second, true);
}

FeatureLookup FeatureStore::benchmark(const std::string& id) const {
    const auto it = benchmark_features_.find(id);
    if (it == benchmark_features_.end()) return normalized(Eigen::VectorXd::Zero(dim_), false);
    return normalized(it->second, true);
}

FeatureLookup FeatureStore::lookup(const std::string& id) const {
    if (model_features_.count(id)) return model(id);
    return benchmark(id);
}

Eigen::MatrixXd FeatureStore::model_matrix(const std::vector<std::string>& ids,
                                           std::vector<std::string>* missing) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), dim_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const FeatureLookup f = model(ids[i]);
        if (!f.found && missing != nullptr) missing->push_back(ids[i]);
        out.row(static_cast<Eigen::Index>(i)) = f.values.transpose();
    }
    return out;
}

Eigen::MatrixXd FeatureStore::benchmark_matrix(const std::vector<std::string>& ids,
                                               std::vector<std::string>* missing) const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(ids.size()), dim_);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const FeatureLookup f = benchmark(ids[i]);
        if (!f.found && missing != nullptr) missing->push_back(ids[i]);
        out.row(static_cast<Eigen::Index>(i)) = f.values.transpose();
    }
    return out;
}

void FeatureStore::set_model(const std::string& id, Eigen::VectorXd raw) {
    if (dim_ == 0) dim_ = static_cast<int>(raw.size());
    if (raw.size() != dim_) {
        throw ConfigError("feature entry '" + id + "' has dimension " + std::to_string(raw.size()) +
                          ", expected " + std::to_string(dim_));
    }
    model_features_[id] = std::move(raw);
}

void FeatureStore::set_benchmark(const std::string& id, Eigen::VectorXd raw) {
    if (dim_ == 0) dim_ = static_cast<int>(raw.size());
    if (raw.size() != dim_) {
        throw ConfigError("feature entry '" + id + "' has dimension " + std::to_string(raw.size()) +
                          ", expected " + std::to_string(dim_));
    }
    benchmark_features_[id] = std::move(raw);
}

namespace {

class HttpEncoderTransport : public EncoderTransport {
public:
    HttpEncoderTransport(std::string endpoint, int timeout_seconds) {
        // split scheme://host[:port]/path into client base + request path
        const auto scheme_end = endpoint.find("://");
        if (scheme_end == std::string::npos) {
            throw ConfigError("encoder endpoint '" + endpoint + "' lacks a scheme");
        }
        const auto path_start = endpoint.find('/', scheme_end + 3);
        base_ = endpoint.substr(0, path_start);
        path_ = path_start == std::string::npos ? "/" : endpoint.substr(path_start);
        timeout_seconds_ = timeout_seconds;
    }

    std::string post_json(const std::string& body) override {
        httplib::Client client(base_);
        client.set_connection_timeout(timeout_seconds_, 0);
        client.set_read_timeout(timeout_seconds_, 0);
        auto res = client.Post(path_, body, "application/json");
        if (!res) {
            throw TransportError("encoder request to " + base_ + path_ + " failed: " +
                                 httplib::to_string(res.error()));
        }
        if (res->status != 200) {
            throw TransportError("encoder request to " + base_ + path_ + " returned status " +
                                 std::to_string(res->status));
        }
        return res->body;
    }

private:
    std::string base_;
    std::string path_;
    int timeout_seconds_ = 30;
};

}  // namespace

std::unique_ptr<EncoderTransport> make_http_encoder_transport(const std::string& endpoint,
                                                              int timeout_seconds) {
    return std::make_unique<HttpEncoderTransport>(endpoint, timeout_seconds);
}

EncoderConfig EncoderConfig::from_env() {
    EncoderConfig cfg;
    if (const char* e = std::getenv("STAR_ENCODER_ENDPOINT")) cfg.endpoint = e;
    if (const char* t = std::getenv("STAR_ENCODER_TIMEOUT")) cfg.timeout_seconds = std::atoi(t);
    if (const char* c = std::getenv("STAR_ENCODER_CACHE")) cfg.cache_path = c;
    return cfg;
}

EncoderClient::EncoderClient(EncoderConfig config, std::unique_ptr<EncoderTransport> transport)
    : config_(std::move(config)), transport_(std::move(transport)) {
    if (transport_ == nullptr && !config_.endpoint.empty()) {
        transport_ = make_http_encoder_transport(config_.endpoint, config_.timeout_seconds);
    }
}

void EncoderClient::load_cache_locked() {
    cache_loaded_ = true;
    if (config_.cache_path.empty()) return;
    std::ifstream in(config_.cache_path);
    if (!in) return;  // missing cache file is an empty cache
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error&) {
        return;  // corrupt cache behaves like a miss
    }
    if (!doc.is_object()) return;
    for (const auto& [key, arr] : doc.items()) {
        try {
            Eigen::VectorXd v = parse_vector(arr, key);
            if (!dim_) dim_ = static_cast<int>(v.size());
            if (v.size() == *dim_) cache_[key] = std::move(v);
        } catch (const ParseError&) {
            // skip bad entries
        }
    }
}

void EncoderClient::store_cache_locked() const {
    if (config_.cache_path.empty()) return;
    json doc = json::object();
    for (const auto& [key, v] : cache_) doc[key] = vector_to_json(v);
    std::ofstream out(config_.cache_path);
    if (out) out << doc.dump() << '\n';
}

std::vector<Eigen::VectorXd> EncoderClient::encode(const std::vector<std::string>& texts) {
    if (texts.empty()) return {};

    std::scoped_lock lock(mutex_);
    if (!cache_loaded_) load_cache_locked();

    auto key_of = [](const std::string& text) {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx",
                      static_cast<unsigned long long>(fnv1a64(text)));
        return std::string(buf);
    };

    std::vector<std::string> pending;       // texts not in cache, deduplicated
    std::vector<std::string> pending_keys;
    for (const std::string& text : texts) {
        const std::string key = key_of(text);
        if (cache_.count(key)) continue;
        if (std::find(pending_keys.begin(), pending_keys.end(), key) != pending_keys.end()) {
            continue;
        }
        pending.push_back(text);
        pending_keys.push_back(key);
    }

    if (!pending.empty()) {
        if (transport_ == nullptr) {
            throw ConfigError("encoder endpoint is not configured");
        }
        const std::string reply = transport_->post_json(json{{"texts", pending}}.dump());
        json doc;
        try {
            doc = json::parse(reply);
        } catch (const json::parse_error& e) {
            throw ParseError(std::string("encoder reply is not JSON: ") + e.what());
        }
        if (!doc.contains("vectors") || !doc["vectors"].is_array() ||
            doc["vectors"].size() != pending.size()) {
            throw ParseError("encoder reply lacks a vectors array of matching length");
        }
        for (std::size_t i = 0; i < pending.size(); ++i) {
            Eigen::VectorXd v = parse_vector(doc["vectors"][i], pending_keys[i]);
            if (!dim_) dim_ = static_cast<int>(v.size());
            if (v.size() != *dim_) {
                throw ParseError("encoder returned dimension " + std::to_string(v.size()) +
                                 ", expected " + std::to_string(*dim_));
            }
            cache_[pending_keys[i]] = std::move(v);
        }
        store_cache_locked();
    }

    std::vector<Eigen::VectorXd> out;
    out.reserve(texts.size());
    for (const std::string& text : texts) out.push_back(cache_.at(key_of(text)));
    return out;
}

}  // namespace star::features
