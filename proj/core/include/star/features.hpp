#pragma once
// Semantic feature store: d-dimensional vectors per model/benchmark,
// loaded from JSON or fetched from an embedding service. Vectors are
// stored raw and L2-normalized at read time.

#include <Eigen/Dense>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace star::features {

// Lookup result. Missing ids come back as zero vectors so downstream
// projections reduce to plain latent factors for that entity.
struct FeatureLookup {
    Eigen::VectorXd values;  // unit L2 norm, or all-zero
    bool found = false;
    bool degenerate = false;  // missing or zero-norm raw vector
};

class FeatureStore {
public:
    FeatureStore() = default;
    FeatureStore(int dim, std::map<std::string, Eigen::VectorXd> model_features,
                 std::map<std::string, Eigen::VectorXd> benchmark_features);

    // Accepts either {"models": {id: [..]}, "benchmarks": {id: [..]}} or a
    // flat {id: [..]} map (flat entries answer both lookups). Dimension is
    // inferred from the first vector; mismatches are rejected by id.
    static FeatureStore load(const std::string& path);
    void save(const std::string& path) const;  // sectioned format

    int dim() const { return dim_; }
    bool empty() const { return model_features_.empty() && benchmark_features_.empty(); }

    FeatureLookup model(const std::string& id) const;
    FeatureLookup benchmark(const std::string& id) const;
    // Model lookup with benchmark fallback; used for id-only queries.
    FeatureLookup lookup(const std::string& id) const;

    // Row-stacked normalized vectors aligned with the given id order.
    // Missing ids contribute zero rows and are reported via `missing`.
    Eigen::MatrixXd model_matrix(const std::vector<std::string>& ids,
                                 std::vector<std::string>* missing = nullptr) const;
    Eigen::MatrixXd benchmark_matrix(const std::vector<std::string>& ids,
                                     std::vector<std::string>* missing = nullptr) const;

    void set_model(const std::string& id, Eigen::VectorXd raw);
    void set_benchmark(const std::string& id, Eigen::VectorXd raw);

private:
    int dim_ = 0;
    std::map<std::string, Eigen::VectorXd> model_features_;      // raw, unnormalized
    std::map<std::string, Eigen::VectorXd> benchmark_features_;  // raw, unnormalized
};

// Transport seam so tests can fake the embedding service.
class EncoderTransport {
public:
    virtual ~EncoderTransport() = default;
    // POST the JSON body to the service, return the raw response body.
    virtual std::string post_json(const std::string& body) = 0;
};

// Talks to `endpoint` (scheme://host[:port][/path]) with the wire format
// {"texts":[...]} -> {"vectors":[[...],...]}.
std::unique_ptr<EncoderTransport> make_http_encoder_transport(const std::string& endpoint,
                                                              int timeout_seconds);

struct EncoderConfig {
    std::string endpoint;      // empty means unconfigured
    int timeout_seconds = 30;
    std::string cache_path;    // optional on-disk cache, feature file format

    // STAR_ENCODER_ENDPOINT / STAR_ENCODER_TIMEOUT / STAR_ENCODER_CACHE
    static EncoderConfig from_env();
};

// Batch text encoder with an optional persistent cache keyed by text
// hash. Identical texts never hit the service twice.
class EncoderClient {
public:
    explicit EncoderClient(EncoderConfig config,
                           std::unique_ptr<EncoderTransport> transport = nullptr);

    // One vector per input text, all of one dimension. Throws
    // TransportError on service failure, ParseError on malformed or
    // dimensionally inconsistent replies.
    std::vector<Eigen::VectorXd> encode(const std::vector<std::string>& texts);

private:
    EncoderConfig config_;
    std::unique_ptr<EncoderTransport> transport_;
    std::map<std::string, Eigen::VectorXd> cache_;
    std::optional<int> dim_;
    std::mutex mutex_;
    bool cache_loaded_ = false;

    void load_cache_locked();
    void store_cache_locked() const;
};

}  // namespace star::features
