#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <future>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include "topicforge/corpus.hpp"
#include "topicforge/error.hpp"
#include "topicforge/http.hpp"

namespace topicforge {

using Vector = std::vector<double>;
using VectorView = std::span<const double>;

inline double dot(VectorView a, VectorView b) {
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) sum += a[i] * b[i];
    return sum;
}

inline double norm(VectorView a) { return std::sqrt(dot(a, a)); }

inline double cosine_similarity(VectorView a, VectorView b) {
    if (a.size() != b.size()) {
        throw Error(ErrorCode::DimensionMismatch,
                    std::to_string(a.size()) + " vs " + std::to_string(b.size()));
    }
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

inline Vector normalized(VectorView v) {
    const double n = norm(v);
    if (n == 0.0) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
    Vector out(v.begin(), v.end());
    for (auto& x : out) x /= n;
    return out;
}

/// N x D row-major matrix; row i is the embedding of document i. Values are
/// stored at single precision (rounded on construction) so the on-disk float32
/// layout round-trips exactly.
class EmbeddingMatrix {
public:
    EmbeddingMatrix() = default;
    EmbeddingMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
        : rows_(rows), cols_(cols), values_(std::move(values)) {
        if (values_.size() != rows_ * cols_) {
            throw Error(ErrorCode::DimensionMismatch, "matrix storage does not match shape");
        }
        for (auto& v : values_) {
            if (!std::isfinite(v)) throw Error(ErrorCode::InvalidArgument, "non-finite embedding value");
            v = static_cast<double>(static_cast<float>(v));
        }
    }

    static EmbeddingMatrix from_rows(const std::vector<Vector>& rows) {
        if (rows.empty()) return {};
        const std::size_t cols = rows.front().size();
        std::vector<double> values;
        values.reserve(rows.size() * cols);
        for (const auto& r : rows) {
            if (r.size() != cols) throw Error(ErrorCode::DimensionMismatch, "ragged embedding rows");
            values.insert(values.end(), r.begin(), r.end());
        }
        return EmbeddingMatrix(rows.size(), cols, std::move(values));
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    VectorView row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }
    const std::vector<double>& values() const noexcept { return values_; }

    bool operator==(const EmbeddingMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

struct Neighbor {
    DocId id = 0;
    double similarity = 0.0;

    bool operator==(const Neighbor&) const = default;
};

/// Exact top-k by cosine similarity over `candidates`, descending, ties by
/// ascending document id.
inline std::vector<Neighbor> knn_search(const EmbeddingMatrix& matrix, std::span<const DocId> candidates,
                                        VectorView query, std::size_t k) {
    if (candidates.empty()) throw Error(ErrorCode::EmptyCandidates, "knn_search needs candidates");
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be >= 1");
    if (query.size() != matrix.cols()) {
        throw Error(ErrorCode::DimensionMismatch, "query dimension " + std::to_string(query.size()) +
                                                      " vs matrix " + std::to_string(matrix.cols()));
    }
    std::vector<Neighbor> scored;
    scored.reserve(candidates.size());
    for (const DocId id : candidates) {
        if (id >= matrix.rows()) throw Error(ErrorCode::InvalidArgument, "candidate id out of range");
        scored.push_back({id, cosine_similarity(matrix.row(id), query)});
    }
    const auto better = [](const Neighbor& a, const Neighbor& b) {
        return a.similarity != b.similarity ? a.similarity > b.similarity : a.id < b.id;
    };
    const std::size_t take = std::min(k, scored.size());
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      better);
    scored.resize(take);
    return scored;
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int length = 0;
    EVP_Digest(data.data(), data.size(), digest, &length, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
        out.push_back(kHex[digest[i] >> 4]);
        out.push_back(kHex[digest[i] & 0xF]);
    }
    return out;
}

enum class EmbeddingProviderKind { remote, local_deterministic };

struct RetryPolicy {
    int attempts = 3;
    std::chrono::milliseconds initial_backoff{1000};
    std::function<void(std::chrono::milliseconds)> sleep = [](std::chrono::milliseconds d) {
        std::this_thread::sleep_for(d);
    };
};

struct EmbeddingProviderConfig {
    EmbeddingProviderKind kind = EmbeddingProviderKind::local_deterministic;
    std::string endpoint_url;
    std::string model_name = "local-hash-v1";
    std::string api_key_env_var;
    std::size_t batch_size = 64;
    std::optional<std::string> cache_path;
    std::size_t dimension = 256;  // local_deterministic only
    std::size_t max_in_flight = 4;

    void validate() const {
        if (batch_size < 1) throw Error(ErrorCode::InvalidConfig, "embedding batch_size must be >= 1");
        if (max_in_flight < 1) throw Error(ErrorCode::InvalidConfig, "embedding max_in_flight must be >= 1");
        if (kind == EmbeddingProviderKind::remote && (endpoint_url.empty() || api_key_env_var.empty())) {
            throw Error(ErrorCode::InvalidConfig, "remote embeddings need endpoint_url and api_key_env_var");
        }
        if (kind == EmbeddingProviderKind::local_deterministic && dimension < 2) {
            throw Error(ErrorCode::InvalidConfig, "local embedding dimension must be >= 2");
        }
    }
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual const std::string& model_name() const = 0;
    /// One vector per input, in order.
    virtual std::vector<Vector> embed_batch(const std::vector<std::string>& texts) = 0;
    std::size_t request_count() const noexcept { return requests_.load(); }

protected:
    std::atomic<std::size_t> requests_{0};
};

/// Feature-hashing embedder: token unigrams (weight 1) and bigrams (weight
/// 1/2) are hashed with FNV-1a into `dimension` signed buckets, then the
/// vector is L2-normalized. Needs no network and is bit-reproducible.
class LocalHashEmbedder final : public EmbeddingProvider {
public:
    explicit LocalHashEmbedder(std::size_t dimension = 256, std::string model_name = "local-hash-v1")
        : dimension_(dimension), model_name_(std::move(model_name)) {
        if (dimension_ < 2) throw Error(ErrorCode::InvalidConfig, "dimension must be >= 2");
    }

    const std::string& model_name() const override { return model_name_; }
    std::size_t dimension() const noexcept { return dimension_; }

    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) override {
        ++requests_;
        std::vector<Vector> out;
        out.reserve(texts.size());
        for (const auto& text : texts) out.push_back(embed_one(text));
        return out;
    }

    Vector embed_one(std::string_view text) const {
        Vector v(dimension_, 0.0);
        const auto tokens = tokenize(text, 1, {});
        for (std::size_t i = 0; i < tokens.size(); ++i) {
            add_feature(v, "u:" + tokens[i], 1.0);
            if (i + 1 < tokens.size()) add_feature(v, "b:" + tokens[i] + ' ' + tokens[i + 1], 0.5);
        }
        if (norm(v) == 0.0) add_feature(v, "r:" + std::string(trim(text)), 1.0);
        return normalized(v);
    }

private:
    static std::uint64_t fnv1a(std::string_view s) {
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char c : s) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ULL;
        }
        return h;
    }

    void add_feature(Vector& v, const std::string& feature, double weight) const {
        const std::uint64_t h = fnv1a(feature);
        const double sign = (h >> 63) ? -1.0 : 1.0;
        v[h % dimension_] += sign * weight;
    }

    std::size_t dimension_;
    std::string model_name_;
};

/// OpenAI-compatible embeddings client: POST {"model", "input": [...]} and
/// read one embedding per input from "data" (ordered by "index").
class RemoteEmbedder final : public EmbeddingProvider {
public:
    RemoteEmbedder(EmbeddingProviderConfig cfg, HttpTransport transport, RetryPolicy retry = {})
        : cfg_(std::move(cfg)), transport_(std::move(transport)), retry_(std::move(retry)) {}

    const std::string& model_name() const override { return cfg_.model_name; }

    std::vector<Vector> embed_batch(const std::vector<std::string>& texts) override {
        const nlohmann::json request = {{"model", cfg_.model_name}, {"input", texts}};
        HttpResponse response;
        std::string last_error;
        auto backoff = retry_.initial_backoff;
        for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
            ++requests_;
            response = transport_(HttpRequest{"POST", cfg_.endpoint_url, request.dump(), bearer_headers()});
            if (response.ok()) break;
            last_error = response.error.empty() ? "HTTP " + std::to_string(response.status) : response.error;
            spdlog::warn("embedding request attempt {}/{} failed: {}", attempt, retry_.attempts, last_error);
            if (attempt < retry_.attempts) {
                retry_.sleep(backoff);
                backoff *= 2;
            }
        }
        if (!response.ok()) throw Error(ErrorCode::ProviderUnavailable, "embeddings: " + last_error);
        return parse(response.body, texts.size());
    }

private:
    std::vector<std::pair<std::string, std::string>> bearer_headers() const {
        std::vector<std::pair<std::string, std::string>> headers;
        if (const char* key = std::getenv(cfg_.api_key_env_var.c_str())) {
            headers.emplace_back("Authorization", std::string("Bearer ") + key);
        }
        return headers;
    }

    std::vector<Vector> parse(const std::string& body, std::size_t expected) {
        nlohmann::json doc;
        try {
            doc = nlohmann::json::parse(body);
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedResponse, std::string("embeddings response: ") + e.what());
        }
        std::vector<Vector> out(expected);
        if (doc.contains("data") && doc["data"].is_array()) {
            const auto& data = doc["data"];
            if (data.size() != expected) throw Error(ErrorCode::MalformedResponse, "embedding count mismatch");
            for (std::size_t i = 0; i < data.size(); ++i) {
                const std::size_t index = data[i].value("index", i);
                if (index >= expected) throw Error(ErrorCode::MalformedResponse, "embedding index out of range");
                out[index] = data[i].at("embedding").get<Vector>();
            }
        } else if (doc.contains("embeddings") && doc["embeddings"].is_array()) {
            if (doc["embeddings"].size() != expected) {
                throw Error(ErrorCode::MalformedResponse, "embedding count mismatch");
            }
            for (std::size_t i = 0; i < expected; ++i) out[i] = doc["embeddings"][i].get<Vector>();
        } else {
            throw Error(ErrorCode::MalformedResponse, "no embeddings in response");
        }
        return out;
    }

    EmbeddingProviderConfig cfg_;
    HttpTransport transport_;
    RetryPolicy retry_;
};

/// (model, content hash) -> vector, optionally backed by an append-only JSON
/// lines file: {"model": ..., "hash": <sha256 hex>, "vector": [...]}. A corrupt
/// or partial record and everything after it is truncated on load.
class EmbeddingCache {
public:
    EmbeddingCache() = default;
    explicit EmbeddingCache(std::filesystem::path path) : path_(std::move(path)) { load(); }

    static std::string key(const std::string& model, std::string_view text) {
        return model + '\n' + sha256_hex(text);
    }

    std::optional<Vector> find(const std::string& model, std::string_view text) const {
        const auto k = key(model, text);
        std::shared_lock lock(mutex_);
        const auto it = entries_.find(k);
        if (it == entries_.end()) return std::nullopt;
        return it->second;
    }

    void insert(const std::string& model, std::string_view text, const Vector& v) {
        const auto hash = sha256_hex(text);
        std::unique_lock lock(mutex_);
        const auto [it, inserted] = entries_.try_emplace(model + '\n' + hash, v);
        if (!inserted || !path_) return;
        std::ofstream out(*path_, std::ios::app | std::ios::binary);
        out << nlohmann::json{{"model", model}, {"hash", hash}, {"vector", v}}.dump() << '\n';
    }

    std::size_t size() const {
        std::shared_lock lock(mutex_);
        return entries_.size();
    }

    std::size_t truncated_bytes() const noexcept { return truncated_bytes_; }

private:
    void load() {
        std::error_code ec;
        if (!std::filesystem::exists(*path_, ec)) return;
        std::ifstream in(*path_, std::ios::binary);
        std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        std::size_t offset = 0;
        while (offset < content.size()) {
            const auto newline = content.find('\n', offset);
            if (newline == std::string::npos) break;  // partial trailing record
            try {
                const auto record = nlohmann::json::parse(content.substr(offset, newline - offset));
                entries_[record.at("model").get<std::string>() + '\n' + record.at("hash").get<std::string>()] =
                    record.at("vector").get<Vector>();
            } catch (const std::exception&) {
                break;
            }
            offset = newline + 1;
        }
        if (offset < content.size()) {
            truncated_bytes_ = content.size() - offset;
            spdlog::warn("embedding cache {}: truncating {} corrupt trailing bytes at offset {}",
                         path_->string(), truncated_bytes_, offset);
            in.close();
            std::filesystem::resize_file(*path_, offset);
        }
    }

    std::optional<std::filesystem::path> path_;
    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, Vector> entries_;
    std::size_t truncated_bytes_ = 0;
};

struct EmbedOptions {
    std::size_t batch_size = 64;
    std::size_t max_in_flight = 4;
    /// Expected dimension; 0 adopts whatever the first response returns.
    std::size_t dimension = 0;
};

/// Embeds `texts` in order. Cache hits skip the provider; misses are sent in
/// batches, up to `max_in_flight` concurrently. Every returned vector must
/// share one dimension.
inline std::vector<Vector> embed_texts(EmbeddingProvider& provider, const std::vector<std::string>& texts,
                                       const EmbedOptions& options = {}, EmbeddingCache* cache = nullptr) {
    if (texts.empty()) throw Error(ErrorCode::InvalidArgument, "embed_texts needs at least one text");
    if (options.batch_size == 0 || options.max_in_flight == 0) {
        throw Error(ErrorCode::InvalidArgument, "batch_size and max_in_flight must be >= 1");
    }
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (texts[i].empty()) throw Error(ErrorCode::InvalidArgument, "text " + std::to_string(i) + " is empty");
    }

    std::vector<Vector> out(texts.size());
    std::vector<std::size_t> misses;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (cache) {
            if (auto hit = cache->find(provider.model_name(), texts[i])) {
                out[i] = std::move(*hit);
                continue;
            }
        }
        misses.push_back(i);
    }

    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t start = 0; start < misses.size(); start += options.batch_size) {
        const auto end = std::min(misses.size(), start + options.batch_size);
        batches.emplace_back(misses.begin() + static_cast<std::ptrdiff_t>(start),
                             misses.begin() + static_cast<std::ptrdiff_t>(end));
    }
    const auto run_batch = [&](const std::vector<std::size_t>& batch) {
        std::vector<std::string> inputs;
        inputs.reserve(batch.size());
        for (const auto i : batch) inputs.push_back(texts[i]);
        auto vectors = provider.embed_batch(inputs);
        if (vectors.size() != batch.size()) throw Error(ErrorCode::MalformedResponse, "embedding count mismatch");
        for (std::size_t j = 0; j < batch.size(); ++j) out[batch[j]] = std::move(vectors[j]);
    };
    for (std::size_t start = 0; start < batches.size(); start += options.max_in_flight) {
        const auto end = std::min(batches.size(), start + options.max_in_flight);
        if (end - start == 1) {
            run_batch(batches[start]);
            continue;
        }
        std::vector<std::future<void>> inflight;
        for (std::size_t b = start; b < end; ++b) {
            inflight.push_back(std::async(std::launch::async, run_batch, std::cref(batches[b])));
        }
        for (auto& f : inflight) f.get();
    }

    std::size_t dimension = options.dimension;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (dimension == 0) dimension = out[i].size();
        if (out[i].size() != dimension) {
            throw Error(ErrorCode::DimensionMismatch, "text " + std::to_string(i) + " embedded with dimension " +
                                                          std::to_string(out[i].size()) + ", expected " +
                                                          std::to_string(dimension));
        }
        for (const double x : out[i]) {
            if (!std::isfinite(x)) throw Error(ErrorCode::MalformedResponse, "non-finite embedding value");
        }
    }
    if (cache) {
        for (const auto i : misses) cache->insert(provider.model_name(), texts[i], out[i]);
    }
    return out;
}

/// Provider plus its cache and batching options, bundled so callers can embed
/// keywords and queries with the same model that embedded the documents.
class Embedder {
public:
    Embedder(std::shared_ptr<EmbeddingProvider> provider, EmbedOptions options = {},
             std::shared_ptr<EmbeddingCache> cache = nullptr)
        : provider_(std::move(provider)),
          options_(options),
          cache_(std::move(cache)),
          dimension_(std::make_shared<std::atomic<std::size_t>>(options.dimension)) {}

    /// The first successful call fixes the session dimension; later calls
    /// returning another dimension fail with DimensionMismatch.
    std::vector<Vector> embed(const std::vector<std::string>& texts) const {
        auto options = options_;
        options.dimension = dimension_->load();
        auto vectors = embed_texts(*provider_, texts, options, cache_.get());
        std::size_t expected = 0;
        dimension_->compare_exchange_strong(expected, vectors.front().size());
        return vectors;
    }
    Vector embed_one(const std::string& text) const { return embed({text}).front(); }

    EmbeddingProvider& provider() const { return *provider_; }
    const std::string& model_name() const { return provider_->model_name(); }
    std::size_t dimension() const { return dimension_->load(); }

private:
    std::shared_ptr<EmbeddingProvider> provider_;
    EmbedOptions options_;
    std::shared_ptr<EmbeddingCache> cache_;
    std::shared_ptr<std::atomic<std::size_t>> dimension_;
};

inline Embedder make_embedder(const EmbeddingProviderConfig& cfg, HttpTransport transport = {}) {
    cfg.validate();
    std::shared_ptr<EmbeddingCache> cache;
    if (cfg.cache_path) cache = std::make_shared<EmbeddingCache>(*cfg.cache_path);
    EmbedOptions options{cfg.batch_size, cfg.max_in_flight, 0};
    if (cfg.kind == EmbeddingProviderKind::local_deterministic) {
        options.dimension = cfg.dimension;
        return Embedder(std::make_shared<LocalHashEmbedder>(cfg.dimension, cfg.model_name), options, cache);
    }
    if (!transport) transport = make_http_transport();
    return Embedder(std::make_shared<RemoteEmbedder>(cfg, std::move(transport)), options, cache);
}

}  // namespace topicforge
