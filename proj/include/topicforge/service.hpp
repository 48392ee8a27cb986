#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

// Eigen must precede httplib: resolv.h defines a _res macro that clashes with Eigen internals.
#include <Eigen/Core>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "topicforge/chatrouter.hpp"
#include "topicforge/clustering.hpp"
#include "topicforge/corpus.hpp"
#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"
#include "topicforge/llm.hpp"
#include "topicforge/persistence.hpp"
#include "topicforge/reduction.hpp"
#include "topicforge/topicstore.hpp"
#include "topicforge/topwords.hpp"

namespace topicforge {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ServiceConfig {
    std::string listen_address = "127.0.0.1:8080";
    std::filesystem::path state_path;  // empty: keep state in memory only
    EmbeddingProviderConfig embedding;
    std::optional<LlmProviderConfig> llm;  // nullopt: no language model, placeholder titles
    ReducerConfig reducer;
    std::optional<std::size_t> n_topics;
    std::optional<std::size_t> min_cluster_size;
    std::vector<std::string> cors_allowed_origins = {"*"};
    int min_token_length = kDefaultMinTokenLength;
    std::optional<std::filesystem::path> stopwords_path =
        std::filesystem::path(TOPICFORGE_DATA_DIR) / "stopwords_en.txt";
    TopicSettings topics;
    bool allow_mutations_via_chat = true;
    std::filesystem::path prompts_dir = PromptTemplates::default_dir();

    void validate() const {
        if (n_topics && *n_topics < 1) throw Error(ErrorCode::InvalidConfig, "n_topics must be >= 1");
        if (min_cluster_size && *min_cluster_size < 2) throw Error(ErrorCode::InvalidConfig, "min_cluster_size must be >= 2");
        if (min_token_length < 1) throw Error(ErrorCode::InvalidConfig, "min_token_length must be >= 1");
        if (listen_address.find(':') == std::string::npos) {
            throw Error(ErrorCode::InvalidConfig, "listen_address must be host:port");
        }
        embedding.validate();
        if (llm) llm->validate();
        if (!state_path.empty()) {
            const auto dir = state_path.parent_path().empty() ? std::filesystem::path(".") : state_path.parent_path();
            std::error_code ec;
            std::filesystem::create_directories(dir, ec);
            if (!std::filesystem::is_directory(dir)) {
                throw Error(ErrorCode::InvalidConfig, "state directory is not writable: " + dir.string());
            }
        }
    }

    std::pair<std::string, int> listen_host_port() const {
        const auto colon = listen_address.rfind(':');
        try {
            return {listen_address.substr(0, colon), std::stoi(listen_address.substr(colon + 1))};
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidConfig, "bad port in listen_address '" + listen_address + "'");
        }
    }

    /// Snapshot stored with each fitted state. Contains no secrets: API keys
    /// are only ever referenced by environment variable name.
    nlohmann::json to_json() const {
        nlohmann::json llm_json = nullptr;
        if (llm) {
            llm_json = {{"provider", llm->kind == LlmProviderKind::mock ? "mock" : "remote"},
                        {"model", llm->model_name},
                        {"temperature", llm->temperature},
                        {"max_output_tokens", llm->max_output_tokens}};
        }
        return {{"embedding",
                 {{"provider", embedding.kind == EmbeddingProviderKind::remote ? "remote" : "local"},
                  {"model", embedding.model_name},
                  {"dimension", embedding.dimension}}},
                {"llm", llm_json},
                {"reducer",
                 {{"kind", to_string(reducer.kind)},
                  {"target_dim", reducer.target_dim},
                  {"random_seed", reducer.random_seed},
                  {"n_neighbors", reducer.umap_n_neighbors},
                  {"min_dist", reducer.umap_min_dist},
                  {"epochs", reducer.umap_epochs}}},
                {"n_topics", n_topics ? nlohmann::json(*n_topics) : nlohmann::json()},
                {"min_cluster_size", min_cluster_size ? nlohmann::json(*min_cluster_size) : nlohmann::json()},
                {"min_token_length", min_token_length},
                {"topics", topics.to_json()}};
    }

    static ServiceConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
        static const std::set<std::string> known = {"listen_address",   "state_path",         "embedding",
                                                    "llm",              "reducer",            "n_topics",
                                                    "min_cluster_size", "cors_allowed_origins", "min_token_length",
                                                    "stopwords_path",   "topics",             "allow_mutations_via_chat",
                                                    "prompts_dir"};
        if (!j.is_object()) throw Error(ErrorCode::InvalidConfig, "config must be a JSON object");
        for (const auto& [key, _] : j.items()) {
            if (!known.contains(key)) throw Error(ErrorCode::InvalidConfig, "unknown config key '" + key + "'");
        }
        const auto resolve = [&](const std::string& p) {
            const std::filesystem::path path(p);
            return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
        };
        const auto reject_secrets = [](const nlohmann::json& section, const std::string& name) {
            if (section.contains("api_key")) {
                throw Error(ErrorCode::InvalidConfig,
                            name + ".api_key is not allowed; name an environment variable with api_key_env instead");
            }
        };
        try {
            ServiceConfig c;
            c.listen_address = j.value("listen_address", c.listen_address);
            if (j.contains("state_path") && !j["state_path"].is_null()) c.state_path = resolve(j["state_path"]);
            if (j.contains("embedding")) {
                const auto& e = j["embedding"];
                reject_secrets(e, "embedding");
                const auto provider = e.value("provider", std::string("local"));
                if (provider != "local" && provider != "remote") {
                    throw Error(ErrorCode::InvalidConfig, "embedding.provider must be local or remote");
                }
                c.embedding.kind = provider == "remote" ? EmbeddingProviderKind::remote : EmbeddingProviderKind::local_deterministic;
                c.embedding.endpoint_url = e.value("endpoint_url", c.embedding.endpoint_url);
                c.embedding.model_name = e.value("model", c.embedding.model_name);
                c.embedding.api_key_env_var = e.value("api_key_env", c.embedding.api_key_env_var);
                c.embedding.batch_size = e.value("batch_size", c.embedding.batch_size);
                c.embedding.max_in_flight = e.value("max_in_flight", c.embedding.max_in_flight);
                c.embedding.dimension = e.value("dimension", c.embedding.dimension);
                if (e.contains("cache_path") && !e["cache_path"].is_null()) c.embedding.cache_path = resolve(e["cache_path"]).string();
            }
            if (j.contains("llm")) {
                const auto& l = j["llm"];
                if (!l.is_null()) {
                    reject_secrets(l, "llm");
                    const auto provider = l.value("provider", std::string("mock"));
                    if (provider != "none") {
                        if (provider != "mock" && provider != "remote") {
                            throw Error(ErrorCode::InvalidConfig, "llm.provider must be mock, remote or none");
                        }
                        LlmProviderConfig lc;
                        lc.kind = provider == "remote" ? LlmProviderKind::remote_chat : LlmProviderKind::mock;
                        lc.endpoint_url = l.value("endpoint_url", lc.endpoint_url);
                        lc.model_name = l.value("model", lc.model_name);
                        lc.api_key_env_var = l.value("api_key_env", lc.api_key_env_var);
                        lc.temperature = l.value("temperature", lc.temperature);
                        lc.max_output_tokens = l.value("max_output_tokens", lc.max_output_tokens);
                        lc.request_timeout = std::chrono::seconds(l.value("timeout_seconds", 60));
                        if (l.contains("mock_script") && !l["mock_script"].is_null()) lc.mock_script_path = resolve(l["mock_script"]);
                        c.llm = lc;
                    }
                }
            }
            if (j.contains("reducer")) {
                const auto& r = j["reducer"];
                c.reducer.kind = reducer_kind_from_string(r.value("kind", std::string("pca_like")));
                c.reducer.target_dim = r.value("target_dim", c.reducer.target_dim);
                c.reducer.random_seed = r.value("random_seed", c.reducer.random_seed);
                c.reducer.umap_n_neighbors = r.value("n_neighbors", c.reducer.umap_n_neighbors);
                c.reducer.umap_min_dist = r.value("min_dist", c.reducer.umap_min_dist);
                c.reducer.umap_epochs = r.value("epochs", c.reducer.umap_epochs);
            }
            const auto optional_size = [&](const char* key) -> std::optional<std::size_t> {
                if (!j.contains(key) || j[key].is_null()) return std::nullopt;
                if (!j[key].is_number_integer() || j[key].get<long long>() < 1) {
                    throw Error(ErrorCode::InvalidConfig, std::string(key) + " must be a positive integer");
                }
                return j[key].get<std::size_t>();
            };
            c.n_topics = optional_size("n_topics");
            c.min_cluster_size = optional_size("min_cluster_size");
            c.cors_allowed_origins = j.value("cors_allowed_origins", c.cors_allowed_origins);
            c.min_token_length = j.value("min_token_length", c.min_token_length);
            if (j.contains("stopwords_path")) {
                if (j["stopwords_path"].is_null()) {
                    c.stopwords_path.reset();
                } else {
                    c.stopwords_path = resolve(j["stopwords_path"]);
                }
            }
            if (j.contains("topics")) c.topics = TopicSettings::from_json(j["topics"]);
            c.allow_mutations_via_chat = j.value("allow_mutations_via_chat", c.allow_mutations_via_chat);
            if (j.contains("prompts_dir")) c.prompts_dir = resolve(j["prompts_dir"]);
            c.validate();
            return c;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidConfig, std::string("config: ") + e.what());
        }
    }

    static ServiceConfig load(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open config " + path.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in, nullptr, true, true);  // comments allowed
        } catch (const nlohmann::json::parse_error& e) {
            throw Error(ErrorCode::InvalidConfig, path.string() + ": " + e.what());
        }
        return from_json(j, path.parent_path());
    }

    IngestOptions ingest_options() const {
        IngestOptions o;
        o.min_token_len = min_token_length;
        if (stopwords_path) o.stopwords = load_stopwords(stopwords_path->string());
        return o;
    }
};

// ---------------------------------------------------------------------------
// Fit pipeline
// ---------------------------------------------------------------------------

struct FitOptions {
    std::optional<std::size_t> n_topics;
    std::optional<std::size_t> min_cluster_size;
};

struct FitOutcome {
    TopicModelState state;
    std::vector<std::string> warnings;
    std::size_t discovered_clusters = 0;
};

inline std::shared_ptr<const WordEmbeddings> embed_vocabulary(const Corpus& corpus, const Embedder& embedder) {
    std::vector<std::string> words;
    const auto& vocab = corpus.vocabulary();
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        if (vocab.at(static_cast<TokenId>(id)).document_frequency >= 2) words.push_back(vocab.word(static_cast<TokenId>(id)));
    }
    auto out = std::make_shared<WordEmbeddings>();
    if (words.empty()) return out;
    const auto vectors = embedder.embed(words);
    for (std::size_t i = 0; i < words.size(); ++i) (*out)[words[i]] = vectors[i];
    return out;
}

namespace detail {

template <typename F>
auto run_stage(const std::string& stage, F&& f) -> decltype(f()) {
    spdlog::info("fit: {}", stage);
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(stage, e);
    }
}

inline EmbeddingMatrix matrix_from_points(const PointMatrix& p) {
    std::vector<double> values(static_cast<std::size_t>(p.size()));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) values[static_cast<std::size_t>(i * p.cols() + j)] = p(i, j);
    }
    return EmbeddingMatrix(static_cast<std::size_t>(p.rows()), static_cast<std::size_t>(p.cols()), std::move(values));
}

}  // namespace detail

/// embed, reduce, density-cluster, resolve noise, optionally merge to a
/// fixed topic count, then build and name the topics.
inline FitOutcome fit_model(const ServiceConfig& cfg, const std::vector<std::string>& texts, const Embedder& embedder,
                            const TopicContext& base_ctx, const FitOptions& options = {}) {
    FitOutcome out;
    auto corpus = detail::run_stage("ingest", [&] {
        return std::make_shared<const Corpus>(ingest_corpus(texts, cfg.ingest_options()));
    });
    for (const auto& w : corpus->warnings()) {
        spdlog::warn("{}", w);
        out.warnings.push_back(w);
    }
    auto full = detail::run_stage("embed", [&] {
        return std::make_shared<const EmbeddingMatrix>(EmbeddingMatrix::from_rows(embedder.embed(texts)));
    });
    auto reduction = detail::run_stage("reduce", [&] { return fit_reduce(*full, cfg.reducer); });
    auto reduced = std::make_shared<const EmbeddingMatrix>(detail::matrix_from_points(reduction.coordinates));
    std::vector<DocId> all(corpus->size());
    std::iota(all.begin(), all.end(), DocId{0});
    const auto points = rows_of(*reduced, all);
    const auto mcs = options.min_cluster_size.value_or(cfg.min_cluster_size.value_or(default_min_cluster_size(corpus->size())));
    auto assignment = detail::run_stage("cluster", [&] { return resolve_noise(points, hdbscan_cluster(points, mcs)); });
    out.discovered_clusters = static_cast<std::size_t>(assignment.n_clusters);
    const auto n_topics = options.n_topics ? options.n_topics : cfg.n_topics;
    if (n_topics) {
        if (*n_topics < out.discovered_clusters) {
            assignment = detail::run_stage("merge", [&] { return agglomerative_merge_to_k(points, assignment, *n_topics); });
        } else if (*n_topics > out.discovered_clusters) {
            out.warnings.push_back("requested " + std::to_string(*n_topics) + " topics but only " +
                                   std::to_string(out.discovered_clusters) + " clusters were found; keeping " +
                                   std::to_string(out.discovered_clusters));
            spdlog::warn("{}", out.warnings.back());
        }
    }
    auto snapshot = cfg.to_json();
    snapshot["effective_min_cluster_size"] = mcs;
    snapshot["discovered_clusters"] = out.discovered_clusters;
    TopicContext ctx = base_ctx;
    if (cfg.topics.cosine_topwords && !ctx.word_embeddings) {
        ctx.word_embeddings = detail::run_stage("topwords", [&] { return embed_vocabulary(*corpus, embedder); });
    }
    out.state = detail::run_stage("topics", [&] {
        return build_topics(corpus, full, reduced, std::make_shared<const ReducerModel>(std::move(reduction.model)), assignment,
                            ctx, cfg.topics, snapshot);
    });
    return out;
}

// ---------------------------------------------------------------------------
// Service
// ---------------------------------------------------------------------------

struct ApiRequest {
    std::string method;
    std::string path;
    std::string body;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

inline int http_status_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidTopicIndex:
    case ErrorCode::NotFound: return 404;
    case ErrorCode::Conflict: return 409;
    case ErrorCode::ProviderUnavailable: return 503;
    default: return 400;
    }
}

inline ApiResponse error_response(int status, const std::string& code, const std::string& message) {
    return {status, {{"error", {{"code", code}, {"message", message}}}}};
}

inline ApiResponse error_response(const Error& e) {
    return error_response(http_status_for(e.code()), std::string(error_code_name(e.code())), e.what());
}

inline nlohmann::json topic_summary_json(const Topic& t) {
    return {{"index", t.index},
            {"title", t.title},
            {"description", t.description},
            {"size", t.size()},
            {"topwords", t.topwords_tfidf.words(20)}};
}

inline nlohmann::json topic_detail_json(const Topic& t) {
    nlohmann::json j = topic_summary_json(t);
    j["doc_ids"] = t.doc_ids;
    j["topwords_tfidf"] = t.topwords_tfidf.to_json();
    j["topwords_cosine"] = t.topwords_cosine ? t.topwords_cosine->to_json() : nlohmann::json();
    return j;
}

class TopicService {
public:
    TopicService(ServiceConfig cfg, std::shared_ptr<Embedder> embedder, LlmContext llm)
        : cfg_(std::move(cfg)), embedder_(std::move(embedder)), llm_(std::move(llm)) {}

    static std::unique_ptr<TopicService> create(const ServiceConfig& cfg, HttpTransport transport = {}) {
        auto embedder = std::make_shared<Embedder>(make_embedder(cfg.embedding, transport));
        LlmContext llm{nullptr, PromptTemplates::load(cfg.prompts_dir)};
        if (cfg.llm) llm.provider = make_llm_provider(*cfg.llm, transport);
        auto service = std::make_unique<TopicService>(cfg, std::move(embedder), std::move(llm));
        if (!cfg.state_path.empty() && std::filesystem::exists(cfg.state_path)) {
            service->install(load_state(cfg.state_path));
            spdlog::info("loaded state version {} from {}", service->snapshot()->version, cfg.state_path.string());
        }
        return service;
    }

    ~TopicService() {
        stop();
        std::vector<std::thread> threads;
        {
            std::lock_guard lock(jobs_mutex_);
            for (auto& [_, t] : job_threads_) threads.push_back(std::move(t));
        }
        for (auto& t : threads) {
            if (t.joinable()) t.join();
        }
    }

    const ServiceConfig& config() const noexcept { return cfg_; }
    const Embedder& embedder() const noexcept { return *embedder_; }
    const LlmContext& llm() const noexcept { return llm_; }

    std::shared_ptr<const TopicModelState> snapshot() const {
        std::lock_guard lock(state_mutex_);
        return state_;
    }

    /// Publishes `state` without persisting it.
    void install(TopicModelState state) {
        auto next = std::make_shared<const TopicModelState>(std::move(state));
        std::lock_guard lock(state_mutex_);
        state_ = std::move(next);
    }

    void set_save_checkpoint(SaveCheckpoint hook) { save_checkpoint_ = std::move(hook); }

    TopicContext topic_context() const {
        auto ctx = base_context();
        if (cfg_.topics.cosine_topwords) ctx.word_embeddings = vocabulary_embeddings();
        return ctx;
    }

    /// Runs the pipeline synchronously, then persists and publishes the
    /// result. A refit continues the version sequence of the state it replaces.
    FitOutcome fit(const std::vector<std::string>& texts, const FitOptions& options = {}) {
        auto outcome = fit_model(cfg_, texts, *embedder_, base_context(), options);
        std::lock_guard writer(writer_mutex_);
        if (const auto current = snapshot()) outcome.state.version = current->version + 1;
        commit(outcome.state);
        return outcome;
    }

    std::vector<ChatTurn> transcript() const {
        std::lock_guard lock(transcript_mutex_);
        return transcript_;
    }

    ApiResponse handle(const ApiRequest& request) {
        try {
            return dispatch(request);
        } catch (const Error& e) {
            return error_response(e);
        } catch (const nlohmann::json::exception& e) {
            return error_response(400, "InvalidArgument", std::string("bad request body: ") + e.what());
        } catch (const std::exception& e) {
            spdlog::error("unhandled error for {} {}: {}", request.method, request.path, e.what());
            return error_response(500, "Internal", e.what());
        }
    }

    /// Binds the listener; port 0 picks a free port. Returns the bound port.
    int bind(const std::string& host, int port) {
        server_ = std::make_unique<httplib::Server>();
        const auto route = [this](const httplib::Request& req, httplib::Response& res) {
            auto api = handle(ApiRequest{req.method, req.path, req.body});
            res.status = api.status;
            res.set_content(api.body.dump(), "application/json; charset=utf-8");
        };
        server_->Get(".*", route);
        server_->Post(".*", route);
        server_->Delete(".*", route);
        server_->Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
        server_->set_post_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
            const auto origin = req.get_header_value("Origin");
            for (const auto& allowed : cfg_.cors_allowed_origins) {
                if (allowed == "*" || allowed == origin) {
                    res.set_header("Access-Control-Allow-Origin", allowed == "*" ? "*" : origin);
                    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
                    res.set_header("Access-Control-Allow-Headers", "Content-Type");
                    break;
                }
            }
        });
        const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
        if (bound < 0) throw Error(ErrorCode::InvalidConfig, "cannot listen on " + host + ":" + std::to_string(port));
        return bound;
    }

    /// Blocks serving requests until stop().
    void listen() {
        if (!server_) throw Error(ErrorCode::InvalidConfig, "bind() must be called before listen()");
        server_->listen_after_bind();
    }

    void stop() {
        if (server_) server_->stop();
    }

    void wait_for_jobs() {
        std::unique_lock lock(jobs_mutex_);
        jobs_cv_.wait(lock, [this] { return !fit_running_; });
    }

private:
    struct Job {
        std::string status = "queued";
        nlohmann::json detail = nlohmann::json::object();
    };

    ApiResponse dispatch(const ApiRequest& r) {
        std::vector<std::string> parts;
        for (std::size_t pos = 0; pos < r.path.size();) {
            const auto next = r.path.find('/', pos);
            const auto piece = r.path.substr(pos, next == std::string::npos ? std::string::npos : next - pos);
            if (!piece.empty()) parts.push_back(piece);
            if (next == std::string::npos) break;
            pos = next + 1;
        }
        const auto body = [&] {
            if (trim(r.body).empty()) return nlohmann::json::object();
            auto j = nlohmann::json::parse(r.body);
            if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "request body must be a JSON object");
            return j;
        };
        const auto& m = r.method;
        const auto n = parts.size();
        if (n == 1 && parts[0] == "topics" && m == "GET") return list_topics();
        if (n == 2 && parts[0] == "topics" && parts[1] == "merge" && m == "POST") {
            const auto b = body();
            const auto indices = b.at("indices").get<std::vector<std::size_t>>();
            return mutate(b, [&](const TopicModelState& s, const TopicContext& ctx) { return merge_topics(s, indices, ctx); });
        }
        if (n == 2 && parts[0] == "topics" && parts[1] == "from-keyword" && m == "POST") {
            const auto b = body();
            const auto keyword = b.at("keyword").get<std::string>();
            return mutate(b, [&](const TopicModelState& s, const TopicContext& ctx) { return create_topic_keyword(s, keyword, ctx); });
        }
        if (n == 2 && parts[0] == "topics" && m == "GET") return get_topic(parse_index(parts[1]));
        if (n == 2 && parts[0] == "topics" && m == "DELETE") {
            const auto index = parse_index(parts[1]);
            return mutate(body(), [&](const TopicModelState& s, const TopicContext& ctx) { return delete_topic(s, index, ctx); });
        }
        if (n == 3 && parts[0] == "topics" && parts[2] == "split" && m == "POST") return split(parse_index(parts[1]), body());
        if (n == 1 && parts[0] == "chat" && m == "POST") return chat(body());
        if (n == 1 && parts[0] == "transcript" && m == "GET") {
            nlohmann::json turns = nlohmann::json::array();
            for (const auto& t : transcript()) turns.push_back(t.to_json());
            return {200, turns};
        }
        if (n == 1 && parts[0] == "fit" && m == "POST") return start_fit(body());
        if (n == 2 && parts[0] == "jobs" && m == "GET") return job_status(parts[1]);
        if (n == 2 && parts[0] == "state" && parts[1] == "version" && m == "GET") {
            return {200, {{"version", require_state()->version}}};
        }
        return error_response(404, "NotFound", "no route for " + m + " " + r.path);
    }

    static std::size_t parse_index(const std::string& s) {
        if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
            throw Error(ErrorCode::InvalidArgument, "topic index must be a non-negative integer: '" + s + "'");
        }
        return static_cast<std::size_t>(std::stoul(s));
    }

    std::shared_ptr<const TopicModelState> require_state() const {
        auto s = snapshot();
        if (!s) throw Error(ErrorCode::NotFound, "no model has been fitted or loaded");
        return s;
    }

    ApiResponse list_topics() const {
        const auto s = require_state();
        nlohmann::json topics = nlohmann::json::array();
        for (const auto& t : s->topics) topics.push_back(topic_summary_json(t));
        return {200, topics};
    }

    ApiResponse get_topic(std::size_t index) const {
        const auto s = require_state();
        auto j = topic_detail_json(s->topic(index));
        j["version"] = s->version;
        return {200, j};
    }

    ApiResponse split(std::size_t index, const nlohmann::json& b) {
        const auto method = b.at("method").get<std::string>();
        const auto params = b.value("params", nlohmann::json::object());
        if (method == "kmeans") {
            const auto k = params.at("n_clusters").get<std::size_t>();
            std::optional<std::uint64_t> seed;
            if (params.contains("seed")) seed = params["seed"].get<std::uint64_t>();
            return mutate(b, [&](const TopicModelState& s, const TopicContext& ctx) { return split_topic_kmeans(s, index, k, ctx, seed); });
        }
        if (method == "hdbscan") {
            const auto mcs = params.at("min_cluster_size").get<std::size_t>();
            return mutate(b, [&](const TopicModelState& s, const TopicContext& ctx) { return split_topic_hdbscan(s, index, mcs, ctx); });
        }
        if (method == "keyword") {
            const auto keyword = params.at("keyword").get<std::string>();
            return mutate(b, [&](const TopicModelState& s, const TopicContext& ctx) { return split_topic_keyword(s, index, keyword, ctx); });
        }
        throw Error(ErrorCode::InvalidArgument, "split method must be kmeans, hdbscan or keyword");
    }

    TopicContext base_context() const {
        TopicContext ctx;
        ctx.embedder = embedder_.get();
        if (llm_.provider) ctx.namer = make_namer(llm_);
        return ctx;
    }

    /// Vocabulary vectors for cosine top-words, computed once per corpus.
    std::shared_ptr<const WordEmbeddings> vocabulary_embeddings() const {
        const auto state = snapshot();
        if (!state) return nullptr;
        std::lock_guard lock(word_embeddings_mutex_);
        if (word_embeddings_corpus_ != state->corpus) {
            word_embeddings_ = embed_vocabulary(*state->corpus, *embedder_);
            word_embeddings_corpus_ = state->corpus;
        }
        return word_embeddings_;
    }

    using Mutation = std::function<TopicModelState(const TopicModelState&, const TopicContext&)>;

    /// Single writer: a second mutation while one is in flight gets 409.
    ApiResponse mutate(const nlohmann::json& body, const Mutation& fn) {
        std::unique_lock writer(writer_mutex_, std::try_to_lock);
        if (!writer.owns_lock()) return error_response(409, "Conflict", "another modification is in progress");
        const auto current = require_state();
        check_expected_version(body, *current);
        auto next = fn(*current, topic_context());
        commit(next);
        const auto& record = next.history.back();
        nlohmann::json topics = nlohmann::json::array();
        for (const auto& t : next.topics) topics.push_back(topic_summary_json(t));
        return {200,
                {{"version", next.version},
                 {"operation", to_string(record.kind)},
                 {"no_op", record.no_op},
                 {"note", record.note},
                 {"affected", record.affected_after},
                 {"topics", topics}}};
    }

    static void check_expected_version(const nlohmann::json& body, const TopicModelState& current) {
        if (body.contains("expected_version") && body["expected_version"].get<std::uint64_t>() != current.version) {
            throw Error(ErrorCode::Conflict, "state is at version " + std::to_string(current.version) + ", request expected " +
                                                 body["expected_version"].dump());
        }
    }

    ApiResponse chat(const nlohmann::json& b) {
        const auto prompt = b.at("prompt").get<std::string>();
        if (trim(prompt).empty()) throw Error(ErrorCode::InvalidArgument, "prompt must not be empty");
        std::unique_lock writer(writer_mutex_, std::try_to_lock);
        if (!writer.owns_lock()) return error_response(409, "Conflict", "another modification is in progress");
        const auto current = require_state();
        check_expected_version(b, *current);
        TopicModelState working = *current;
        ChatEnvironment env{llm_, embedder_.get(), topic_context(), cfg_.allow_mutations_via_chat};
        const auto registry = default_registry();
        auto turn = route_prompt(env, registry, working, prompt);
        if (working.version != current->version) commit(working);
        {
            std::lock_guard lock(transcript_mutex_);
            transcript_.push_back(turn);
        }
        return {200, turn.to_json()};
    }

    /// Persists (when configured) and then publishes. Caller holds the writer lock.
    void commit(const TopicModelState& next) {
        if (!cfg_.state_path.empty()) save_state(next, cfg_.state_path, save_checkpoint_);
        install(next);
    }

    ApiResponse start_fit(const nlohmann::json& b) {
        std::vector<std::string> texts;
        if (b.contains("texts")) {
            texts = b["texts"].get<std::vector<std::string>>();
        } else if (b.contains("corpus_path")) {
            texts = load_corpus_texts(b["corpus_path"].get<std::string>());
        } else {
            throw Error(ErrorCode::InvalidArgument, "fit needs 'texts' or 'corpus_path'");
        }
        FitOptions options;
        if (b.contains("n_topics") && !b["n_topics"].is_null()) options.n_topics = b["n_topics"].get<std::size_t>();
        if (b.contains("min_cluster_size") && !b["min_cluster_size"].is_null()) {
            options.min_cluster_size = b["min_cluster_size"].get<std::size_t>();
        }
        std::lock_guard lock(jobs_mutex_);
        if (fit_running_) return error_response(409, "Conflict", "a fit job is already running");
        const auto id = "job-" + std::to_string(++job_counter_);
        jobs_[id] = Job{};
        fit_running_ = true;
        job_threads_[id] = std::thread([this, id, texts = std::move(texts), options] { run_fit_job(id, texts, options); });
        return {202, {{"job_id", id}, {"status", "queued"}}};
    }

    void run_fit_job(const std::string& id, const std::vector<std::string>& texts, const FitOptions& options) {
        set_job(id, "running", nlohmann::json::object());
        try {
            const auto outcome = fit(texts, options);
            set_job(id, "succeeded",
                    {{"version", outcome.state.version},
                     {"topics", outcome.state.topics.size()},
                     {"discovered_clusters", outcome.discovered_clusters},
                     {"warnings", outcome.warnings}});
        } catch (const StageError& e) {
            set_job(id, "failed", {{"stage", e.stage()}, {"code", std::string(error_code_name(e.code()))}, {"message", e.what()}});
        } catch (const Error& e) {
            set_job(id, "failed", {{"code", std::string(error_code_name(e.code()))}, {"message", e.what()}});
        } catch (const std::exception& e) {
            set_job(id, "failed", {{"message", e.what()}});
        }
        std::lock_guard lock(jobs_mutex_);
        fit_running_ = false;
        jobs_cv_.notify_all();
    }

    void set_job(const std::string& id, std::string status, nlohmann::json detail) {
        std::lock_guard lock(jobs_mutex_);
        jobs_[id] = Job{std::move(status), std::move(detail)};
    }

    ApiResponse job_status(const std::string& id) const {
        std::lock_guard lock(jobs_mutex_);
        const auto it = jobs_.find(id);
        if (it == jobs_.end()) return error_response(404, "NotFound", "unknown job " + id);
        nlohmann::json j = it->second.detail;
        j["job_id"] = id;
        j["status"] = it->second.status;
        return {200, j};
    }

    ServiceConfig cfg_;
    std::shared_ptr<Embedder> embedder_;
    LlmContext llm_;
    SaveCheckpoint save_checkpoint_;

    mutable std::mutex state_mutex_;
    std::shared_ptr<const TopicModelState> state_;
    std::mutex writer_mutex_;

    mutable std::mutex word_embeddings_mutex_;
    mutable std::shared_ptr<const WordEmbeddings> word_embeddings_;
    mutable std::shared_ptr<const Corpus> word_embeddings_corpus_;

    mutable std::mutex transcript_mutex_;
    std::vector<ChatTurn> transcript_;

    mutable std::mutex jobs_mutex_;
    std::condition_variable jobs_cv_;
    std::map<std::string, Job> jobs_;
    std::map<std::string, std::thread> job_threads_;
    std::uint64_t job_counter_ = 0;
    bool fit_running_ = false;

    std::unique_ptr<httplib::Server> server_;
};

}  // namespace topicforge
