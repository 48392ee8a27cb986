#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"
#include "topicforge/http.hpp"
#include "topicforge/topicstore.hpp"

#ifndef TOPICFORGE_DATA_DIR
#define TOPICFORGE_DATA_DIR "data"
#endif

namespace topicforge {

// ---------------------------------------------------------------------------
// Prompt templates
// ---------------------------------------------------------------------------

/// Versioned prompt files (`<name>.txt` plus a VERSION file) with
/// `{{placeholder}}` substitution.
class PromptTemplates {
public:
    static std::filesystem::path default_dir() { return std::filesystem::path(TOPICFORGE_DATA_DIR) / "prompts" / "v1"; }

    static PromptTemplates load(const std::filesystem::path& dir = default_dir()) {
        if (!std::filesystem::is_directory(dir)) {
            throw Error(ErrorCode::InvalidConfig, "prompt directory not found: " + dir.string());
        }
        PromptTemplates t;
        for (const auto& entry : std::filesystem::directory_iterator(dir)) {
            if (entry.path().extension() != ".txt") continue;
            std::ifstream in(entry.path(), std::ios::binary);
            std::ostringstream ss;
            ss << in.rdbuf();
            t.templates_[entry.path().stem().string()] = ss.str();
        }
        std::ifstream version(dir / "VERSION");
        std::getline(version, t.version_);
        t.version_ = std::string(trim(t.version_));
        if (t.version_.empty()) throw Error(ErrorCode::InvalidConfig, "prompt directory has no VERSION: " + dir.string());
        return t;
    }

    const std::string& version() const noexcept { return version_; }
    bool has(const std::string& name) const { return templates_.contains(name); }

    std::string render(const std::string& name, const std::map<std::string, std::string>& values) const {
        const auto it = templates_.find(name);
        if (it == templates_.end()) throw Error(ErrorCode::InvalidConfig, "missing prompt template '" + name + "'");
        const std::string& src = it->second;
        std::string out;
        std::size_t pos = 0;
        while (true) {
            const auto open = src.find("{{", pos);
            if (open == std::string::npos) break;
            const auto close = src.find("}}", open);
            if (close == std::string::npos) break;
            out.append(src, pos, open - pos);
            const auto key = src.substr(open + 2, close - open - 2);
            const auto value = values.find(key);
            if (value == values.end()) {
                throw Error(ErrorCode::InvalidConfig, "prompt '" + name + "' needs a value for '" + key + "'");
            }
            out += value->second;
            pos = close + 2;
        }
        out.append(src, pos);
        return out;
    }

private:
    std::map<std::string, std::string> templates_;
    std::string version_;
};

// ---------------------------------------------------------------------------
// Messages and providers
// ---------------------------------------------------------------------------

struct FunctionCall {
    std::string name;
    nlohmann::json arguments = nlohmann::json::object();

    nlohmann::json to_json() const { return {{"name", name}, {"arguments", arguments}}; }
    bool operator==(const FunctionCall&) const = default;
};

struct ChatMessage {
    std::string role;  // system | user | assistant
    std::string content;
    std::optional<FunctionCall> function_call;  // assistant turns only

    nlohmann::json to_json() const {
        nlohmann::json j = {{"role", role}, {"content", content}};
        if (function_call) j["function_call"] = function_call->to_json();
        return j;
    }
};

struct FunctionDeclaration {
    std::string name;
    std::string description;
    nlohmann::json parameters;  // JSON schema
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    std::vector<FunctionDeclaration> functions;

    std::string last_user_message() const {
        for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
            if (it->role == "user") return it->content;
        }
        return {};
    }

    nlohmann::json to_json() const {
        nlohmann::json j = {{"messages", nlohmann::json::array()}, {"functions", nlohmann::json::array()}};
        for (const auto& m : messages) j["messages"].push_back(m.to_json());
        for (const auto& f : functions) j["functions"].push_back(f.name);
        return j;
    }
};

struct ChatResponse {
    std::string content;
    std::optional<FunctionCall> function_call;

    nlohmann::json to_json() const {
        nlohmann::json j = {{"content", content}};
        j["function_call"] = function_call ? function_call->to_json() : nlohmann::json();
        return j;
    }
};

/// Rewrites a Python-literal dict (single quotes, True/False/None) as JSON.
inline std::string python_literal_to_json(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const char c = s[i];
        if (quote) {
            if (c == '\\' && i + 1 < s.size()) {
                if (s[i + 1] == '\'') {
                    out += '\'';
                } else {
                    out += c;
                    out += s[i + 1];
                }
                ++i;
            } else if (c == quote) {
                out += '"';
                quote = 0;
            } else if (c == '"') {
                out += "\\\"";
            } else {
                out += c;
            }
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            out += '"';
            continue;
        }
        const auto word = [&](std::string_view w) { return s.substr(i, w.size()) == w; };
        if (word("True")) {
            out += "true";
            i += 3;
        } else if (word("False")) {
            out += "false";
            i += 4;
        } else if (word("None")) {
            out += "null";
            i += 3;
        } else {
            out += c;
        }
    }
    return out;
}

/// Function-call arguments arrive as an object, a JSON string, or a Python
/// literal string.
inline nlohmann::json parse_function_arguments(const nlohmann::json& raw) {
    if (raw.is_object()) return raw;
    if (raw.is_null()) return nlohmann::json::object();
    if (!raw.is_string()) throw Error(ErrorCode::MalformedResponse, "function arguments must be an object");
    const auto& text = raw.get_ref<const std::string&>();
    if (trim(text).empty()) return nlohmann::json::object();
    for (const auto& candidate : {text, python_literal_to_json(text)}) {
        try {
            auto parsed = nlohmann::json::parse(candidate);
            if (parsed.is_object()) return parsed;
        } catch (const nlohmann::json::exception&) {
        }
    }
    throw Error(ErrorCode::MalformedResponse, "function arguments are not a JSON object: " + text);
}

struct LlmExchange {
    std::uint64_t id = 0;
    nlohmann::json request;
    nlohmann::json response;  // or {"error": ...}
};

/// Base class: `complete` logs every exchange with an increasing id.
class LlmProvider {
public:
    virtual ~LlmProvider() = default;
    virtual const std::string& model_name() const = 0;

    ChatResponse complete(const ChatRequest& request) {
        const auto id = ++next_id_;
        LlmExchange exchange{id, request.to_json(), nullptr};
        try {
            auto response = do_complete(request);
            exchange.response = response.to_json();
            spdlog::debug("llm #{} ok: {}", id, exchange.response.dump());
            record(std::move(exchange));
            return response;
        } catch (const Error& e) {
            exchange.response = {{"error", e.what()}};
            spdlog::debug("llm #{} failed: {}", id, e.what());
            record(std::move(exchange));
            throw;
        }
    }

    std::vector<LlmExchange> exchanges() const {
        std::lock_guard lock(log_mutex_);
        return {log_.begin(), log_.end()};
    }
    std::uint64_t request_count() const noexcept { return next_id_.load(); }

protected:
    virtual ChatResponse do_complete(const ChatRequest& request) = 0;

private:
    void record(LlmExchange exchange) {
        std::lock_guard lock(log_mutex_);
        log_.push_back(std::move(exchange));
        if (log_.size() > 1000) log_.pop_front();
    }

    std::atomic<std::uint64_t> next_id_{0};
    mutable std::mutex log_mutex_;
    std::deque<LlmExchange> log_;
};

/// Scripted provider. Rules are tried in order against the last user message;
/// `match` is a substring or "*". A rule carries a `response` text, a
/// `function_call` (only used when the request declares functions), or an
/// `error` ("unavailable" or "malformed"). `times` bounds how often a rule
/// fires and `delay_ms` simulates latency.
class MockLlmProvider final : public LlmProvider {
public:
    struct Rule {
        std::string match = "*";
        std::optional<std::string> response;
        std::optional<FunctionCall> function_call;
        std::optional<std::string> error;
        std::optional<int> times;
        int delay_ms = 0;
    };

    explicit MockLlmProvider(std::vector<Rule> rules, std::string model = "mock") : model_(std::move(model)), rules_(std::move(rules)) {
        used_.assign(rules_.size(), 0);
    }

    static MockLlmProvider::Rule rule_from_json(const nlohmann::json& j) {
        Rule r;
        r.match = j.value("match", std::string("*"));
        if (j.contains("response")) r.response = j["response"].get<std::string>();
        if (j.contains("function_call")) {
            const auto& f = j["function_call"];
            r.function_call = FunctionCall{f.at("name").get<std::string>(),
                                           f.contains("arguments") ? f["arguments"] : nlohmann::json::object()};
        }
        if (j.contains("error")) r.error = j["error"].get<std::string>();
        if (j.contains("times")) r.times = j["times"].get<int>();
        r.delay_ms = j.value("delay_ms", 0);
        return r;
    }

    static std::shared_ptr<MockLlmProvider> from_json(const nlohmann::json& script) {
        if (!script.is_array()) throw Error(ErrorCode::InvalidConfig, "mock script must be a JSON array");
        std::vector<Rule> rules;
        for (const auto& j : script) rules.push_back(rule_from_json(j));
        return std::make_shared<MockLlmProvider>(std::move(rules));
    }

    static std::shared_ptr<MockLlmProvider> from_file(const std::filesystem::path& path) {
        std::ifstream in(path);
        if (!in) throw Error(ErrorCode::InvalidConfig, "cannot open mock script " + path.string());
        try {
            return from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::InvalidConfig, "mock script " + path.string() + ": " + e.what());
        }
    }

    const std::string& model_name() const override { return model_; }

protected:
    ChatResponse do_complete(const ChatRequest& request) override {
        const auto text = request.last_user_message();
        std::optional<Rule> chosen;
        {
            std::lock_guard lock(mutex_);
            for (std::size_t i = 0; i < rules_.size(); ++i) {
                const auto& r = rules_[i];
                if (r.times && used_[i] >= *r.times) continue;
                if (r.match != "*" && text.find(r.match) == std::string::npos) continue;
                if (r.function_call && !r.response && !r.error && request.functions.empty()) continue;
                ++used_[i];
                chosen = r;
                break;
            }
        }
        if (!chosen) return ChatResponse{"", std::nullopt};
        if (chosen->delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(chosen->delay_ms));
        if (chosen->error) {
            if (*chosen->error == "malformed") throw Error(ErrorCode::MalformedResponse, "scripted malformed response");
            throw Error(ErrorCode::ProviderUnavailable, "scripted provider failure");
        }
        ChatResponse response;
        response.content = chosen->response.value_or("");
        if (chosen->function_call && !request.functions.empty()) response.function_call = chosen->function_call;
        return response;
    }

private:
    std::string model_;
    std::vector<Rule> rules_;
    std::vector<int> used_;
    std::mutex mutex_;
};

enum class LlmProviderKind { remote_chat, mock };

struct LlmProviderConfig {
    LlmProviderKind kind = LlmProviderKind::mock;
    std::string endpoint_url;
    std::string model_name = "mock";
    std::string api_key_env_var;
    double temperature = 0.0;
    int max_output_tokens = 1024;
    std::chrono::seconds request_timeout{60};
    std::optional<std::filesystem::path> mock_script_path;

    void validate() const {
        if (temperature < 0.0 || temperature > 2.0) throw Error(ErrorCode::InvalidConfig, "temperature must be in [0, 2]");
        if (max_output_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "max_output_tokens must be positive");
        if (kind == LlmProviderKind::remote_chat && (endpoint_url.empty() || api_key_env_var.empty())) {
            throw Error(ErrorCode::InvalidConfig, "remote chat needs endpoint_url and api_key_env_var");
        }
    }
};

/// Chat-completions style endpoint with tool calling.
class RemoteChatProvider final : public LlmProvider {
public:
    RemoteChatProvider(LlmProviderConfig cfg, HttpTransport transport, RetryPolicy retry = {})
        : cfg_(std::move(cfg)), transport_(std::move(transport)), retry_(std::move(retry)) {
        cfg_.validate();
    }

    const std::string& model_name() const override { return cfg_.model_name; }

    static nlohmann::json wire_request(const LlmProviderConfig& cfg, const ChatRequest& request) {
        nlohmann::json j = {{"model", cfg.model_name},
                            {"temperature", cfg.temperature},
                            {"max_tokens", cfg.max_output_tokens},
                            {"messages", nlohmann::json::array()}};
        for (const auto& m : request.messages) {
            nlohmann::json msg = {{"role", m.role}, {"content", m.content}};
            if (m.function_call) {
                msg["tool_calls"] = {{{"id", "call_0"},
                                      {"type", "function"},
                                      {"function",
                                       {{"name", m.function_call->name}, {"arguments", m.function_call->arguments.dump()}}}}};
            }
            j["messages"].push_back(std::move(msg));
        }
        if (!request.functions.empty()) {
            j["tools"] = nlohmann::json::array();
            for (const auto& f : request.functions) {
                j["tools"].push_back({{"type", "function"},
                                      {"function", {{"name", f.name}, {"description", f.description}, {"parameters", f.parameters}}}});
            }
            j["tool_choice"] = "auto";
        }
        return j;
    }

    static ChatResponse parse_wire_response(const std::string& body) {
        try {
            const auto doc = nlohmann::json::parse(body);
            const auto& message = doc.at("choices").at(0).at("message");
            ChatResponse r;
            if (message.contains("content") && message["content"].is_string()) r.content = message["content"];
            const nlohmann::json* call = nullptr;
            if (message.contains("tool_calls") && message["tool_calls"].is_array() && !message["tool_calls"].empty()) {
                call = &message["tool_calls"][0].at("function");
            } else if (message.contains("function_call") && message["function_call"].is_object()) {
                call = &message["function_call"];
            }
            if (call) {
                r.function_call = FunctionCall{call->at("name").get<std::string>(),
                                               call->contains("arguments") ? (*call)["arguments"] : nlohmann::json()};
            }
            return r;
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::MalformedResponse, std::string("chat response: ") + e.what());
        }
    }

protected:
    ChatResponse do_complete(const ChatRequest& request) override {
        const auto body = wire_request(cfg_, request).dump();
        std::vector<std::pair<std::string, std::string>> headers;
        if (const char* key = std::getenv(cfg_.api_key_env_var.c_str())) {
            headers.emplace_back("Authorization", std::string("Bearer ") + key);
        }
        HttpResponse response;
        std::string last_error;
        auto backoff = retry_.initial_backoff;
        for (int attempt = 1; attempt <= retry_.attempts; ++attempt) {
            response = transport_(HttpRequest{"POST", cfg_.endpoint_url, body, headers});
            if (response.ok()) break;
            last_error = response.error.empty() ? "HTTP " + std::to_string(response.status) : response.error;
            const bool retryable = response.status == 0 || response.status == 429 || response.status >= 500;
            spdlog::warn("chat request attempt {}/{} failed: {}", attempt, retry_.attempts, last_error);
            if (!retryable) break;
            if (attempt < retry_.attempts) {
                retry_.sleep(backoff);
                backoff *= 2;
            }
        }
        if (!response.ok()) throw Error(ErrorCode::ProviderUnavailable, "chat: " + last_error);
        return parse_wire_response(response.body);
    }

private:
    LlmProviderConfig cfg_;
    HttpTransport transport_;
    RetryPolicy retry_;
};

inline std::shared_ptr<LlmProvider> make_llm_provider(const LlmProviderConfig& cfg, HttpTransport transport = {}) {
    cfg.validate();
    if (cfg.kind == LlmProviderKind::mock) {
        if (cfg.mock_script_path) return MockLlmProvider::from_file(*cfg.mock_script_path);
        return std::make_shared<MockLlmProvider>(std::vector<MockLlmProvider::Rule>{});
    }
    if (!transport) transport = make_http_transport(cfg.request_timeout);
    return std::make_shared<RemoteChatProvider>(cfg, std::move(transport));
}

// ---------------------------------------------------------------------------
// Topic-level language operations
// ---------------------------------------------------------------------------

struct LlmContext {
    std::shared_ptr<LlmProvider> provider;
    PromptTemplates templates;

    ChatResponse ask(const std::string& prompt) const {
        if (!provider) throw Error(ErrorCode::ProviderUnavailable, "no language model configured");
        return provider->complete(ChatRequest{{ChatMessage{"user", prompt, std::nullopt}}, {}});
    }
};

namespace detail {

inline std::string strip_decoration(std::string_view s) {
    std::string t(trim(s));
    while (!t.empty() && (t.front() == '*' || t.front() == '#' || t.front() == '"' || t.front() == '\'' ||
                          t.front() == '-' || t.front() == '`')) {
        t.erase(t.begin());
    }
    while (!t.empty() && (t.back() == '*' || t.back() == '"' || t.back() == '\'' || t.back() == '`')) t.pop_back();
    return std::string(trim(t));
}

inline bool starts_with_ci(std::string_view s, std::string_view prefix) {
    if (s.size() < prefix.size()) return false;
    for (std::size_t i = 0; i < prefix.size(); ++i) {
        if (std::tolower(static_cast<unsigned char>(s[i])) != std::tolower(static_cast<unsigned char>(prefix[i]))) return false;
    }
    return true;
}

inline std::vector<std::string> words_of(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

/// First `max_sentences` sentences of `s`.
inline std::string first_sentences(const std::string& s, std::size_t max_sentences) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if ((s[i] == '.' || s[i] == '!' || s[i] == '?') && (i + 1 == s.size() || s[i + 1] == ' ' || s[i + 1] == '\n')) {
            if (++count == max_sentences) return std::string(trim(std::string_view(s).substr(0, i + 1)));
        }
    }
    return std::string(trim(s));
}

}  // namespace detail

/// Cuts a title at its first sentence end or comma and keeps at most
/// `max_words` words.
inline std::string clean_title(std::string_view raw, std::size_t max_words = 8) {
    auto t = detail::strip_decoration(raw);
    const auto cut = t.find_first_of(".,!?;\n");
    if (cut != std::string::npos) t = t.substr(0, cut);
    auto words = detail::words_of(t);
    if (words.size() > max_words) words.resize(max_words);
    std::string out;
    for (const auto& w : words) out += (out.empty() ? "" : " ") + w;
    return detail::strip_decoration(out);
}

/// Parses "Title: ... / Description: ..." text or a JSON object with
/// `title` and `description`. Returns nullopt when no title is present.
inline std::optional<TopicLabel> parse_topic_label(const std::string& text) {
    std::string title, description;
    const auto brace = text.find('{');
    if (brace != std::string::npos) {
        try {
            const auto j = nlohmann::json::parse(text.substr(brace, text.rfind('}') - brace + 1));
            title = j.value("title", std::string());
            description = j.value("description", std::string());
        } catch (const nlohmann::json::exception&) {
        }
    }
    if (title.empty()) {
        std::istringstream in(text);
        std::vector<std::string> loose;
        bool in_description = false;
        for (std::string line; std::getline(in, line);) {
            const auto l = detail::strip_decoration(line);
            if (detail::starts_with_ci(l, "title:")) {
                title = l.substr(6);
                in_description = false;
            } else if (detail::starts_with_ci(l, "description:")) {
                description = l.substr(12);
                in_description = true;
            } else if (in_description && !l.empty()) {
                description += " " + l;
            } else if (!l.empty()) {
                loose.push_back(l);
            }
        }
        if (title.empty() && !loose.empty()) {
            title = loose.front();
            if (description.empty()) {
                for (std::size_t i = 1; i < loose.size(); ++i) description += (description.empty() ? "" : " ") + loose[i];
            }
        }
    }
    title = clean_title(title);
    if (title.empty()) return std::nullopt;
    return TopicLabel{title, detail::first_sentences(std::string(trim(description)), 3)};
}

/// Asks for a title and description; two attempts, then the placeholder.
inline TopicLabel name_and_describe(const LlmContext& ctx, const TopwordList& naming_words, std::size_t topic_index) {
    std::string words;
    for (const auto& w : naming_words.words()) words += (words.empty() ? "" : ", ") + w;
    const auto prompt = ctx.templates.render("naming", {{"topic_index", std::to_string(topic_index)}, {"words", words}});
    for (int attempt = 0; attempt < 2; ++attempt) {
        try {
            if (auto label = parse_topic_label(ctx.ask(prompt).content)) return *label;
            spdlog::warn("topic {} naming: unusable response (attempt {})", topic_index, attempt + 1);
        } catch (const Error& e) {
            if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::MalformedResponse) throw;
            spdlog::warn("topic {} naming failed (attempt {}): {}", topic_index, attempt + 1, e.what());
        }
    }
    return TopicLabel{placeholder_title(topic_index), ""};
}

inline TopicNamer make_namer(LlmContext ctx) {
    return [ctx = std::move(ctx)](const TopwordList& words, std::size_t index) { return name_and_describe(ctx, words, index); };
}

inline constexpr std::size_t kMaxQueryKeywords = 5;

inline std::vector<std::string> parse_keyword_list(const std::string& text) {
    std::vector<std::string> raw;
    const auto open = text.find('[');
    const auto close = text.rfind(']');
    bool parsed = false;
    if (open != std::string::npos && close != std::string::npos && close > open) {
        try {
            for (const auto& item : nlohmann::json::parse(text.substr(open, close - open + 1))) {
                if (item.is_string()) raw.push_back(item.get<std::string>());
            }
            parsed = true;
        } catch (const nlohmann::json::exception&) {
        }
    }
    if (!parsed) {
        std::string piece;
        for (const char c : text + "\n") {
            if (c == ',' || c == '\n' || c == ';') {
                raw.push_back(piece);
                piece.clear();
            } else {
                piece += c;
            }
        }
    }
    std::vector<std::string> out;
    std::set<std::string> seen;
    static const std::regex numbering(R"(^\d+[.)]\s*)");
    for (auto& k : raw) {
        auto clean = detail::strip_decoration(std::regex_replace(std::string(trim(k)), numbering, ""));
        if (clean.empty() || !seen.insert(clean).second) continue;
        out.push_back(std::move(clean));
        if (out.size() == kMaxQueryKeywords) break;
    }
    return out;
}

/// Up to five keywords; the whole question when extraction fails.
inline std::vector<std::string> extract_query_keywords(const LlmContext& ctx, const std::string& question) {
    if (trim(question).empty()) throw Error(ErrorCode::InvalidArgument, "question must not be empty");
    try {
        auto keywords = parse_keyword_list(ctx.ask(ctx.templates.render("keywords", {{"question", question}})).content);
        if (!keywords.empty()) return keywords;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::MalformedResponse) throw;
        spdlog::warn("keyword extraction failed: {}", e.what());
    }
    return {question};
}

inline constexpr std::size_t kAnswerDocumentChars = 1500;

struct RetrievedDocument {
    DocId id = 0;
    double similarity = 0.0;
    std::string text;  // truncated to the per-document budget
};

struct Answer {
    std::string text;
    std::vector<std::string> keywords;
    std::vector<RetrievedDocument> documents;
    bool provider_ok = true;
};

inline std::string truncate_utf8(const std::string& s, std::size_t max_bytes) {
    if (s.size() <= max_bytes) return s;
    std::size_t cut = max_bytes;
    while (cut > 0 && (static_cast<unsigned char>(s[cut]) & 0xC0) == 0x80) --cut;
    return s.substr(0, cut);
}

/// The topic's documents nearest to the mean of the query keyword vectors.
inline std::vector<RetrievedDocument> retrieve_documents(const Embedder& embedder, const TopicModelState& state,
                                                         std::size_t topic_index, const std::vector<std::string>& keywords,
                                                         std::size_t k) {
    const auto& topic = state.topic(topic_index);
    if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be positive");
    const auto vectors = embedder.embed(keywords);
    Vector query(vectors.front().size(), 0.0);
    for (const auto& v : vectors) {
        for (std::size_t j = 0; j < query.size(); ++j) query[j] += v[j] / static_cast<double>(vectors.size());
    }
    std::vector<RetrievedDocument> out;
    for (const auto& hit : knn_search(*state.embeddings, topic.doc_ids, query, k)) {
        out.push_back({hit.id, hit.similarity, truncate_utf8(state.corpus->document(hit.id).text, kAnswerDocumentChars)});
    }
    return out;
}

inline Answer answer_question(const LlmContext& ctx, const Embedder& embedder, const TopicModelState& state,
                              std::size_t topic_index, const std::string& question, std::size_t k = 5) {
    state.topic(topic_index);
    Answer answer;
    answer.keywords = extract_query_keywords(ctx, question);
    answer.documents = retrieve_documents(embedder, state, topic_index, answer.keywords, k);
    std::string docs;
    for (const auto& d : answer.documents) docs += "[document " + std::to_string(d.id) + "]\n" + d.text + "\n\n";
    try {
        answer.text = ctx.ask(ctx.templates.render("answer", {{"topic_index", std::to_string(topic_index)},
                                                              {"topic_title", state.topics[topic_index].title},
                                                              {"documents", docs},
                                                              {"question", question}}))
                          .content;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::MalformedResponse) throw;
        answer.provider_ok = false;
        answer.text = "The language model is unavailable. Most relevant documents:";
        for (const auto& d : answer.documents) answer.text += " " + std::to_string(d.id);
    }
    return answer;
}

struct IdentifiedTopic {
    std::size_t index = 0;
    bool used_fallback = false;
};

/// Nearest topic by cosine between the query vector and full centroids.
inline std::size_t nearest_topic(const Embedder& embedder, const TopicModelState& state, const std::string& query) {
    const auto q = embedder.embed_one(query);
    std::size_t best = 0;
    double best_sim = -2.0;
    for (const auto& t : state.topics) {
        const double s = cosine_similarity(q, t.centroid_full);
        if (s > best_sim) {
            best_sim = s;
            best = t.index;
        }
    }
    return best;
}

inline IdentifiedTopic identify_topic(const LlmContext& ctx, const Embedder& embedder, const TopicModelState& state,
                                      const std::string& query) {
    if (trim(query).empty()) throw Error(ErrorCode::InvalidArgument, "query must not be empty");
    std::string listing;
    for (const auto& t : state.topics) {
        listing += std::to_string(t.index) + ": " + t.title + " (";
        const auto words = t.topwords_tfidf.words(10);
        for (std::size_t i = 0; i < words.size(); ++i) listing += (i ? ", " : "") + words[i];
        listing += ")\n";
    }
    try {
        const auto reply = ctx.ask(ctx.templates.render("identify", {{"topics", listing}, {"query", query}})).content;
        static const std::regex number(R"(\d+)");
        std::smatch m;
        if (std::regex_search(reply, m, number)) {
            const auto index = std::stoull(m.str());
            if (index < state.topics.size()) return {static_cast<std::size_t>(index), false};
        }
        spdlog::warn("identify_topic: no valid topic number in reply, using centroid similarity");
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::MalformedResponse) throw;
    }
    return {nearest_topic(embedder, state, query), true};
}

struct TopicComparison {
    std::string text;
    std::vector<std::string> shared_words;
    bool provider_ok = true;
};

inline TopicComparison compare_topics(const LlmContext& ctx, const TopicModelState& state, std::size_t a, std::size_t b) {
    const auto& ta = state.topic(a);
    const auto& tb = state.topic(b);
    if (a == b) throw Error(ErrorCode::SameTopic, "cannot compare topic " + std::to_string(a) + " with itself");
    const auto wa = ta.topwords_tfidf.words(20);
    const auto wb = tb.topwords_tfidf.words(20);
    const auto join = [](const std::vector<std::string>& w) {
        std::string s;
        for (const auto& x : w) s += (s.empty() ? "" : ", ") + x;
        return s;
    };
    TopicComparison out;
    const std::set<std::string> set_b(wb.begin(), wb.end());
    for (const auto& w : wa) {
        if (set_b.contains(w)) out.shared_words.push_back(w);
    }
    try {
        out.text = ctx.ask(ctx.templates.render("compare", {{"index_a", std::to_string(a)},
                                                            {"title_a", ta.title},
                                                            {"words_a", join(wa)},
                                                            {"index_b", std::to_string(b)},
                                                            {"title_b", tb.title},
                                                            {"words_b", join(wb)}}))
                       .content;
    } catch (const Error& e) {
        if (e.code() != ErrorCode::ProviderUnavailable && e.code() != ErrorCode::MalformedResponse) throw;
        out.provider_ok = false;
        out.text = "Topic " + std::to_string(a) + " top words: " + join(wa) + ". Topic " + std::to_string(b) +
                   " top words: " + join(wb) + ". Shared: " + (out.shared_words.empty() ? "none" : join(out.shared_words)) + ".";
    }
    return out;
}

}  // namespace topicforge
