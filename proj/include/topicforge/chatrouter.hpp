#pragma once

#include <functional>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "topicforge/error.hpp"
#include "topicforge/llm.hpp"
#include "topicforge/topicstore.hpp"

namespace topicforge {

// ---------------------------------------------------------------------------
// Schema validation (the subset used by the function declarations)
// ---------------------------------------------------------------------------

/// Validates `value` against a JSON schema using type, properties, required,
/// additionalProperties, enum, minimum/maximum, minLength, items and
/// minItems. Returns a description of the first problem.
inline std::optional<std::string> schema_violation(const nlohmann::json& schema, const nlohmann::json& value,
                                                   const std::string& path = "arguments") {
    if (schema.contains("type")) {
        const auto type = schema["type"].get<std::string>();
        const bool ok = (type == "object" && value.is_object()) || (type == "array" && value.is_array()) ||
                        (type == "string" && value.is_string()) || (type == "boolean" && value.is_boolean()) ||
                        (type == "integer" && value.is_number_integer()) ||
                        (type == "number" && value.is_number());
        if (!ok) return path + " must be " + (type == "integer" || type == "array" || type == "object" ? "an " : "a ") + type;
    }
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto& e : schema["enum"]) found = found || e == value;
        if (!found) return path + " must be one of " + schema["enum"].dump();
    }
    if (value.is_number()) {
        if (schema.contains("minimum") && value.get<double>() < schema["minimum"].get<double>()) {
            return path + " must be >= " + schema["minimum"].dump();
        }
        if (schema.contains("maximum") && value.get<double>() > schema["maximum"].get<double>()) {
            return path + " must be <= " + schema["maximum"].dump();
        }
    }
    if (value.is_string() && schema.contains("minLength") &&
        value.get_ref<const std::string&>().size() < schema["minLength"].get<std::size_t>()) {
        return path + " must have at least " + schema["minLength"].dump() + " characters";
    }
    if (value.is_array()) {
        if (schema.contains("minItems") && value.size() < schema["minItems"].get<std::size_t>()) {
            return path + " must have at least " + schema["minItems"].dump() + " items";
        }
        if (schema.contains("items")) {
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (auto v = schema_violation(schema["items"], value[i], path + "[" + std::to_string(i) + "]")) return v;
            }
        }
    }
    if (value.is_object()) {
        const auto properties = schema.value("properties", nlohmann::json::object());
        for (const auto& name : schema.value("required", nlohmann::json::array())) {
            if (!value.contains(name.get<std::string>())) return path + " is missing '" + name.get<std::string>() + "'";
        }
        for (const auto& [key, item] : value.items()) {
            if (properties.contains(key)) {
                if (auto v = schema_violation(properties[key], item, path + "." + key)) return v;
            } else if (schema.contains("additionalProperties") && schema["additionalProperties"] == false) {
                return path + " has unknown field '" + key + "'";
            }
        }
    }
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Function registry
// ---------------------------------------------------------------------------

struct ChatEnvironment {
    LlmContext llm;
    const Embedder* embedder = nullptr;
    TopicContext topic_context;
    bool allow_mutations = true;
};

struct FunctionResult {
    nlohmann::json data;
    std::string summary;
};

using FunctionHandler =
    std::function<FunctionResult(const nlohmann::json& args, TopicModelState& state, const ChatEnvironment& env)>;

struct FunctionSpec {
    std::string name;
    std::string description;
    nlohmann::json parameters;
    bool mutates = false;
    FunctionHandler handler;
};

class FunctionRegistry {
public:
    void add(FunctionSpec spec) {
        const auto name = spec.name;
        if (!specs_.emplace(name, std::move(spec)).second) {
            throw Error(ErrorCode::InvalidArgument, "function '" + name + "' registered twice");
        }
        order_.push_back(name);
    }

    const FunctionSpec* find(const std::string& name) const {
        const auto it = specs_.find(name);
        return it == specs_.end() ? nullptr : &it->second;
    }

    std::vector<FunctionDeclaration> declarations() const {
        std::vector<FunctionDeclaration> out;
        for (const auto& name : order_) {
            const auto& s = specs_.at(name);
            out.push_back({s.name, s.description, s.parameters});
        }
        return out;
    }

    /// Parses and validates a raw call; returns the problem if unusable.
    std::optional<std::string> check(FunctionCall& call) const {
        const auto* spec = find(call.name);
        if (!spec) return "unknown function '" + call.name + "'";
        try {
            call.arguments = parse_function_arguments(call.arguments);
        } catch (const Error& e) {
            return e.what();
        }
        return schema_violation(spec->parameters, call.arguments);
    }

private:
    std::map<std::string, FunctionSpec> specs_;
    std::vector<std::string> order_;
};

namespace detail {

inline nlohmann::json int_param(const std::string& description, int minimum) {
    return {{"type", "integer"}, {"minimum", minimum}, {"description", description}};
}

inline nlohmann::json object_schema(nlohmann::json properties) {
    nlohmann::json required = nlohmann::json::array();
    for (const auto& [key, _] : properties.items()) required.push_back(key);
    return {{"type", "object"}, {"properties", std::move(properties)}, {"required", required}, {"additionalProperties", false}};
}

inline nlohmann::json topic_brief(const Topic& t) {
    return {{"index", t.index}, {"title", t.title}, {"size", t.size()}};
}

inline std::string join_indices(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + std::to_string(v[i]);
    return s;
}

/// Result of a topic-modifying function: the history record plus the
/// affected topics after the operation.
inline FunctionResult modification_result(const TopicModelState& state) {
    const auto& record = state.history.back();
    FunctionResult r;
    r.data = {{"operation", to_string(record.kind)}, {"no_op", record.no_op}, {"version", state.version},
              {"topics", nlohmann::json::array()}};
    if (record.no_op) {
        r.data["note"] = record.note;
        r.summary = "No change: " + record.note;
        return r;
    }
    for (const auto i : record.affected_after) r.data["topics"].push_back(topic_brief(state.topics[i]));
    r.summary = to_string(record.kind) + " of topics " + join_indices(record.affected_before) + " produced topics " +
                join_indices(record.affected_after) + "; " + std::to_string(state.topics.size()) + " topics now";
    return r;
}

inline std::size_t size_arg(const nlohmann::json& args, const char* key) { return args.at(key).get<std::size_t>(); }

}  // namespace detail

inline FunctionRegistry default_registry() {
    using detail::int_param;
    using detail::object_schema;
    using detail::size_arg;
    FunctionRegistry r;
    const nlohmann::json text = {{"type", "string"}, {"minLength", 1}};

    r.add({"knn_search", "Find the documents of a topic most similar to a query.",
           object_schema({{"topic_index", int_param("topic number", 0)},
                          {"query", text},
                          {"k", int_param("number of documents", 1)}}),
           false, [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               if (!env.embedder) throw Error(ErrorCode::InvalidConfig, "no embedder configured");
               const auto topic = size_arg(a, "topic_index");
               const auto docs = retrieve_documents(*env.embedder, s, topic, {a.at("query").get<std::string>()},
                                                    size_arg(a, "k"));
               FunctionResult out;
               out.data = {{"topic_index", topic}, {"documents", nlohmann::json::array()}};
               std::vector<std::size_t> ids;
               for (const auto& d : docs) {
                   out.data["documents"].push_back({{"id", d.id}, {"similarity", d.similarity}, {"text", d.text}});
                   ids.push_back(d.id);
               }
               out.summary = std::to_string(docs.size()) + " documents from topic " + std::to_string(topic) + ": " +
                             detail::join_indices(ids);
               return out;
           }});

    r.add({"split_topic_kmeans", "Split a topic into n_clusters sub-topics with k-means.",
           object_schema({{"topic_idx", int_param("topic number", 0)}, {"n_clusters", int_param("number of sub-topics", 2)}}),
           true, [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = split_topic_kmeans(s, size_arg(a, "topic_idx"), size_arg(a, "n_clusters"), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"split_topic_hdbscan", "Split a topic by density clustering.",
           object_schema({{"topic_idx", int_param("topic number", 0)}, {"min_cluster_size", int_param("minimum cluster size", 2)}}),
           true, [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = split_topic_hdbscan(s, size_arg(a, "topic_idx"), size_arg(a, "min_cluster_size"), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"split_topic_keyword", "Move the documents of a topic that are closer to a keyword into a new topic.",
           object_schema({{"topic_idx", int_param("topic number", 0)}, {"keyword", text}}), true,
           [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = split_topic_keyword(s, size_arg(a, "topic_idx"), a.at("keyword").get<std::string>(), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"create_topic_keyword", "Create a new topic from all documents closer to a keyword than to their topic.",
           object_schema({{"keyword", text}}), true,
           [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = create_topic_keyword(s, a.at("keyword").get<std::string>(), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"merge_topics", "Merge two or more topics into one.",
           object_schema({{"indices", {{"type", "array"}, {"items", int_param("topic number", 0)}, {"minItems", 2}}}}), true,
           [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = merge_topics(s, a.at("indices").get<std::vector<std::size_t>>(), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"delete_topic", "Delete a topic and move its documents to the nearest remaining topics.",
           object_schema({{"index", int_param("topic number", 0)}}), true,
           [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               s = delete_topic(s, size_arg(a, "index"), env.topic_context);
               return detail::modification_result(s);
           }});

    r.add({"compare_topics", "Describe the similarities and differences of two topics.",
           object_schema({{"topic_index_a", int_param("first topic", 0)}, {"topic_index_b", int_param("second topic", 0)}}),
           false, [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               const auto c = compare_topics(env.llm, s, size_arg(a, "topic_index_a"), size_arg(a, "topic_index_b"));
               return FunctionResult{{{"comparison", c.text}, {"shared_words", c.shared_words}}, c.text};
           }});

    r.add({"identify_topic", "Find the topic that best matches a query.", object_schema({{"query", text}}), false,
           [](const nlohmann::json& a, TopicModelState& s, const ChatEnvironment& env) {
               if (!env.embedder) throw Error(ErrorCode::InvalidConfig, "no embedder configured");
               const auto found = identify_topic(env.llm, *env.embedder, s, a.at("query").get<std::string>());
               const auto& t = s.topics[found.index];
               return FunctionResult{{{"index", found.index}, {"title", t.title}, {"used_fallback", found.used_fallback}},
                                     "Topic " + std::to_string(found.index) + " (" + t.title + ")"};
           }});

    r.add({"list_topics", "List all topics with their sizes and top words.",
           {{"type", "object"}, {"properties", nlohmann::json::object()}, {"additionalProperties", false}}, false,
           [](const nlohmann::json&, TopicModelState& s, const ChatEnvironment&) {
               FunctionResult out;
               out.data = nlohmann::json::array();
               for (const auto& t : s.topics) {
                   auto brief = detail::topic_brief(t);
                   brief["top_words"] = t.topwords_tfidf.words(10);
                   out.data.push_back(std::move(brief));
                   out.summary += (out.summary.empty() ? "" : "; ") + std::to_string(t.index) + ": " + t.title;
               }
               return out;
           }});
    return r;
}

// ---------------------------------------------------------------------------
// Rule-based router used when the language model is unavailable
// ---------------------------------------------------------------------------

namespace detail {

inline std::optional<std::size_t> number_value(const std::string& s) {
    static const std::map<std::string, std::size_t> words = {{"two", 2},   {"three", 3}, {"four", 4}, {"five", 5},
                                                             {"six", 6},   {"seven", 7}, {"eight", 8}, {"nine", 9},
                                                             {"ten", 10}};
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
        return static_cast<std::size_t>(std::stoull(s));
    }
    std::string lower;
    for (const char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    const auto it = words.find(lower);
    if (it == words.end()) return std::nullopt;
    return it->second;
}

inline std::string quoted_phrase(const std::string& s) {
    static const std::regex quoted(R"re(["']([^"']+)["'])re");
    std::smatch m;
    if (std::regex_search(s, m, quoted)) return std::string(trim(m.str(1)));
    return {};
}

}  // namespace detail

/// Maps common phrasings to function calls without a language model.
inline std::optional<FunctionCall> fallback_route(const std::string& prompt) {
    using std::regex;
    const auto icase = regex::ECMAScript | regex::icase;
    static const std::string num = R"((\d+|two|three|four|five|six|seven|eight|nine|ten))";
    static const regex merge(R"(\bmerge\s+(?:the\s+)?topics?\s+#?(\d+(?:\s*(?:,|and|&|\+)\s*#?\d+)+))", icase);
    static const regex del(R"(\b(?:delete|remove|drop)\s+(?:the\s+)?topic\s+#?(\d+))", icase);
    static const regex compare(R"(\b(?:compare|difference\s+between)\s+topics?\s+#?(\d+)\s+(?:and|with|to|vs\.?)\s+(?:topic\s+)?#?(\d+))", icase);
    static const regex split_keyword(
        R"(\bsplit\s+topic\s+#?(\d+)\s+(?:by|on|using|with|around)\s+(?:the\s+)?(?:keyword|word|term)\s+["']?([^"'?.!]+)["']?)", icase);
    static const regex split_hdbscan(R"(\bsplit\s+topic\s+#?(\d+)\s+(?:with|using|by)\s+(?:hdbscan|density)(?:\D*(\d+))?)", icase);
    static const regex split_into(R"(\bsplit\s+topic\s+#?(\d+)\s+(?:in|into)\s+)" + num, icase);
    static const regex subtopics(num + R"(\s+(?:\w+\s+)?sub-?topics\s+(?:of|for|in|from)\s+topic\s+#?(\d+))", icase);
    static const regex split_plain(R"(\bsplit\s+topic\s+#?(\d+))", icase);
    static const regex create(
        R"(\b(?:create|make|add|build)\s+(?:a\s+)?(?:new\s+)?topic\s+(?:from|for|about|on|with|around)\s+(?:the\s+)?(?:keyword\s+|word\s+|term\s+)?["']?([^"'?.!]+)["']?)", icase);
    static const regex list(R"(\b(?:list|show)\s+(?:me\s+)?(?:all\s+|the\s+)*topics\b|\bwhat\s+topics\b)", icase);
    static const regex which(R"(\bwhich\s+topic\b)", icase);
    static const regex topic_ref(R"(\btopic\s+#?(\d+))", icase);
    static const regex digits(R"(\d+)");

    std::smatch m;
    const auto idx = [&](int group) { return static_cast<std::size_t>(std::stoull(m.str(group))); };
    if (std::regex_search(prompt, m, merge)) {
        std::vector<std::size_t> indices;
        const auto list_text = m.str(1);
        for (std::sregex_iterator it(list_text.begin(), list_text.end(), digits), end; it != end; ++it) {
            indices.push_back(static_cast<std::size_t>(std::stoull(it->str())));
        }
        return FunctionCall{"merge_topics", {{"indices", indices}}};
    }
    if (std::regex_search(prompt, m, del)) return FunctionCall{"delete_topic", {{"index", idx(1)}}};
    if (std::regex_search(prompt, m, compare)) {
        return FunctionCall{"compare_topics", {{"topic_index_a", idx(1)}, {"topic_index_b", idx(2)}}};
    }
    if (std::regex_search(prompt, m, split_keyword)) {
        return FunctionCall{"split_topic_keyword", {{"topic_idx", idx(1)}, {"keyword", std::string(trim(m.str(2)))}}};
    }
    if (std::regex_search(prompt, m, split_hdbscan)) {
        const std::size_t mcs = m[2].matched ? idx(2) : 15;
        return FunctionCall{"split_topic_hdbscan", {{"topic_idx", idx(1)}, {"min_cluster_size", mcs}}};
    }
    if (std::regex_search(prompt, m, split_into)) {
        return FunctionCall{"split_topic_kmeans", {{"topic_idx", idx(1)}, {"n_clusters", *detail::number_value(m.str(2))}}};
    }
    if (std::regex_search(prompt, m, subtopics)) {
        return FunctionCall{"split_topic_kmeans", {{"topic_idx", idx(2)}, {"n_clusters", *detail::number_value(m.str(1))}}};
    }
    if (std::regex_search(prompt, m, split_plain)) {
        return FunctionCall{"split_topic_kmeans", {{"topic_idx", idx(1)}, {"n_clusters", 2}}};
    }
    if (std::regex_search(prompt, m, create)) {
        return FunctionCall{"create_topic_keyword", {{"keyword", std::string(trim(m.str(1)))}}};
    }
    if (std::regex_search(prompt, list)) return FunctionCall{"list_topics", nlohmann::json::object()};
    if (std::regex_search(prompt, m, topic_ref) && !std::regex_search(prompt, which)) {
        auto query = detail::quoted_phrase(prompt);
        if (query.empty()) query = std::string(trim(prompt));
        return FunctionCall{"knn_search", {{"topic_index", idx(1)}, {"query", query}, {"k", 5}}};
    }
    if (std::regex_search(prompt, which)) return FunctionCall{"identify_topic", {{"query", std::string(trim(prompt))}}};
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Routing
// ---------------------------------------------------------------------------

struct ChatTurn {
    std::string prompt;
    std::optional<FunctionCall> function_call;
    std::string result_summary;
    std::string response;
    std::uint64_t version_before = 0;
    std::uint64_t version_after = 0;

    nlohmann::json to_json() const {
        return {{"prompt", prompt},
                {"function_call", function_call ? function_call->to_json() : nlohmann::json()},
                {"result_summary", result_summary},
                {"response", response},
                {"version_before", version_before},
                {"version_after", version_after}};
    }
};

namespace detail {

inline std::string topic_listing(const TopicModelState& state) {
    std::string s;
    for (const auto& t : state.topics) {
        s += std::to_string(t.index) + ": " + t.title + " (" + std::to_string(t.size()) + " documents; ";
        const auto words = t.topwords_tfidf.words(8);
        for (std::size_t i = 0; i < words.size(); ++i) s += (i ? ", " : "") + words[i];
        s += ")\n";
    }
    return s;
}

inline bool provider_failure(const Error& e) {
    return e.code() == ErrorCode::ProviderUnavailable || e.code() == ErrorCode::MalformedResponse;
}

}  // namespace detail

/// Routes one user prompt: the model picks a function (one repair round if
/// the call is invalid), the function runs against `state`, and the model
/// composes the reply. Without a reachable model the rule-based router picks
/// the function and the reply is the result summary. `state` is replaced only
/// when the function succeeds.
inline ChatTurn route_prompt(const ChatEnvironment& env, const FunctionRegistry& registry, TopicModelState& state,
                             const std::string& prompt) {
    if (trim(prompt).empty()) throw Error(ErrorCode::InvalidArgument, "prompt must not be empty");
    ChatTurn turn;
    turn.prompt = prompt;
    turn.version_before = state.version;
    turn.version_after = state.version;

    const auto system = env.llm.templates.render(
        "router_system", {{"topic_count", std::to_string(state.topics.size())}, {"topics", detail::topic_listing(state)}});
    ChatRequest request{{{"system", system, std::nullopt}, {"user", prompt, std::nullopt}}, registry.declarations()};

    bool llm_available = static_cast<bool>(env.llm.provider);
    std::optional<FunctionCall> call;
    std::string direct_answer;
    std::string problem;
    if (llm_available) {
        try {
            auto response = env.llm.provider->complete(request);
            if (response.function_call) {
                auto candidate = *response.function_call;
                if (auto issue = registry.check(candidate)) {
                    spdlog::info("function call rejected ({}), asking for a repair", *issue);
                    request.messages.push_back({"assistant", response.content, response.function_call});
                    request.messages.push_back(
                        {"user", env.llm.templates.render("repair", {{"problem", *issue}}), std::nullopt});
                    auto repaired = env.llm.provider->complete(request);
                    if (repaired.function_call) {
                        candidate = *repaired.function_call;
                        if (auto again = registry.check(candidate)) {
                            problem = *again;
                        } else {
                            call = candidate;
                        }
                    } else {
                        direct_answer = repaired.content;
                        if (direct_answer.empty()) problem = *issue;
                    }
                } else {
                    call = candidate;
                }
            } else {
                direct_answer = response.content;
            }
        } catch (const Error& e) {
            if (!detail::provider_failure(e)) throw;
            spdlog::warn("language model unavailable for routing: {}", e.what());
            llm_available = false;
        }
    }
    if (!call && direct_answer.empty() && problem.empty()) {
        if (auto routed = fallback_route(prompt)) {
            if (auto issue = registry.check(*routed)) {
                problem = *issue;
            } else {
                call = routed;
            }
        }
    }

    if (!call) {
        if (!direct_answer.empty()) {
            turn.response = direct_answer;
        } else if (!problem.empty()) {
            turn.response = "I could not turn that request into a valid operation: " + problem;
        } else {
            turn.response = "I could not match that request to an available operation.";
        }
        return turn;
    }

    turn.function_call = call;
    const auto* spec = registry.find(call->name);
    if (spec->mutates && !env.allow_mutations) {
        turn.result_summary = "not executed";
        turn.response = "Topic modifications through chat are disabled.";
        return turn;
    }
    TopicModelState working = state;
    FunctionResult result;
    try {
        result = spec->handler(call->arguments, working, env);
    } catch (const Error& e) {
        if (detail::provider_failure(e)) throw;
        turn.result_summary = std::string("error: ") + e.what();
        turn.response = std::string("The request failed: ") + e.what();
        return turn;
    }
    state = std::move(working);
    turn.version_after = state.version;
    turn.result_summary = result.summary;
    turn.response = result.summary;
    if (llm_available) {
        try {
            const auto composed =
                env.llm.ask(env.llm.templates.render("compose", {{"prompt", prompt},
                                                                 {"function", call->name},
                                                                 {"arguments", call->arguments.dump()},
                                                                 {"result", result.data.dump()}}))
                    .content;
            if (!trim(composed).empty()) turn.response = composed;
        } catch (const Error& e) {
            if (!detail::provider_failure(e)) throw;
            spdlog::warn("language model unavailable for the reply: {}", e.what());
        }
    }
    return turn;
}

}  // namespace topicforge
