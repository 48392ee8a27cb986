#include <gtest/gtest.h>

#include "support/fixtures.hpp"
#include "topicforge/chatrouter.hpp"

using namespace topicforge;

namespace {

using Rule = MockLlmProvider::Rule;

Rule call_rule(std::string match, std::string name, nlohmann::json args) {
    Rule r;
    r.match = std::move(match);
    r.function_call = FunctionCall{std::move(name), std::move(args)};
    return r;
}

Rule reply(std::string match, std::string text) {
    Rule r;
    r.match = std::move(match);
    r.response = std::move(text);
    return r;
}

struct Harness {
    fixture::Model model;
    ChatEnvironment env;
    FunctionRegistry registry = default_registry();

    explicit Harness(std::vector<Rule> rules, std::size_t topics = 4) : model(fixture::make_model(4, 25, topics)) {
        env.llm = LlmContext{std::make_shared<MockLlmProvider>(std::move(rules)), PromptTemplates::load()};
        env.embedder = model.embedder.get();
        env.topic_context = fixture::context_for(model);
    }

    ChatTurn ask(const std::string& prompt) { return route_prompt(env, registry, model.state, prompt); }
};

}  // namespace

TEST(SchemaViolation, SubsetRules) {
    const auto registry = default_registry();
    const auto& schema = registry.find("merge_topics")->parameters;
    EXPECT_FALSE(schema_violation(schema, {{"indices", {1, 2}}}));
    EXPECT_TRUE(schema_violation(schema, {{"indices", {1}}}));
    EXPECT_TRUE(schema_violation(schema, {{"indices", {1, "2"}}}));
    EXPECT_TRUE(schema_violation(schema, {{"indices", {1, 2}}, {"extra", 1}}));
    EXPECT_TRUE(schema_violation(schema, nlohmann::json::object()));
    EXPECT_TRUE(schema_violation(registry.find("delete_topic")->parameters, {{"index", -1}}));
    EXPECT_TRUE(schema_violation(registry.find("identify_topic")->parameters, {{"query", ""}}));
    EXPECT_EQ(registry.declarations().size(), 10u);
}

TEST(FallbackRoute, KnownPhrasings) {
    const auto route = [](const std::string& p) { return fallback_route(p).value_or(FunctionCall{"none", {}}); };
    EXPECT_EQ(route("Which information related to the keyword 'moon landing' does topic 1 have?"),
              (FunctionCall{"knn_search", {{"topic_index", 1}, {"query", "moon landing"}, {"k", 5}}}));
    EXPECT_EQ(route("What are 5 potential subtopics of topic 2"),
              (FunctionCall{"split_topic_kmeans", {{"topic_idx", 2}, {"n_clusters", 5}}}));
    EXPECT_EQ(route("split topic 3 into three"), (FunctionCall{"split_topic_kmeans", {{"topic_idx", 3}, {"n_clusters", 3}}}));
    EXPECT_EQ(route("Merge topics 1, 2 and 5"), (FunctionCall{"merge_topics", {{"indices", {1, 2, 5}}}}));
    EXPECT_EQ(route("please delete topic 4"), (FunctionCall{"delete_topic", {{"index", 4}}}));
    EXPECT_EQ(route("compare topic 0 and topic 3"),
              (FunctionCall{"compare_topics", {{"topic_index_a", 0}, {"topic_index_b", 3}}}));
    EXPECT_EQ(route("split topic 2 by keyword 'rocket'"),
              (FunctionCall{"split_topic_keyword", {{"topic_idx", 2}, {"keyword", "rocket"}}}));
    EXPECT_EQ(route("split topic 1 using hdbscan with min cluster size 8"),
              (FunctionCall{"split_topic_hdbscan", {{"topic_idx", 1}, {"min_cluster_size", 8}}}));
    EXPECT_EQ(route("create a new topic from the keyword \"baseball\""),
              (FunctionCall{"create_topic_keyword", {{"keyword", "baseball"}}}));
    EXPECT_EQ(route("list all topics").name, "list_topics");
    EXPECT_EQ(route("Which topic talks about engines?").name, "identify_topic");
    EXPECT_FALSE(fallback_route("hello there").has_value());
}

TEST(RoutePrompt, ReadOnlyCallKeepsVersion) {
    Harness h({call_rule("neighbours", "knn_search", {{"topic_index", 1}, {"query", "anything"}, {"k", 3}}),
               reply("*", "Here is what I found.")});
    const auto turn = h.ask("neighbours of topic 1");
    ASSERT_TRUE(turn.function_call.has_value());
    EXPECT_EQ(turn.function_call->name, "knn_search");
    EXPECT_EQ(turn.version_before, turn.version_after);
    EXPECT_EQ(turn.response, "Here is what I found.");
    EXPECT_EQ(turn.result_summary.rfind("3 documents from topic 1", 0), 0u);
}

TEST(RoutePrompt, MutationBumpsVersionByOne) {
    Harness h({call_rule("merge", "merge_topics", {{"indices", {0, 1}}}), reply("*", "Merged.")});
    const auto turn = h.ask("merge the first two");
    EXPECT_EQ(turn.version_after, turn.version_before + 1);
    EXPECT_EQ(h.model.state.topics.size(), 3u);
    EXPECT_EQ(turn.to_json()["function_call"]["arguments"]["indices"], nlohmann::json({0, 1}));
}

TEST(RoutePrompt, RepairRoundFixesBadArguments) {
    Rule bad = call_rule("delete", "delete_topic", {{"index", "two"}});
    bad.times = 1;
    Harness h({bad, call_rule("could not be used", "delete_topic", {{"index", 2}}), reply("*", "Deleted.")});
    const auto turn = h.ask("delete the second topic");
    ASSERT_TRUE(turn.function_call.has_value());
    EXPECT_EQ(turn.function_call->arguments, (nlohmann::json{{"index", 2}}));
    EXPECT_EQ(turn.version_after, turn.version_before + 1);
    const auto log = h.env.llm.provider->exchanges();
    EXPECT_NE(log[1].request["messages"].back()["content"].get<std::string>().find("index must be an integer"),
              std::string::npos);
}

TEST(RoutePrompt, StillInvalidAfterRepairExecutesNothing) {
    Harness h({call_rule("*", "delete_topic", {{"index", "x"}}), reply("*", "unused")});
    const auto turn = h.ask("delete something");
    EXPECT_FALSE(turn.function_call.has_value());
    EXPECT_EQ(turn.version_after, turn.version_before);
    EXPECT_NE(turn.response.find("valid operation"), std::string::npos);
}

TEST(RoutePrompt, UnknownFunctionAndDirectAnswer) {
    Harness h({call_rule("weather", "get_weather", {{"city", "Oslo"}}), reply("*", "Just an answer.")});
    EXPECT_FALSE(h.ask("weather please").function_call.has_value());
    const auto plain = h.ask("hello");
    EXPECT_FALSE(plain.function_call.has_value());
    EXPECT_EQ(plain.response, "Just an answer.");
}

TEST(RoutePrompt, ExecutionErrorLeavesStateUnchanged) {
    Harness h({call_rule("*", "delete_topic", {{"index", 42}}), reply("*", "unused")});
    const auto before = h.model.state.partition();
    const auto turn = h.ask("delete topic 42");
    EXPECT_EQ(turn.version_after, turn.version_before);
    EXPECT_EQ(h.model.state.partition(), before);
    EXPECT_NE(turn.result_summary.find("InvalidTopicIndex"), std::string::npos);
}

TEST(RoutePrompt, ProviderDownUsesRuleRouter) {
    Rule down;
    down.error = "unavailable";
    Harness h({down});
    const auto turn = h.ask("What are 2 potential subtopics of topic 0");
    ASSERT_TRUE(turn.function_call.has_value());
    EXPECT_EQ(turn.function_call->name, "split_topic_kmeans");
    EXPECT_EQ(turn.version_after, turn.version_before + 1);
    EXPECT_EQ(turn.response, turn.result_summary);
    EXPECT_EQ(h.model.state.topics.size(), 5u);
}

TEST(RoutePrompt, MutationsCanBeDisabled) {
    Harness h({call_rule("*", "delete_topic", {{"index", 0}}), reply("*", "unused")});
    h.env.allow_mutations = false;
    const auto turn = h.ask("delete topic 0");
    EXPECT_EQ(turn.version_after, turn.version_before);
    EXPECT_EQ(turn.result_summary, "not executed");
}

TEST(RoutePrompt, EmptyPromptRejected) {
    Harness h({});
    EXPECT_THROW(h.ask("   "), Error);
}
