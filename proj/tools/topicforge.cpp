#include <csignal>
#include <fstream>
#include <iostream>
#include <memory>

#include "topicforge/service.hpp"

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

using namespace topicforge;

namespace {

ServiceConfig load_config(const std::string& path) { return path.empty() ? ServiceConfig{} : ServiceConfig::load(path); }

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (const char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

int run_fit(const std::string& config_path, const std::string& corpus_path, std::optional<std::size_t> n_topics,
            const std::string& state_override) {
    auto cfg = load_config(config_path);
    if (!state_override.empty()) cfg.state_path = state_override;
    if (cfg.state_path.empty()) throw Error(ErrorCode::InvalidConfig, "no state_path: set it in the config or pass --state");
    auto service = TopicService::create(cfg);
    FitOptions options;
    options.n_topics = n_topics;
    const auto outcome = service->fit(load_corpus_texts(corpus_path), options);
    for (const auto& t : outcome.state.topics) {
        std::cout << t.index << "\t" << t.size() << "\t" << t.title << "\n";
    }
    std::cout << outcome.state.topics.size() << " topics (" << outcome.discovered_clusters << " clusters found), version "
              << outcome.state.version << ", saved to " << cfg.state_path.string() << "\n";
    return 0;
}

TopicService* g_serving = nullptr;

int run_serve(const std::string& config_path) {
    const auto cfg = load_config(config_path);
    auto service = TopicService::create(cfg);
    const auto [host, port] = cfg.listen_host_port();
    const int bound = service->bind(host, port);
    spdlog::info("listening on {}:{}", host, bound);
    g_serving = service.get();
    std::signal(SIGINT, [](int) { g_serving->stop(); });
    std::signal(SIGTERM, [](int) { g_serving->stop(); });
    service->listen();
    g_serving = nullptr;
    return 0;
}

int run_export(const std::string& state_path, const std::string& format, const std::string& output) {
    const auto state = load_state(state_path);
    std::ofstream file;
    if (!output.empty()) {
        file.open(output, std::ios::binary);
        if (!file) throw Error(ErrorCode::InvalidArgument, "cannot write " + output);
    }
    std::ostream& out = output.empty() ? std::cout : file;
    if (format == "csv") {
        std::vector<const Topic*> owner(state.corpus->size());
        for (const auto& t : state.topics) {
            for (const auto d : t.doc_ids) owner[d] = &t;
        }
        out << "doc_id,topic_index,topic_title\n";
        for (std::size_t d = 0; d < owner.size(); ++d) {
            out << d << "," << owner[d]->index << "," << csv_field(owner[d]->title) << "\n";
        }
    } else {
        nlohmann::json topics = nlohmann::json::array();
        for (const auto& t : state.topics) topics.push_back(topic_detail_json(t));
        out << nlohmann::json{{"version", state.version}, {"documents", state.corpus->size()}, {"topics", topics}}.dump(2) << "\n";
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Topic modeling over document embeddings, with a chat interface for inspecting and editing topics."};
    app.require_subcommand(1);
    app.fallthrough();
    std::string log_level = "info";
    app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();

    auto* fit = app.add_subcommand("fit", "Fit a topic model and save its state");
    std::string corpus_path, config_path, state_override;
    std::optional<std::size_t> n_topics;
    fit->add_option("--corpus", corpus_path, "Text file (one document per line) or JSON array of strings")
        ->required()
        ->check(CLI::ExistingFile);
    fit->add_option("--n-topics", n_topics, "Merge clusters down to this many topics");
    fit->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
    fit->add_option("--state", state_override, "State file (overrides state_path from the config)");

    auto* serve = app.add_subcommand("serve", "Serve the REST API");
    std::string serve_config;
    serve->add_option("--config", serve_config, "JSON config file")->required()->check(CLI::ExistingFile);

    auto* exp = app.add_subcommand("export", "Write topic assignments from a saved state");
    std::string state_path, format = "json", output;
    exp->add_option("--state", state_path, "State file")->required()->check(CLI::ExistingFile);
    exp->add_option("--format", format, "json or csv")->check(CLI::IsMember({"json", "csv"}))->capture_default_str();
    exp->add_option("--output,-o", output, "Output file (default stdout)");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_default_logger(spdlog::stderr_color_mt("topicforge"));
    spdlog::set_level(spdlog::level::from_str(log_level));
    try {
        if (*fit) return run_fit(config_path, corpus_path, n_topics, state_override);
        if (*serve) return run_serve(serve_config);
        return run_export(state_path, format, output);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
