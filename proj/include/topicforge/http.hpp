#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <utility>
#include <vector>

// Eigen must precede httplib: resolv.h defines a _res macro that clashes with Eigen internals.
#include <Eigen/Core>
#include <httplib.h>

namespace topicforge {

struct HttpRequest {
    std::string method = "POST";
    std::string url;
    std::string body;
    std::vector<std::pair<std::string, std::string>> headers;
};

struct HttpResponse {
    int status = 0;
    std::string body;
    std::string error;  // transport-level failure, empty when a response arrived

    bool ok() const noexcept { return error.empty() && status >= 200 && status < 300; }
};

/// Outbound HTTP seam. Providers talk through this so tests can substitute a
/// scripted transport.
using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;

/// Splits "https://host:port/path" into ("https://host:port", "/path").
inline std::pair<std::string, std::string> split_url(const std::string& url) {
    const auto scheme_end = url.find("://");
    const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
    const auto path_start = url.find('/', host_start);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

inline HttpTransport make_http_transport(std::chrono::seconds timeout = std::chrono::seconds(60)) {
    return [timeout](const HttpRequest& request) {
        const auto [base, path] = split_url(request.url);
        httplib::Client client(base);
        client.set_connection_timeout(timeout);
        client.set_read_timeout(timeout);
        client.set_write_timeout(timeout);
        httplib::Headers headers;
        for (const auto& [k, v] : request.headers) headers.emplace(k, v);
        httplib::Result result = request.method == "GET"
                                     ? client.Get(path, headers)
                                     : client.Post(path, headers, request.body, "application/json");
        HttpResponse response;
        if (!result) {
            response.error = httplib::to_string(result.error());
            return response;
        }
        response.status = result->status;
        response.body = result->body;
        return response;
    };
}

}  // namespace topicforge
