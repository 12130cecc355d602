#include <cstdlib>
#include <regex>

#include <fmt/format.h>
#include <httplib.h>

#include "kicrank/errors.hpp"
#include "kicrank/gateway.hpp"

namespace kicrank {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_endpoint(const std::string& url) {
    static const std::regex kUrl(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, kUrl)) throw ConfigError("gateway.endpoint is not an http(s) URL: " + url);
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

}  // namespace

HttpTransport make_http_transport(const GatewayConfig& config) {
    const char* key = std::getenv(config.api_key_env.c_str());
    if (key == nullptr || *key == '\0') {
        throw ConfigError(fmt::format("the http backend needs an API key in ${}", config.api_key_env));
    }
    const auto endpoint = split_endpoint(config.endpoint);
    const std::string token = key;
    const auto timeout = std::chrono::duration<double>(config.timeout_seconds);

    return [endpoint, token, timeout](const std::string& body) {
        httplib::Client client(endpoint.origin);
        client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        client.set_write_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
        const httplib::Headers headers = {{"Authorization", "Bearer " + token}};
        auto result = client.Post(endpoint.path, headers, body, "application/json");
        if (!result) {
            throw TransientGatewayError(
                fmt::format("request to {} failed: {}", endpoint.origin, httplib::to_string(result.error())));
        }
        return HttpResponse{result->status, result->body};
    };
}

}  // namespace kicrank
