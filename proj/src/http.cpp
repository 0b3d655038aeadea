#include "http.hpp"

#include <httplib.h>

#include <regex>

namespace record::detail {

HttpReply http_post_json(const std::string& url, const std::map<std::string, std::string>& headers,
                         const std::string& body, int timeout_s) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) return {0, {}, "malformed URL '" + url + "'"};
    const std::string path = m[2].matched ? m[2].str() : "/";

    httplib::Client client(m[1].str());
    client.set_connection_timeout(timeout_s, 0);
    client.set_read_timeout(timeout_s, 0);
    client.set_write_timeout(timeout_s, 0);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(path, h, body, "application/json");
    if (!res) return {0, {}, httplib::to_string(res.error())};
    return {res->status, res->body, {}};
}

}  // namespace record::detail
