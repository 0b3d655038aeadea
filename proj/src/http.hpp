#pragma once

#include <map>
#include <string>

namespace record::detail {

struct HttpReply {
    int status = 0;  // 0 when the transport failed
    std::string body;
    std::string error;
};

/// POST `body` as application/json to a full URL (http or https).
HttpReply http_post_json(const std::string& url, const std::map<std::string, std::string>& headers,
                         const std::string& body, int timeout_s);

}  // namespace record::detail
