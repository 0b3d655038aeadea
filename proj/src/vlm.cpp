#include "record/vlm.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "http.hpp"
#include "record/error.hpp"
#include "record/hash.hpp"

namespace record {

namespace {

std::string unescape_newlines(std::string_view s) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '\\' && i + 1 < s.size() && s[i + 1] == 'n') {
            out.push_back('\n');
            ++i;
        } else {
            out.push_back(s[i]);
        }
    }
    return out;
}

}  // namespace

std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size();) {
        if (tmpl[i] == '{') {
            const auto close = tmpl.find('}', i);
            if (close != std::string::npos) {
                auto it = vars.find(tmpl.substr(i + 1, close - i - 1));
                if (it != vars.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out.push_back(tmpl[i++]);
    }
    return out;
}

const char* to_string(RequestKind k) noexcept { return k == RequestKind::PoseSelection ? "pose" : "layout"; }

std::string VLMRequest::user_text() const {
    std::string out = instruction;
    if (!exemplars.empty()) {
        out += "\n\n### Examples\n";
        for (std::size_t i = 0; i < exemplars.size(); ++i) out += "\n[Example " + std::to_string(i + 1) + "]\n" + exemplars[i] + "\n";
    }
    return out;
}

std::string VLMRequest::hash() const {
    // Length-prefixed fields so no two requests serialize alike.
    std::string buf;
    auto put = [&buf](std::string_view s) {
        buf += std::to_string(s.size());
        buf.push_back(':');
        buf.append(s);
    };
    put(to_string(kind));
    put(system);
    put(instruction);
    buf += "I" + std::to_string(images.size());
    for (const auto& img : images) {
        put(img.label);
        put(std::string_view(reinterpret_cast<const char*>(img.png.data()), img.png.size()));
    }
    buf += "E" + std::to_string(exemplars.size());
    for (const auto& e : exemplars) put(e);
    buf += "M" + std::to_string(metadata.size());
    for (const auto& [k, v] : metadata) {
        put(k);
        put(v);
    }
    return sha256_hex(buf);
}

// ---- mock -----------------------------------------------------------------

MockVlmClient::MockVlmClient() {
    templates_[RequestKind::PoseSelection] = "Image 1";
    templates_[RequestKind::Layout] =
        "Visual attributes:\npose type: {verb_gerund}\nbody orientation: frontal\nobject relation: {object} near the {subject}\n"
        "Reasoning: the current placement already fits the interaction.\nproposed box: {b_o}";
}

void MockVlmClient::set_reply(const std::string& request_hash, std::string reply) {
    std::lock_guard lock(mu_);
    by_hash_[request_hash] = std::move(reply);
}

void MockVlmClient::set_template(RequestKind kind, std::string reply_template) {
    std::lock_guard lock(mu_);
    templates_[kind] = std::move(reply_template);
}

void MockVlmClient::load_replies(const std::filesystem::path& file) {
    std::ifstream is(file);
    if (!is) throw IoError("cannot read mock reply table " + file.string());
    for (std::string line; std::getline(is, line);) {
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw InvalidConfig("mock reply line lacks a tab: " + line);
        set_reply(line.substr(0, tab), unescape_newlines(std::string_view(line).substr(tab + 1)));
    }
}

VLMResponse MockVlmClient::complete(const VLMRequest& request) {
    const std::string h = request.hash();
    std::lock_guard lock(mu_);
    log_.push_back(request);
    if (auto it = by_hash_.find(h); it != by_hash_.end()) return {it->second, false};
    auto it = templates_.find(request.kind);
    if (it == templates_.end()) throw VLMUnavailable("mock has no reply for request kind " + std::string(to_string(request.kind)));
    return {fill_template(it->second, request.metadata), false};
}

std::size_t MockVlmClient::call_count() const {
    std::lock_guard lock(mu_);
    return log_.size();
}

std::vector<VLMRequest> MockVlmClient::requests() const {
    std::lock_guard lock(mu_);
    return log_;
}

// ---- rate limiter ---------------------------------------------------------

void RateLimiter::acquire() {
    std::chrono::steady_clock::time_point slot;
    {
        std::lock_guard lock(mu_);
        const auto now = std::chrono::steady_clock::now();
        slot = std::max(now, next_);
        next_ = slot + interval_;
    }
    std::this_thread::sleep_until(slot);
}

// ---- remote ---------------------------------------------------------------

RemoteVlmClient::RemoteVlmClient(RemoteVlmOptions options) : opt_(std::move(options)) {
    if (opt_.endpoint.empty()) throw InvalidConfig("remote VLM needs vlm_endpoint");
}

std::string RemoteVlmClient::body(const VLMRequest& request) const {
    using nlohmann::json;
    json content = json::array();
    content.push_back({{"type", "text"}, {"text", request.user_text()}});
    for (const auto& img : request.images) {
        content.push_back({{"type", "text"}, {"text", img.label + ":"}});
        content.push_back({{"type", "image_url"},
                           {"image_url", {{"url", "data:image/png;base64," + base64_encode(img.png)}}}});
    }
    json messages = json::array();
    if (!request.system.empty()) messages.push_back({{"role", "system"}, {"content", request.system}});
    messages.push_back({{"role", "user"}, {"content", content}});
    return json{{"model", opt_.model}, {"messages", messages}, {"temperature", 0}, {"max_tokens", 800}}.dump();
}

VLMResponse RemoteVlmClient::complete(const VLMRequest& request) {
    const char* key = std::getenv(opt_.api_key_env.c_str());
    if (key == nullptr || *key == '\0') throw VLMUnavailable("environment variable " + opt_.api_key_env + " is not set");
    const std::string payload = body(request);
    const std::map<std::string, std::string> headers{{"Authorization", std::string("Bearer ") + key}};

    std::string last_error;
    for (int attempt = 0; attempt <= opt_.transport_retries; ++attempt) {
        if (opt_.limiter) opt_.limiter->acquire();
        const auto reply = detail::http_post_json(opt_.endpoint, headers, payload, opt_.timeout_s);
        if (reply.status == 200) {
            try {
                const auto j = nlohmann::json::parse(reply.body);
                return {j.at("choices").at(0).at("message").at("content").get<std::string>(), false};
            } catch (const std::exception& e) {
                throw VLMUnavailable(std::string("malformed provider response: ") + e.what());
            }
        }
        last_error = reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status);
        // Client errors other than rate limiting will not improve on retry.
        if (reply.status >= 400 && reply.status < 500 && reply.status != 429) break;
        std::this_thread::sleep_for(std::chrono::milliseconds(250 << attempt));
    }
    throw VLMUnavailable("request failed: " + last_error);
}

// ---- cache ----------------------------------------------------------------

CachedVlmClient::CachedVlmClient(std::shared_ptr<VlmClient> inner, std::filesystem::path dir)
    : inner_(std::move(inner)), dir_(std::move(dir)) {
    if (!inner_) throw InvalidConfig("cached client needs an inner client");
}

VLMResponse CachedVlmClient::complete(const VLMRequest& request) {
    const std::string h = request.hash();
    const auto path = dir_ / (h + ".txt");
    if (std::ifstream is{path}) {
        std::stringstream ss;
        ss << is.rdbuf();
        return {ss.str(), true};
    }
    VLMResponse r = inner_->complete(request);
    std::filesystem::create_directories(dir_);
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto tmp = dir_ / (h + ".tmp." + tid.str());
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw IoError("cannot write cache entry " + tmp.string());
        os << r.text;
    }
    std::filesystem::rename(tmp, path);
    return r;
}

}  // namespace record
