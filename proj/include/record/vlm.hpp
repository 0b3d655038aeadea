#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace record {

enum class RequestKind { PoseSelection, Layout };

const char* to_string(RequestKind k) noexcept;

/// Replaces each {key} with vars[key]; unknown keys are left verbatim.
std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& vars);

struct VLMImage {
    std::string label;              // "Image 1", "selected", ...
    std::vector<std::uint8_t> png;  // encoded bytes
};

struct VLMRequest {
    RequestKind kind = RequestKind::PoseSelection;
    std::string system;
    std::string instruction;
    std::vector<VLMImage> images;
    std::vector<std::string> exemplars;
    std::map<std::string, std::string> metadata;  // structured values also present in the text

    /// SHA-256 over every field, including image bytes.
    std::string hash() const;

    /// The text portion as sent: instruction followed by the exemplar block.
    std::string user_text() const;
};

struct VLMResponse {
    std::string text;
    bool from_cache = false;
};

/// Any VLM provider. Implementations must be safe for concurrent callers.
class VlmClient {
public:
    virtual ~VlmClient() = default;
    virtual std::string name() const = 0;
    virtual VLMResponse complete(const VLMRequest& request) = 0;
};

/// Canned replies for tests and offline runs. Lookup order: exact request
/// hash, then the per-kind template. Templates may reference metadata as
/// {key}; an unknown key is left verbatim.
class MockVlmClient final : public VlmClient {
public:
    MockVlmClient();

    void set_reply(const std::string& request_hash, std::string reply);
    void set_template(RequestKind kind, std::string reply_template);
    /// "hash<TAB>reply" per line; reply may use \n escapes.
    void load_replies(const std::filesystem::path& file);

    std::string name() const override { return "mock"; }
    VLMResponse complete(const VLMRequest& request) override;

    std::size_t call_count() const;
    std::vector<VLMRequest> requests() const;

private:
    mutable std::mutex mu_;
    std::map<std::string, std::string> by_hash_;
    std::map<RequestKind, std::string> templates_;
    std::vector<VLMRequest> log_;
};

/// Minimum spacing between calls, shared by every client that holds it.
class RateLimiter {
public:
    explicit RateLimiter(std::chrono::milliseconds min_interval) : interval_(min_interval) {}
    void acquire();

private:
    std::mutex mu_;
    std::chrono::milliseconds interval_;
    std::chrono::steady_clock::time_point next_{};
};

struct RemoteVlmOptions {
    std::string endpoint;  // e.g. https://api.example.com/v1/chat/completions
    std::string model;
    std::string api_key_env = "RECORD_VLM_API_KEY";
    int timeout_s = 60;
    int transport_retries = 2;
    std::shared_ptr<RateLimiter> limiter;
};

/// OpenAI-style chat-completions client with inline base64 PNG images.
class RemoteVlmClient final : public VlmClient {
public:
    explicit RemoteVlmClient(RemoteVlmOptions options);
    std::string name() const override { return "remote"; }
    VLMResponse complete(const VLMRequest& request) override;

    /// Request body as JSON text (exposed for inspection).
    std::string body(const VLMRequest& request) const;

private:
    RemoteVlmOptions opt_;
};

/// Content-addressed reply cache in front of another client. Entries are
/// `<dir>/<request hash>.txt`, written to a temp file then renamed.
class CachedVlmClient final : public VlmClient {
public:
    CachedVlmClient(std::shared_ptr<VlmClient> inner, std::filesystem::path dir);
    std::string name() const override { return "cached(" + inner_->name() + ")"; }
    VLMResponse complete(const VLMRequest& request) override;

private:
    std::shared_ptr<VlmClient> inner_;
    std::filesystem::path dir_;
};

}  // namespace record
