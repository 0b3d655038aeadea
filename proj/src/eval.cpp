#include "record/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <tuple>

#include <json.hpp>

#include "http.hpp"
#include "record/backbone.hpp"
#include "record/error.hpp"
#include "record/hash.hpp"

namespace record {

namespace {

std::string image_key(const Image& image) {
    const auto bytes = image.to_bytes();
    return std::to_string(image.width) + "x" + std::to_string(image.height) + ":" +
           sha256_hex(std::span<const std::uint8_t>(bytes));
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.empty()) throw EmbedderUnavailable("embedding sizes differ or are empty");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (!(aa > 0.0 && bb > 0.0)) return 0.0;
    return ab / std::sqrt(aa * bb);
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\t', ' ');
    std::replace(s.begin(), s.end(), '\n', ' ');
    return s;
}

}  // namespace

void MockEmbedder::set_text(const std::string& text, std::vector<double> v) {
    std::lock_guard lock(mu_);
    texts_[text] = std::move(v);
}

void MockEmbedder::set_image(const Image& image, std::vector<double> v) {
    std::lock_guard lock(mu_);
    images_[image_key(image)] = std::move(v);
}

std::vector<double> MockEmbedder::embed_text(std::string_view text) {
    std::lock_guard lock(mu_);
    seen_.emplace_back(text);
    if (auto it = texts_.find(std::string(text)); it != texts_.end()) return it->second;
    return gaussian_noise(fnv1a64(text), dim_);
}

std::vector<double> MockEmbedder::embed_image(const Image& image) {
    const std::string key = image_key(image);
    std::lock_guard lock(mu_);
    if (auto it = images_.find(key); it != images_.end()) return it->second;
    return gaussian_noise(fnv1a64(key), dim_);
}

std::vector<std::string> MockEmbedder::texts_seen() const {
    std::lock_guard lock(mu_);
    return seen_;
}

RemoteEmbedder::RemoteEmbedder(std::string endpoint, int timeout_s) : endpoint_(std::move(endpoint)), timeout_s_(timeout_s) {
    if (endpoint_.empty()) throw InvalidConfig("remote embedder needs embedder_endpoint");
}

std::vector<double> RemoteEmbedder::post(const std::string& body) {
    const auto reply = detail::http_post_json(endpoint_, {}, body, timeout_s_);
    if (reply.status != 200)
        throw EmbedderUnavailable(reply.status == 0 ? reply.error : "HTTP " + std::to_string(reply.status));
    try {
        return nlohmann::json::parse(reply.body).at("embedding").get<std::vector<double>>();
    } catch (const std::exception& e) {
        throw EmbedderUnavailable(std::string("malformed embedding response: ") + e.what());
    }
}

std::vector<double> RemoteEmbedder::embed_text(std::string_view text) {
    return post(nlohmann::json{{"text", std::string(text)}}.dump());
}

std::vector<double> RemoteEmbedder::embed_image(const Image& image) {
    return post(nlohmann::json{{"image_png_base64", base64_encode(encode_png(image))}}.dump());
}

std::unique_ptr<Embedder> make_embedder(const RunConfig& config) {
    if (config.embedder == "remote") return std::make_unique<RemoteEmbedder>(config.embedder_endpoint);
    return nullptr;
}

double score_pair(const Image& image, std::string_view text, Embedder* embedder) {
    if (embedder == nullptr) throw EmbedderUnavailable("no embedder configured");
    const double c = cosine(embedder->embed_image(image), embedder->embed_text(text));
    return kClipScale * std::max(0.0, c);
}

double verb_score(const Image& image, const HOITriplet& triplet, Embedder* embedder, const GerundRules& rules) {
    if (triplet.verb.empty()) throw PreconditionViolation("verb score needs a verb");
    return score_pair(image, verb_phrase(triplet, rules), embedder);
}

ScoreRecord score_image(const std::string& run_id, const Image& image, const PromptPair& pair, Embedder* embedder,
                        const std::vector<ExtraScoreProvider*>& extras) {
    ScoreRecord r;
    r.run_id = run_id;
    r.prompt = pair.full_prompt;
    r.clip_score = score_pair(image, pair.full_prompt, embedder);
    r.verb_clip_score = verb_score(image, pair.triplet, embedder);
    for (auto* p : extras) r.extra[p->name()] = p->score(image, pair.triplet);
    return r;
}

BatchSummary batch_report(std::vector<ScoreRecord> records) {
    if (records.empty()) throw EmptyBatch("no score records");
    // Full-key sort so the summation order, and thus the means, never depend on input order.
    std::sort(records.begin(), records.end(), [](const ScoreRecord& a, const ScoreRecord& b) {
        return std::tie(a.prompt, a.run_id, a.clip_score, a.verb_clip_score, a.extra) <
               std::tie(b.prompt, b.run_id, b.clip_score, b.verb_clip_score, b.extra);
    });
    BatchSummary s;
    s.count = records.size();
    std::map<std::string, std::pair<double, std::size_t>> extra;
    for (const auto& r : records) {
        if (!std::isfinite(r.clip_score) || !std::isfinite(r.verb_clip_score))
            throw PreconditionViolation("non-finite score for " + r.run_id);
        s.mean_clip_score += r.clip_score;
        s.mean_verb_clip_score += r.verb_clip_score;
        for (const auto& [k, v] : r.extra) {
            extra[k].first += v;
            extra[k].second += 1;
        }
    }
    s.mean_clip_score /= static_cast<double>(s.count);
    s.mean_verb_clip_score /= static_cast<double>(s.count);
    for (const auto& [k, acc] : extra) s.mean_extra[k] = acc.first / static_cast<double>(acc.second);
    s.records = std::move(records);
    return s;
}

std::string scores_tsv(const std::vector<ScoreRecord>& records) {
    std::string out = "# clip_scale=" + std::to_string(static_cast<int>(kClipScale)) + "\n";
    out += "run_id\tprompt\tclip_score\tverb_clip_score\textra\n";
    for (const auto& r : records) {
        std::string extra;
        for (const auto& [k, v] : r.extra) extra += (extra.empty() ? "" : ";") + one_line(k) + "=" + fmt(v);
        out += one_line(r.run_id) + "\t" + one_line(r.prompt) + "\t" + fmt(r.clip_score) + "\t" + fmt(r.verb_clip_score) +
               "\t" + extra + "\n";
    }
    return out;
}

void write_scores_tsv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << scores_tsv(records);
}

std::string summary_tsv(const BatchSummary& s) {
    std::string out = "# clip_scale=" + std::to_string(static_cast<int>(kClipScale)) + "\n";
    out += "metric\tmean\tcount\n";
    out += "clip_score\t" + fmt(s.mean_clip_score) + "\t" + std::to_string(s.count) + "\n";
    out += "verb_clip_score\t" + fmt(s.mean_verb_clip_score) + "\t" + std::to_string(s.count) + "\n";
    for (const auto& [k, v] : s.mean_extra) out += one_line(k) + "\t" + fmt(v) + "\t" + std::to_string(s.count) + "\n";
    return out;
}

}  // namespace record
