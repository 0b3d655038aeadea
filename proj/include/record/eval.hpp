#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <vector>

#include "record/config.hpp"
#include "record/image.hpp"
#include "record/prompt.hpp"

namespace record {

/// Scores are 100 * max(0, cosine); the factor is written to every report.
inline constexpr double kClipScale = 100.0;

/// Joint text-image embedding provider (CLIP-like).
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string name() const = 0;
    virtual std::vector<double> embed_text(std::string_view text) = 0;
    virtual std::vector<double> embed_image(const Image& image) = 0;
};

/// Deterministic embeddings for tests: explicit vectors for registered texts
/// and images, hash-seeded Gaussian vectors otherwise. Records every text.
class MockEmbedder final : public Embedder {
public:
    explicit MockEmbedder(std::size_t dim = 8) : dim_(dim) {}
    void set_text(const std::string& text, std::vector<double> v);
    void set_image(const Image& image, std::vector<double> v);

    std::string name() const override { return "mock"; }
    std::vector<double> embed_text(std::string_view text) override;
    std::vector<double> embed_image(const Image& image) override;

    std::vector<std::string> texts_seen() const;

private:
    std::size_t dim_;
    mutable std::mutex mu_;
    std::map<std::string, std::vector<double>> texts_;
    std::map<std::string, std::vector<double>> images_;
    std::vector<std::string> seen_;
};

/// POSTs {"text": ...} or {"image_png_base64": ...} to `endpoint` and reads
/// {"embedding": [...]}.
class RemoteEmbedder final : public Embedder {
public:
    explicit RemoteEmbedder(std::string endpoint, int timeout_s = 60);
    std::string name() const override { return "remote"; }
    std::vector<double> embed_text(std::string_view text) override;
    std::vector<double> embed_image(const Image& image) override;

private:
    std::vector<double> post(const std::string& body);
    std::string endpoint_;
    int timeout_s_;
};

/// nullptr for `embedder = none`.
std::unique_ptr<Embedder> make_embedder(const RunConfig& config);

/// 100 * max(0, cos(embed(image), embed(text))). Throws EmbedderUnavailable
/// when `embedder` is null.
double score_pair(const Image& image, std::string_view text, Embedder* embedder);

/// score_pair against "a person is {verb-gerund}".
double verb_score(const Image& image, const HOITriplet& triplet, Embedder* embedder,
                  const GerundRules& rules = GerundRules{});

/// Optional extra metrics (FID, PickScore, HOI classifiers). None ship here.
class ExtraScoreProvider {
public:
    virtual ~ExtraScoreProvider() = default;
    virtual std::string name() const = 0;
    virtual double score(const Image& image, const HOITriplet& triplet) = 0;
};

struct ScoreRecord {
    std::string run_id;
    std::string prompt;
    double clip_score = 0.0;
    double verb_clip_score = 0.0;
    std::map<std::string, double> extra;
};

ScoreRecord score_image(const std::string& run_id, const Image& image, const PromptPair& pair, Embedder* embedder,
                        const std::vector<ExtraScoreProvider*>& extras = {});

struct BatchSummary {
    std::size_t count = 0;
    double mean_clip_score = 0.0;
    double mean_verb_clip_score = 0.0;
    std::map<std::string, double> mean_extra;  // over the records that carry the key
    std::vector<ScoreRecord> records;          // sorted by prompt, then run id
};

/// Means over the records; throws EmptyBatch for an empty list.
BatchSummary batch_report(std::vector<ScoreRecord> records);

/// Tab-separated: "# clip_scale=100" line, header row, one row per record.
std::string scores_tsv(const std::vector<ScoreRecord>& records);
void write_scores_tsv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
std::string summary_tsv(const BatchSummary& summary);

}  // namespace record
