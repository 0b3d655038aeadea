#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <json.hpp>

#include "record/error.hpp"
#include "record/eval.hpp"
#include "support/local_server.hpp"

using namespace record;

namespace {

Image solid(double v) { return Image(4, 4, 3, v); }

}  // namespace

TEST(Score, ScaledClippedCosine) {
    MockEmbedder e(2);
    const Image img = solid(0.5);
    e.set_image(img, {1.0, 0.0});
    e.set_text("same", {2.0, 0.0});
    e.set_text("diag", {1.0, 1.0});
    e.set_text("opposite", {-1.0, 0.0});
    e.set_text("zero", {0.0, 0.0});
    EXPECT_DOUBLE_EQ(score_pair(img, "same", &e), 100.0);
    EXPECT_NEAR(score_pair(img, "diag", &e), 100.0 / std::sqrt(2.0), 1e-12);
    EXPECT_EQ(score_pair(img, "opposite", &e), 0.0);
    EXPECT_EQ(score_pair(img, "zero", &e), 0.0);
    EXPECT_THROW(score_pair(img, "same", nullptr), EmbedderUnavailable);
    e.set_text("short", {1.0});
    EXPECT_THROW(score_pair(img, "short", &e), EmbedderUnavailable);
}

TEST(Score, VerbScoreUsesVerbPhrase) {
    MockEmbedder e;
    const Image img = solid(0.3);
    const auto t = parse_triplet("a man is riding a horse");
    verb_score(img, t, &e);
    EXPECT_EQ(e.texts_seen().back(), "a person is riding");
    HOITriplet empty;
    EXPECT_THROW(verb_score(img, empty, &e), PreconditionViolation);
}

TEST(Score, ScoreImageAndExtras) {
    struct Constant : ExtraScoreProvider {
        std::string name() const override { return "const"; }
        double score(const Image&, const HOITriplet&) override { return 4.5; }
    } extra;
    MockEmbedder e;
    const auto pair = render_prompts(parse_triplet("woman|hold|umbrella"));
    const auto rec = score_image("r1", solid(0.1), pair, &e, {&extra});
    EXPECT_EQ(rec.prompt, pair.full_prompt);
    EXPECT_EQ(rec.extra.at("const"), 4.5);
    EXPECT_GE(rec.clip_score, 0.0);
    EXPECT_LE(rec.clip_score, 100.0);
    const auto seen = e.texts_seen();
    EXPECT_NE(std::find(seen.begin(), seen.end(), pair.full_prompt), seen.end());
    EXPECT_NE(std::find(seen.begin(), seen.end(), "a person is holding"), seen.end());
}

TEST(Batch, MeansAreOrderInvariant) {
    std::vector<ScoreRecord> recs;
    for (int i = 0; i < 7; ++i)
        recs.push_back({"id" + std::to_string(i), "p" + std::to_string(i % 3), 10.0 * i + 0.1, 3.0 * i, {}});
    recs[2].extra["fid"] = 1.0;
    recs[5].extra["fid"] = 3.0;
    const auto a = batch_report(recs);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::shuffle(recs.begin(), recs.end(), rng);
        const auto b = batch_report(recs);
        EXPECT_EQ(b.mean_clip_score, a.mean_clip_score);
        EXPECT_EQ(b.mean_verb_clip_score, a.mean_verb_clip_score);
        EXPECT_EQ(summary_tsv(b), summary_tsv(a));
    }
    EXPECT_EQ(a.count, 7u);
    EXPECT_NEAR(a.mean_clip_score, 30.1, 1e-12);
    EXPECT_DOUBLE_EQ(a.mean_extra.at("fid"), 2.0);
    EXPECT_THROW(batch_report({}), EmptyBatch);
}

TEST(Batch, TsvLayout) {
    const std::string tsv = scores_tsv({{"abc", "a man\tis riding", 12.5, 7.25, {{"x", 1.0}}}});
    EXPECT_EQ(tsv,
              "# clip_scale=100\nrun_id\tprompt\tclip_score\tverb_clip_score\textra\n"
              "abc\ta man is riding\t12.500000\t7.250000\tx=1.000000\n");
}

TEST(Embedders, Factory) {
    RunConfig c;
    EXPECT_EQ(make_embedder(c), nullptr);
    c.embedder = "remote";
    c.embedder_endpoint = "http://127.0.0.1:9/embed";
    EXPECT_EQ(make_embedder(c)->name(), "remote");
}

TEST(Embedders, MockFallbackIsDeterministic) {
    MockEmbedder a, b;
    EXPECT_EQ(a.embed_text("hello"), b.embed_text("hello"));
    EXPECT_NE(a.embed_text("hello"), a.embed_text("world"));
    EXPECT_EQ(a.embed_image(solid(0.2)), b.embed_image(solid(0.2)));
    EXPECT_EQ(a.embed_text("x").size(), 8u);
}

TEST(Embedders, RemoteRoundTrip) {
    testing_support::LocalServer srv;
    srv.server().Post("/embed", [](const httplib::Request& req, httplib::Response& res) {
        const auto j = nlohmann::json::parse(req.body);
        nlohmann::json out;
        if (j.contains("text"))
            out["embedding"] = {1.0, 0.0};
        else if (j.contains("image_png_base64") && !j["image_png_base64"].get<std::string>().empty())
            out["embedding"] = {1.0, 1.0};
        res.set_content(out.dump(), "application/json");
    });
    RemoteEmbedder e(srv.url("/embed"));
    EXPECT_NEAR(score_pair(solid(0.5), "anything", &e), 100.0 / std::sqrt(2.0), 1e-9);
    RemoteEmbedder down("http://127.0.0.1:9/embed", 1);
    EXPECT_THROW(down.embed_text("x"), EmbedderUnavailable);
}
