#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "record/error.hpp"
#include "record/agents.hpp"
#include "record/keypoints.hpp"
#include "record/toy_backbone.hpp"
#include "support/local_server.hpp"

namespace fs = std::filesystem;
using namespace record;

TEST(PoseParser, AcceptedForms) {
    EXPECT_EQ(parse_pose_reply("Image 3", 5), 2u);
    EXPECT_EQ(parse_pose_reply("picture #2 is best", 5), 1u);
    EXPECT_EQ(parse_pose_reply("Option no. 4", 5), 3u);
    EXPECT_EQ(parse_pose_reply("candidate number five", 5), 4u);
    EXPECT_EQ(parse_pose_reply("#1", 5), 0u);
    EXPECT_EQ(parse_pose_reply("I pick the second one.", 5), 1u);
    EXPECT_EQ(parse_pose_reply("2", 5), 1u);
    EXPECT_EQ(parse_pose_reply("IMAGE 4", 5), 3u);
}

TEST(PoseParser, Rejections) {
    for (const char* r : {"Image 6", "Image 0", "zero", "none of them", "", "-2", "image 1000000000000", "3.5"})
        EXPECT_THROW(parse_pose_reply(r, 5), UnparsableAgentReply) << r;
}

TEST(PoseParser, FuzzedRepliesNeverLeaveRange) {
    std::mt19937_64 rng(1);
    const std::string alphabet = "Imagepicture #no.0123456789 twothirdfive,-[]\n";
    for (int i = 0; i < 2000; ++i) {
        std::string s;
        for (int n = static_cast<int>(rng() % 30); n > 0; --n) s += alphabet[rng() % alphabet.size()];
        const std::size_t k = 1 + rng() % 6;
        try {
            EXPECT_LT(parse_pose_reply(s, k), k) << s;
        } catch (const UnparsableAgentReply&) {
        }
    }
}

TEST(BoxParser, NormalizedPixelAndInvalid) {
    EXPECT_EQ(parse_box_reply("proposed box: [0.1, 0.2, 0.5, 0.6]", 64, 64), (BoundingBox{0.1, 0.2, 0.5, 0.6}));
    EXPECT_EQ(parse_box_reply("[16, 32, 48, 64]", 64, 64), (BoundingBox{0.25, 0.5, 0.75, 1.0}));
    EXPECT_EQ(parse_box_reply("first [0, 0, 1, 1] then [0.2, 0.2, 0.3, 0.3]", 64, 64), (BoundingBox{0, 0, 1, 1}));
    EXPECT_THROW(parse_box_reply("[0.5, 0.5, 0.4, 0.9]", 64, 64), BoxOutOfRange);
    EXPECT_THROW(parse_box_reply("[10, 10, 100, 20]", 64, 64), BoxOutOfRange);
    EXPECT_THROW(parse_box_reply("[-0.1, 0, 0.5, 0.5]", 64, 64), BoxOutOfRange);
    EXPECT_THROW(parse_box_reply("[0.1, 0.2, 0.3]", 64, 64), UnparsableAgentReply);
    EXPECT_THROW(parse_box_reply("no box at all", 64, 64), UnparsableAgentReply);
    try {
        parse_box_reply("[0.9, 0, 0.1, 1]", 64, 64);
        FAIL();
    } catch (const UnparsableAgentReply& e) {
        EXPECT_EQ(e.kind(), "BoxOutOfRange");
    }
}

TEST(BoxParser, RoundTripsBoxStrings) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(0, 1);
    for (int i = 0; i < 200; ++i) {
        double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
        const BoundingBox box{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
        if (!box.valid()) continue;
        EXPECT_EQ(parse_box_reply("proposed box: " + to_string(box), 64, 64), box);
    }
}

TEST(VisualAttributes, SectionOnly) {
    const auto a = parse_visual_attributes("Visual attributes:\n- Size: large\ncolor: red\nReasoning: x\nsize: small\n");
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0], (std::pair<std::string, std::string>{"size", "large"}));
    EXPECT_EQ(a[1].first, "color");
    EXPECT_TRUE(parse_visual_attributes("nothing here").empty());
}

TEST(Templates, FillTemplate) {
    EXPECT_EQ(fill_template("{a} and {b} and {c}", {{"a", "x"}, {"b", "y"}}), "x and y and {c}");
    EXPECT_EQ(fill_template("{", {}), "{");
}

class AgentTest : public ::testing::Test {
protected:
    void SetUp() override {
        fixtures = AgentFixtures::load(RECORD_FIXTURES_DIR);
        GuidanceConfig g;
        g.k = 3;
        candidates = generate_candidates(pair, g, bb, 10);
        points = TemplateKeypointDetector().detect(candidates[0].preview);
    }
    ToyBackbone bb;
    PromptPair pair = render_prompts(parse_triplet("a woman is holding an umbrella"), word_tokenize);
    AgentFixtures fixtures;
    std::vector<CandidateImage> candidates;
    PoseKeypoints points;
    AgentOptions opts;
};

TEST_F(AgentTest, FixturesLoad) {
    EXPECT_FALSE(fixtures.system.empty());
    EXPECT_NE(fixtures.pose_instruction.find("{k}"), std::string::npos);
    EXPECT_EQ(fixtures.exemplars.size(), 3u);
    EXPECT_THROW(AgentFixtures::load("/nonexistent"), IoError);
}

TEST_F(AgentTest, PoseRequestCarriesEveryCandidate) {
    const auto req = build_pose_request(candidates, pair, fixtures);
    EXPECT_EQ(req.kind, RequestKind::PoseSelection);
    ASSERT_EQ(req.images.size(), 3u);
    EXPECT_EQ(req.images[1].label, "Image 2");
    EXPECT_TRUE(req.exemplars.empty());
    EXPECT_EQ(req.metadata.at("k"), "3");
    EXPECT_NE(req.instruction.find(pair.full_prompt), std::string::npos);
    EXPECT_EQ(req.hash(), build_pose_request(candidates, pair, fixtures).hash());
}

TEST_F(AgentTest, SelectPoseUsesReplyAndRetries) {
    MockVlmClient vlm;
    vlm.set_template(RequestKind::PoseSelection, "I prefer image 3.");
    EXPECT_EQ(select_pose(candidates, pair, vlm, fixtures, opts), 2u);

    MockVlmClient flaky;
    const auto first = build_pose_request(candidates, pair, fixtures);
    flaky.set_reply(first.hash(), "They all look fine.");
    flaky.set_template(RequestKind::PoseSelection, "Image 2");
    AgentLog log;
    EXPECT_EQ(select_pose(candidates, pair, flaky, fixtures, opts, &log), 1u);
    EXPECT_EQ(flaky.call_count(), 2u);
    EXPECT_NE(log.text().find("attempt 1"), std::string::npos);

    MockVlmClient hopeless;
    hopeless.set_template(RequestKind::PoseSelection, "Image 9");
    EXPECT_THROW(select_pose(candidates, pair, hopeless, fixtures, opts), UnparsableAgentReply);
    EXPECT_EQ(hopeless.call_count(), 3u);
}

TEST_F(AgentTest, SingleCandidateSkipsTheVlm) {
    MockVlmClient vlm;
    const std::vector<CandidateImage> one{candidates[0]};
    EXPECT_EQ(select_pose(one, pair, vlm, fixtures, opts), 0u);
    EXPECT_EQ(vlm.call_count(), 0u);
}

TEST_F(AgentTest, LayoutEchoMeansNoChange) {
    MockVlmClient vlm;
    const BoundingBox b_h = human_box(points, 0.02);
    const BoundingBox b_o{0.1 + 1.0 / 3.0, 0.2, 0.9, 0.7};
    const auto s = suggest_layout(candidates[0], points, b_h, b_o, pair, vlm, fixtures, opts);
    EXPECT_EQ(s.proposed_box(), b_o);
    EXPECT_FALSE(s.needs_correction());
    EXPECT_FALSE(s.visual_attributes().empty());
    const auto req = vlm.requests().front();
    EXPECT_EQ(req.kind, RequestKind::Layout);
    EXPECT_EQ(req.exemplars.size(), 3u);
    EXPECT_EQ(req.images.size(), 1u);
    EXPECT_EQ(req.metadata.at("b_o"), to_string(b_o));
    EXPECT_EQ(req.metadata.at("keypoints"), serialize_keypoints(points));
    EXPECT_NE(req.user_text().find("### Examples"), std::string::npos);
}

TEST_F(AgentTest, LayoutMoveRequestsCorrection) {
    MockVlmClient vlm;
    vlm.set_template(RequestKind::Layout, "Reasoning: move it.\nproposed box: [0.0, 0.5, 0.5, 1.0]");
    const auto s = suggest_layout(candidates[0], points, {0.2, 0, 0.8, 1}, {0.5, 0, 1, 0.5}, pair, vlm, fixtures, opts);
    EXPECT_TRUE(s.needs_correction());
    EXPECT_EQ(s.proposed_box(), (BoundingBox{0.0, 0.5, 0.5, 1.0}));
    EXPECT_NE(s.rationale().find("move it"), std::string::npos);
}

TEST(LayoutSuggestion, GateInvariant) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 0.5);
    for (int i = 0; i < 200; ++i) {
        const BoundingBox a{u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng)}, b{u(rng), u(rng), 0.5 + u(rng), 0.5 + u(rng)};
        const LayoutSuggestion s(a, b, 0.8, "", {});
        EXPECT_EQ(s.needs_correction(), iou(a, b) < 0.8);
    }
}

TEST(MockVlm, RepliesFileAndHashLookup) {
    const fs::path p = fs::temp_directory_path() / "record_test_replies.tsv";
    VLMRequest req;
    req.instruction = "pick";
    {
        std::ofstream os(p);
        os << "# comment\n" << req.hash() << "\tline one\\nImage 2\n";
    }
    MockVlmClient vlm;
    vlm.load_replies(p);
    EXPECT_EQ(vlm.complete(req).text, "line one\nImage 2");
    req.instruction = "other";
    EXPECT_EQ(vlm.complete(req).text, "Image 1");
}

TEST(VlmRequest, HashCoversImages) {
    VLMRequest a;
    a.images.push_back({"Image 1", {1, 2, 3}});
    VLMRequest b = a;
    b.images[0].png[2] = 4;
    EXPECT_NE(a.hash(), b.hash());
    b = a;
    b.images[0].label = "Image 2";
    EXPECT_NE(a.hash(), b.hash());
}

TEST(CachedVlm, SecondCallIsServedFromDisk) {
    const fs::path dir = fs::temp_directory_path() / "record_test_vlm_cache";
    fs::remove_all(dir);
    auto inner = std::make_shared<MockVlmClient>();
    CachedVlmClient cached(inner, dir);
    VLMRequest req;
    req.instruction = "x";
    const auto a = cached.complete(req);
    const auto b = cached.complete(req);
    EXPECT_FALSE(a.from_cache);
    EXPECT_TRUE(b.from_cache);
    EXPECT_EQ(a.text, b.text);
    EXPECT_EQ(inner->call_count(), 1u);
    EXPECT_TRUE(fs::exists(dir / (req.hash() + ".txt")));
}

TEST(RemoteVlm, MissingKeyIsUnavailable) {
    RemoteVlmOptions o;
    o.endpoint = "http://127.0.0.1:9/v1/chat/completions";
    o.api_key_env = "RECORD_TEST_SURELY_UNSET_KEY";
    RemoteVlmClient c(o);
    EXPECT_THROW(c.complete(VLMRequest{}), VLMUnavailable);
}

TEST(RemoteVlm, ChatCompletionsRoundTrip) {
    testing_support::LocalServer srv;
    std::string seen_auth;
    nlohmann::json seen;
    srv.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        seen = nlohmann::json::parse(req.body);
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Image 2"}}]})", "application/json");
    });
    ::setenv("RECORD_TEST_VLM_KEY", "secret", 1);
    RemoteVlmOptions o;
    o.endpoint = srv.url("/v1/chat/completions");
    o.model = "test-model";
    o.api_key_env = "RECORD_TEST_VLM_KEY";
    RemoteVlmClient c(o);
    VLMRequest req;
    req.system = "sys";
    req.instruction = "pick one";
    req.images.push_back({"Image 1", {137, 80, 78, 71}});
    EXPECT_EQ(c.complete(req).text, "Image 2");
    EXPECT_EQ(seen_auth, "Bearer secret");
    EXPECT_EQ(seen["model"], "test-model");
    const auto body = seen.dump();
    EXPECT_NE(body.find("data:image/png;base64,iVBORw=="), std::string::npos);
}

TEST(RemoteVlm, ServerErrorIsUnavailable) {
    testing_support::LocalServer srv;
    srv.server().Post("/v1/chat/completions",
                      [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    ::setenv("RECORD_TEST_VLM_KEY", "secret", 1);
    RemoteVlmOptions o;
    o.endpoint = srv.url("/v1/chat/completions");
    o.api_key_env = "RECORD_TEST_VLM_KEY";
    o.transport_retries = 1;
    RemoteVlmClient c(o);
    EXPECT_THROW(c.complete(VLMRequest{}), VLMUnavailable);
}
