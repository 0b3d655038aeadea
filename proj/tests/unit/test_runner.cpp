#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "record/error.hpp"
#include "record/runner.hpp"

using namespace record;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

class RunnerTest : public ::testing::Test {
protected:
    void SetUp() override {
        root = fs::temp_directory_path() /
               ("record_runner_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(root);
        fs::create_directories(root);
        config.guidance.T1 = 4;
        config.guidance.T2 = 8;
        config.guidance.k = 3;
        config.seed = 21;
        config.fixtures_dir = RECORD_FIXTURES_DIR;
    }
    void TearDown() override { fs::remove_all(root); }

    RunManifest run(const std::string& prompt, ModuleSet modules) {
        auto services = RunServices::from_config(config);
        return run_generate({prompt, config, modules, root / "runs"}, services);
    }

    fs::path root;
    RunConfig config;
};

}  // namespace

TEST(Modules, ParseAndPrint) {
    for (auto m : {ModuleSet::None, ModuleSet::G, ModuleSet::GR, ModuleSet::GRC})
        EXPECT_EQ(parse_modules(to_string(m)), m);
    EXPECT_EQ(parse_modules("sd"), ModuleSet::None);
    EXPECT_THROW(parse_modules("r,c"), InvalidConfig);
    EXPECT_THROW(parse_modules("g,c"), InvalidConfig);
}

TEST(RunId, DependsOnInputsOnly) {
    RunConfig c;
    const auto a = compute_run_id(c, "man|ride|horse", ModuleSet::GRC);
    EXPECT_EQ(a, compute_run_id(c, "man|ride|horse", ModuleSet::GRC));
    EXPECT_NE(a, compute_run_id(c, "man|ride|horse", ModuleSet::GR));
    EXPECT_NE(a, compute_run_id(c, "man|ride|bike", ModuleSet::GRC));
    c.seed = 1;
    EXPECT_NE(a, compute_run_id(c, "man|ride|horse", ModuleSet::GRC));
}

TEST_F(RunnerTest, ManifestRoundTripAndHash) {
    const auto m = run("man|ride|horse", ModuleSet::GR);
    const auto loaded = load_manifest(root / "runs" / m.run_id);
    EXPECT_EQ(loaded.manifest_hash(), m.manifest_hash());
    EXPECT_EQ(loaded.to_json(), m.to_json());
    EXPECT_EQ(loaded.seeds, (std::vector<std::uint64_t>{21, 22, 23}));
    ASSERT_TRUE(loaded.selected_index.has_value());
    EXPECT_LT(*loaded.selected_index, 3u);

    RunManifest later = loaded;
    later.created_at = "2099-01-01T00:00:00Z";
    later.finished_at = "2099-01-01T00:00:01Z";
    EXPECT_EQ(later.manifest_hash(), m.manifest_hash());
    later.correction_applied = !later.correction_applied;
    EXPECT_NE(later.manifest_hash(), m.manifest_hash());

    // Rerunning reproduces every artifact byte for byte.
    const auto again = run("man|ride|horse", ModuleSet::GR);
    EXPECT_EQ(again.manifest_hash(), m.manifest_hash());
    EXPECT_EQ(again.artifact_sha256, m.artifact_sha256);
    EXPECT_THROW(load_manifest(root / "runs" / "missing"), RunNotFound);
}

TEST_F(RunnerTest, ArtifactsPerModuleSet) {
    const auto none = run("woman|hold|umbrella", ModuleSet::None);
    EXPECT_TRUE(none.artifacts.count("final"));
    EXPECT_FALSE(none.selected_index.has_value());
    EXPECT_EQ(none.seeds.size(), 1u);

    const auto g = run("woman|hold|umbrella", ModuleSet::G);
    EXPECT_FALSE(g.artifacts.count("final"));
    EXPECT_FALSE(fs::exists(root / "runs" / g.run_id / "final.png"));
    for (int i = 0; i < 3; ++i)
        EXPECT_TRUE(fs::exists(root / "runs" / g.run_id / "candidates" / (std::to_string(i) + ".png")));

    const auto gr = run("woman|hold|umbrella", ModuleSet::GR);
    EXPECT_TRUE(gr.artifacts.count("final"));
    EXPECT_TRUE(gr.artifacts.count("layout"));
    EXPECT_FALSE(gr.artifacts.count("loss_trace"));
    EXPECT_FALSE(gr.correction_applied);

    // Echoed layout: the corrector is bypassed even when enabled.
    const auto grc_echo = run("woman|hold|umbrella", ModuleSet::GRC);
    EXPECT_FALSE(grc_echo.correction_applied);
    EXPECT_FALSE(grc_echo.artifacts.count("loss_trace"));
    EXPECT_EQ(grc_echo.artifact_sha256.at("final"), gr.artifact_sha256.at("final"));

    config.mock_layout_reply = "[0, 0, 8, 8]";
    const auto grc = run("woman|hold|umbrella", ModuleSet::GRC);
    EXPECT_TRUE(grc.correction_applied);
    ASSERT_TRUE(grc.artifacts.count("loss_trace"));
    const std::string trace = slurp(root / "runs" / grc.run_id / grc.artifacts.at("loss_trace"));
    EXPECT_EQ(std::count(trace.begin(), trace.end(), '\n'), 9);
    EXPECT_NE(grc.artifact_sha256.at("final"), gr.artifact_sha256.at("final"));
}

TEST_F(RunnerTest, BatchIsolatesFailures) {
    const fs::path prompts = root / "prompts.txt";
    std::ofstream(prompts) << "man|ride|horse\n\nthis is not a triplet\n# comment\nwoman|hold|umbrella\n";
    config.workers = 2;
    auto services = RunServices::from_config(config);
    const auto res = run_batch(prompts, config, ModuleSet::GR, root / "runs", services);
    ASSERT_EQ(res.manifests.size(), 2u);
    EXPECT_EQ(res.manifests[0].prompt_source, "man|ride|horse");
    EXPECT_EQ(res.manifests[1].prompt_source, "woman|hold|umbrella");
    ASSERT_EQ(res.errors.size(), 1u);
    EXPECT_EQ(res.errors[0].line, 3u);
    const std::string ledger = slurp(root / "runs" / "batch_errors.tsv");
    EXPECT_EQ(ledger.rfind("line\tprompt\tkind\tmessage\n3\tthis is not a triplet\t", 0), 0u);
    EXPECT_FALSE(res.summary.has_value());

    // Same prompts on one worker give the same images.
    config.workers = 1;
    const auto serial = run_batch(prompts, config, ModuleSet::GR, root / "runs1", services);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(serial.manifests[i].selected_index, res.manifests[i].selected_index);
        EXPECT_EQ(serial.manifests[i].artifact_sha256.at("final"), res.manifests[i].artifact_sha256.at("final"));
    }

    std::ofstream(root / "empty.txt") << "\n# nothing\n";
    EXPECT_THROW(run_batch(root / "empty.txt", config, ModuleSet::G, root / "runs", services), PromptFileMissing);
    EXPECT_THROW(run_batch(root / "absent.txt", config, ModuleSet::G, root / "runs", services), PromptFileMissing);
}

TEST_F(RunnerTest, InspectAttention) {
    const auto m = run("man|ride|horse", ModuleSet::GR);
    const auto res = inspect_attention(root / "runs", m.run_id, 5, "mid.cross", root / "dumps");
    EXPECT_TRUE(res.warning.empty());
    ASSERT_FALSE(res.files.empty());
    for (const auto& f : res.files) {
        EXPECT_TRUE(fs::exists(f));
        EXPECT_NE(f.string().find("/5/mid.cross/"), std::string::npos);
    }
    const auto out = inspect_attention(root / "runs", m.run_id, 9, "", root / "dumps");
    EXPECT_TRUE(out.files.empty());
    EXPECT_FALSE(out.warning.empty());
    EXPECT_THROW(inspect_attention(root / "runs", m.run_id, 5, "nope", root / "dumps"), InvalidConfig);
    EXPECT_THROW(inspect_attention(root / "runs", "missing", 5, "", root / "dumps"), RunNotFound);
}

TEST_F(RunnerTest, EvaluateNeedsEmbedder) {
    const auto m = run("man|ride|horse", ModuleSet::G);
    EXPECT_THROW(evaluate_runs(root / "runs", {m.run_id}, nullptr), EmbedderUnavailable);
    MockEmbedder e;
    const auto recs = evaluate_runs(root / "runs", {m.run_id}, &e);
    ASSERT_EQ(recs.size(), 1u);
    EXPECT_EQ(recs[0].prompt, "a man is riding a horse");
    EXPECT_TRUE(fs::exists(root / "runs" / m.run_id / "scores.tsv"));
}

TEST_F(RunnerTest, CliExitCodes) {
    const std::string cli = RECORD_CLI_PATH;
    const std::string out = (root / "runs").string();
    const std::string fx = std::string(" --set fixtures_dir=") + RECORD_FIXTURES_DIR;
    const std::string quiet = " > " + (root / "log.txt").string() + " 2>&1";
    auto code = [&](const std::string& args) {
        const int st = std::system((cli + " " + args + quiet).c_str());
        return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
    };
    EXPECT_EQ(code("generate \"man|ride|horse\" --modules g --seed 3 --set T1=3 --set T2=6 --set k=2 --out " + out + fx), 0);
    const std::string run_id = compute_run_id(
        parse_config("T1=3\nT2=6\nk=2\nseed=3\nfixtures_dir=" + std::string(RECORD_FIXTURES_DIR)), "man|ride|horse",
        ModuleSet::G);
    EXPECT_TRUE(fs::exists(root / "runs" / run_id / "manifest.json")) << slurp(root / "log.txt");
    EXPECT_EQ(code("inspect-attention " + run_id + " --step 2 --out " + out + " --dumps " + (root / "d").string()), 0);
    EXPECT_EQ(code("inspect-attention " + run_id + " --step 99 --out " + out + " --dumps " + (root / "d").string()), 3);
    EXPECT_EQ(code("generate \"not a triplet\" --out " + out + fx), 1);
    EXPECT_EQ(code("generate \"man|ride|horse\" --set bogus=1 --out " + out), 1);
    EXPECT_EQ(code("evaluate " + run_id + " --out " + out), 1);
}
