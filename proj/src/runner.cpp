#include "record/runner.hpp"

#include <atomic>
#include <ctime>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "record/coarse_generator.hpp"
#include "record/corrector.hpp"
#include "record/error.hpp"
#include "record/hash.hpp"
#include "record/ldm_adapter.hpp"

namespace record {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const Error& e) {
        throw StageError(name, e);
    }
}

std::string utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::string read_bytes(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot read " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary);
    if (!os) throw IoError("cannot write " + p.string());
    os << text;
}

void add_artifact(RunManifest& m, const fs::path& run_dir, const std::string& name, const fs::path& rel) {
    m.artifacts[name] = rel.generic_string();
    m.artifact_sha256[name] = sha256_hex(read_bytes(run_dir / rel));
}

GerundRules rules_for(const RunConfig& config) {
    std::map<std::string, std::string> m = GerundRules().overrides();
    for (const auto& [k, v] : config.gerund_overrides) m[k] = v;
    return GerundRules(std::move(m));
}

PromptPair make_pair_for(const std::string& prompt, const RunConfig& config, const Backbone& backbone) {
    const GerundRules rules = rules_for(config);
    const HOITriplet triplet = parse_triplet(prompt, rules);
    PromptPair pair = render_prompts(
        triplet, [&backbone](std::string_view s) { return backbone.tokenize(s); }, rules);
    check_prompt_pair(pair);
    return pair;
}

std::vector<std::string> loss_layers(const Backbone& backbone, const GuidanceConfig& g) {
    const auto hooked = select_layers(backbone.cross_layers(), g.attention_resolutions);
    int coarsest = 0;
    for (const auto& l : backbone.cross_layers())
        if (std::find(hooked.begin(), hooked.end(), l.id) != hooked.end() && (coarsest == 0 || l.resolution < coarsest))
            coarsest = l.resolution;
    std::vector<std::string> out;
    for (const auto& l : backbone.cross_layers())
        if (l.resolution == coarsest && std::find(hooked.begin(), hooked.end(), l.id) != hooked.end()) out.push_back(l.id);
    return out;
}

int layer_resolution(const Backbone& backbone, const std::string& id) {
    for (const auto& l : backbone.cross_layers())
        if (l.id == id) return l.resolution;
    throw InvalidConfig("unknown layer '" + id + "'");
}

std::vector<std::uint64_t> seeds_for(const RunConfig& c, ModuleSet m) {
    if (m == ModuleSet::None) return {c.seed};
    std::vector<std::uint64_t> s;
    for (int i = 0; i < c.guidance.k; ++i) s.push_back(c.seed + static_cast<std::uint64_t>(i));
    return s;
}

json box_json(const BoundingBox& b) { return json::array({b.x_min, b.y_min, b.x_max, b.y_max}); }

BoundingBox box_from(const json& j) {
    return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(), j.at(3).get<double>()};
}

json pair_json(const PromptPair& p) {
    json align = json::array();
    for (const auto& [f, i] : p.alignment.pairs()) align.push_back({f, i});
    return {{"full_prompt", p.full_prompt},
            {"intransitive_prompt", p.intransitive_prompt},
            {"full_tokens", p.full_tokens},
            {"intrans_tokens", p.intrans_tokens},
            {"alignment", align},
            {"verb_index", p.verb_index},
            {"object_index", p.object_index ? json(*p.object_index) : json(nullptr)},
            {"triplet", {{"subject", p.triplet.subject}, {"verb", p.triplet.verb}, {"object", p.triplet.object}}}};
}

// Regenerates one candidate of a stored run (same seed, same T1 pass).
CandidateImage regenerate_candidate(const PromptPair& pair, const RunConfig& config, const Backbone& backbone,
                                    std::size_t index, const StepObserver& observer = {}) {
    GuidanceConfig g = config.guidance;
    g.k = 1;
    auto c = generate_candidates(pair, g, backbone, config.seed + index, observer);
    c.front().index = static_cast<int>(index);
    return std::move(c.front());
}

}  // namespace

ModuleSet parse_modules(std::string_view text) {
    std::string t;
    for (char c : text)
        if (!std::isspace(static_cast<unsigned char>(c))) t.push_back(static_cast<char>(std::tolower(c)));
    if (t == "none" || t == "sd") return ModuleSet::None;
    if (t == "g") return ModuleSet::G;
    if (t == "g,r") return ModuleSet::GR;
    if (t == "g,r,c") return ModuleSet::GRC;
    throw InvalidConfig("--modules must be none, g, g,r or g,r,c (got '" + std::string(text) + "')");
}

std::string to_string(ModuleSet m) {
    switch (m) {
        case ModuleSet::None: return "none";
        case ModuleSet::G: return "g";
        case ModuleSet::GR: return "g,r";
        case ModuleSet::GRC: return "g,r,c";
    }
    return "?";
}

std::string RunManifest::to_json() const {
    json j;
    j["run_id"] = run_id;
    j["config"] = config_text;
    j["prompt"] = prompt_source;
    j["modules"] = to_string(modules);
    j["seeds"] = seeds;
    j["created_at"] = created_at;
    j["finished_at"] = finished_at;
    j["artifacts"] = artifacts;
    j["artifact_sha256"] = artifact_sha256;
    j["selected_index"] = selected_index ? json(*selected_index) : json(nullptr);
    j["extracted_box"] = extracted_box ? box_json(*extracted_box) : json(nullptr);
    j["proposed_box"] = proposed_box ? box_json(*proposed_box) : json(nullptr);
    j["human_box"] = human_box ? box_json(*human_box) : json(nullptr);
    j["correction_applied"] = correction_applied;
    j["manifest_hash"] = manifest_hash();
    return j.dump(2) + "\n";
}

std::string RunManifest::manifest_hash() const {
    json j;
    j["run_id"] = run_id;
    j["config"] = config_text;
    j["prompt"] = prompt_source;
    j["modules"] = to_string(modules);
    j["seeds"] = seeds;
    j["artifacts"] = artifacts;
    j["artifact_sha256"] = artifact_sha256;
    j["selected_index"] = selected_index ? json(*selected_index) : json(nullptr);
    j["extracted_box"] = extracted_box ? box_json(*extracted_box) : json(nullptr);
    j["proposed_box"] = proposed_box ? box_json(*proposed_box) : json(nullptr);
    j["human_box"] = human_box ? box_json(*human_box) : json(nullptr);
    j["correction_applied"] = correction_applied;
    return sha256_hex(j.dump());
}

RunManifest RunManifest::from_json(std::string_view text) {
    try {
        const json j = json::parse(text);
        RunManifest m;
        m.run_id = j.at("run_id").get<std::string>();
        m.config_text = j.at("config").get<std::string>();
        m.prompt_source = j.at("prompt").get<std::string>();
        m.modules = parse_modules(j.at("modules").get<std::string>());
        m.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
        m.created_at = j.value("created_at", "");
        m.finished_at = j.value("finished_at", "");
        m.artifacts = j.at("artifacts").get<std::map<std::string, std::string>>();
        m.artifact_sha256 = j.at("artifact_sha256").get<std::map<std::string, std::string>>();
        if (!j.at("selected_index").is_null()) m.selected_index = j.at("selected_index").get<std::size_t>();
        if (!j.at("extracted_box").is_null()) m.extracted_box = box_from(j.at("extracted_box"));
        if (!j.at("proposed_box").is_null()) m.proposed_box = box_from(j.at("proposed_box"));
        if (!j.at("human_box").is_null()) m.human_box = box_from(j.at("human_box"));
        m.correction_applied = j.at("correction_applied").get<bool>();
        return m;
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw IoError(std::string("malformed manifest: ") + e.what());
    }
}

RunServices RunServices::from_config(const RunConfig& config) {
    RunServices s;
    if (config.vlm == "mock") {
        auto mock = std::make_shared<MockVlmClient>();
        if (!config.mock_pose_reply.empty()) mock->set_template(RequestKind::PoseSelection, config.mock_pose_reply);
        if (!config.mock_layout_reply.empty()) mock->set_template(RequestKind::Layout, config.mock_layout_reply);
        if (!config.mock_replies_file.empty()) mock->load_replies(config.mock_replies_file);
        s.vlm = mock;
    } else {
        RemoteVlmOptions o;
        o.endpoint = config.vlm_endpoint;
        o.model = config.vlm_model;
        o.api_key_env = config.vlm_api_key_env;
        o.timeout_s = config.vlm_timeout_s;
        o.transport_retries = config.vlm_retries;
        o.limiter = std::make_shared<RateLimiter>(std::chrono::milliseconds(config.vlm_rate_limit_ms));
        s.vlm = std::make_shared<CachedVlmClient>(std::make_shared<RemoteVlmClient>(o), config.vlm_cache_dir);
    }
    if (config.keypoints == "fixture")
        s.keypoints = std::make_shared<FixtureKeypointDetector>(config.keypoint_fixture_dir);
    else
        s.keypoints = std::make_shared<TemplateKeypointDetector>();
    s.embedder = make_embedder(config);
    s.fixtures = AgentFixtures::load(config.resolved_fixtures_dir());
    return s;
}

std::string compute_run_id(const RunConfig& config, std::string_view prompt, ModuleSet modules) {
    std::string key = config.to_text();
    key += '\x1f';
    key += prompt;
    key += '\x1f';
    key += to_string(modules);
    return sha256_hex(key).substr(0, 16);
}

RunRequest request_from_manifest(const RunManifest& m, fs::path out_root) {
    RunRequest r;
    r.prompt = m.prompt_source;
    r.config = parse_config(m.config_text);
    r.modules = m.modules;
    r.out_root = std::move(out_root);
    return r;
}

RunManifest load_manifest(const fs::path& run_dir) {
    const auto p = run_dir / "manifest.json";
    if (!fs::exists(p)) throw RunNotFound("no manifest at " + p.string());
    return RunManifest::from_json(read_bytes(p));
}

RunManifest run_generate(const RunRequest& req, RunServices& services) {
    const RunConfig& config = req.config;
    stage("config", [&] { config.validate(); });
    const auto backbone = stage("backbone", [&] { return make_backbone(config); });
    const PromptPair pair = stage("prompt", [&] { return make_pair_for(req.prompt, config, *backbone); });

    RunManifest m;
    m.run_id = compute_run_id(config, req.prompt, req.modules);
    m.config_text = config.to_text();
    m.prompt_source = req.prompt;
    m.modules = req.modules;
    m.seeds = seeds_for(config, req.modules);
    m.created_at = utc_now();
    const fs::path dir = req.out_root / m.run_id;
    fs::create_directories(dir);
    write_text(dir / "config.txt", m.config_text);
    add_artifact(m, dir, "config", "config.txt");

    const GuidanceConfig& g = config.guidance;
    Image final_image;
    bool have_final = false;

    if (req.modules == ModuleSet::None) {
        auto r = stage("render", [&] { return plain_generate(pair, g, *backbone, config.seed); });
        final_image = std::move(r.image);
        have_final = true;
    } else {
        auto candidates = stage("M_g", [&] { return generate_candidates(pair, g, *backbone, config.seed); });
        json cm;
        cm["prompt_pair"] = pair_json(pair);
        cm["seeds"] = json::array();
        for (const auto& c : candidates) {
            const fs::path rel = fs::path("candidates") / (std::to_string(c.index) + ".png");
            write_png(dir / rel, c.preview);
            add_artifact(m, dir, "candidate_" + std::to_string(c.index), rel);
            cm["seeds"].push_back(c.seed);
        }
        write_text(dir / "candidates" / "manifest.json", cm.dump(2) + "\n");
        add_artifact(m, dir, "candidates_manifest", "candidates/manifest.json");

        if (req.modules != ModuleSet::G) {
            AgentLog log;
            const AgentOptions opts{config.vlm_retries, g.change_threshold};
            std::size_t chosen = 0;
            std::optional<LayoutSuggestion> suggestion;
            stage("M_r", [&] {
                chosen = select_pose(candidates, pair, *services.vlm, services.fixtures, opts, &log);
                const CandidateImage& c = candidates[chosen];
                const PoseKeypoints points = services.keypoints->detect(c.preview);
                const BoundingBox b_h = human_box(points, config.keypoint_margin);
                const auto layers = loss_layers(*backbone, g);
                const int r = layer_resolution(*backbone, layers.front());
                const auto obj = aggregate_token_map(c.final_cross_maps, *pair.object_index, layers);
                const BoundingBox b_o = extract_object_box(obj, r);
                suggestion.emplace(suggest_layout(c, points, b_h, b_o, pair, *services.vlm, services.fixtures, opts, &log));

                json lj;
                lj["selected_index"] = chosen;
                lj["b_h"] = box_json(b_h);
                lj["b_o"] = box_json(b_o);
                lj["b_hat_o"] = box_json(suggestion->proposed_box());
                lj["iou"] = iou(b_o, suggestion->proposed_box());
                lj["change_threshold"] = g.change_threshold;
                lj["needs_correction"] = suggestion->needs_correction();
                lj["rationale"] = suggestion->rationale();
                lj["visual_attributes"] = suggestion->visual_attributes();
                json kp = json::array();
                for (const auto& p : points.points) kp.push_back({p.x, p.y, p.valid});
                lj["keypoints"] = kp;
                lj["keypoint_source"] = points.source;
                write_text(dir / "layout.json", lj.dump(2) + "\n");
                write_array(dir / "human_mask.arr", human_mask(points, r), r, r);
                m.human_box = b_h;
            });
            log.write(dir / "agent_log.txt");
            add_artifact(m, dir, "agent_log", "agent_log.txt");
            add_artifact(m, dir, "layout", "layout.json");
            add_artifact(m, dir, "human_mask", "human_mask.arr");
            m.selected_index = chosen;
            m.extracted_box = suggestion->extracted_box();
            m.proposed_box = suggestion->proposed_box();

            const CandidateImage& c = candidates[chosen];
            if (req.modules == ModuleSet::GRC && suggestion->needs_correction()) {
                auto r = stage("M_c", [&] { return corrected_generate(c, *suggestion, g, *backbone); });
                write_loss_trace(dir / "loss_trace.csv", r.trace);
                add_artifact(m, dir, "loss_trace", "loss_trace.csv");
                final_image = std::move(r.image);
                m.correction_applied = true;
            } else {
                auto r = stage("render", [&] { return rerender(c, g, *backbone); });
                final_image = std::move(r.image);
            }
            have_final = true;
        }
    }

    if (have_final) {
        write_png(dir / "final.png", final_image);
        add_artifact(m, dir, "final", "final.png");
    }
    if (services.embedder) {
        const Image& img = have_final ? final_image : read_png(dir / "candidates" / "0.png");
        auto rec = stage("eval", [&] { return score_image(m.run_id, img, pair, services.embedder.get()); });
        write_scores_tsv(dir / "scores.tsv", {rec});
        add_artifact(m, dir, "scores", "scores.tsv");
    }
    m.finished_at = utc_now();
    write_text(dir / "manifest.json", m.to_json());
    return m;
}

BatchResult run_batch(const fs::path& prompt_file, const RunConfig& config, ModuleSet modules, const fs::path& out_root,
                      RunServices& services) {
    if (!fs::exists(prompt_file)) throw PromptFileMissing("prompt file " + prompt_file.string() + " does not exist");
    const std::string content = read_bytes(prompt_file);
    // Keep source line numbers for the ledger.
    std::vector<std::pair<std::size_t, std::string>> lines;
    {
        std::istringstream is(content);
        std::size_t no = 0;
        for (std::string line; std::getline(is, line);) {
            ++no;
            const auto rec = read_prompt_lines(line);
            if (!rec.empty()) lines.emplace_back(no, rec.front());
        }
    }
    if (lines.empty()) throw PromptFileMissing("prompt file " + prompt_file.string() + " has no prompts");

    std::vector<std::optional<RunManifest>> results(lines.size());
    std::vector<std::optional<BatchLedgerEntry>> failures(lines.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < lines.size();) {
            try {
                results[i] = run_generate({lines[i].second, config, modules, out_root}, services);
            } catch (const Error& e) {
                failures[i] = BatchLedgerEntry{lines[i].first, lines[i].second, e.kind(), e.what()};
            } catch (const std::exception& e) {
                failures[i] = BatchLedgerEntry{lines[i].first, lines[i].second, "InternalError", e.what()};
            }
        }
    };
    const std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, config.workers)), lines.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    BatchResult out;
    for (auto& r : results)
        if (r) out.manifests.push_back(std::move(*r));
    std::string ledger = "line\tprompt\tkind\tmessage\n";
    for (auto& f : failures)
        if (f) {
            std::string msg = f->message;
            std::replace(msg.begin(), msg.end(), '\t', ' ');
            std::replace(msg.begin(), msg.end(), '\n', ' ');
            ledger += std::to_string(f->line) + "\t" + f->prompt + "\t" + f->kind + "\t" + msg + "\n";
            out.errors.push_back(std::move(*f));
        }
    write_text(out_root / "batch_errors.tsv", ledger);

    if (services.embedder && !out.manifests.empty()) {
        std::vector<ScoreRecord> records;
        for (const auto& m : out.manifests) {
            const auto text = read_bytes(out_root / m.run_id / "scores.tsv");
            // Reuse the per-run scores rather than re-embedding.
            std::istringstream is(text);
            std::string line;
            std::getline(is, line);  // scale comment
            std::getline(is, line);  // header
            while (std::getline(is, line)) {
                std::istringstream ls(line);
                ScoreRecord r;
                std::string clip, verb;
                std::getline(ls, r.run_id, '\t');
                std::getline(ls, r.prompt, '\t');
                std::getline(ls, clip, '\t');
                std::getline(ls, verb, '\t');
                r.clip_score = std::stod(clip);
                r.verb_clip_score = std::stod(verb);
                records.push_back(std::move(r));
            }
        }
        out.summary = batch_report(std::move(records));
        write_text(out_root / "batch_summary.tsv", summary_tsv(*out.summary));
    }
    return out;
}

InspectResult inspect_attention(const fs::path& out_root, const std::string& run_id, int step, const std::string& layer,
                                const fs::path& dump_root) {
    const RunManifest m = load_manifest(out_root / run_id);
    const RunConfig config = parse_config(m.config_text);
    const auto backbone = make_backbone(config);
    const PromptPair pair = make_pair_for(m.prompt_source, config, *backbone);
    const GuidanceConfig& g = config.guidance;

    const int steps = m.modules == ModuleSet::G ? g.T1 : g.T2;
    if (step < 1 || step > steps)
        return {{}, "step " + std::to_string(step) + " is outside the " + std::to_string(steps) + "-step schedule of this run"};

    std::vector<std::string> layers;
    if (layer.empty()) {
        layers = select_layers(backbone->cross_layers(), g.attention_resolutions);
    } else {
        layer_resolution(*backbone, layer);
        layers = {layer};
    }

    std::optional<AttentionMapSet> captured;
    const StepObserver grab = [&](int t, const AttentionMapSet& maps) {
        if (t == step) captured = maps;
    };
    switch (m.modules) {
        case ModuleSet::None:
            plain_generate(pair, g, *backbone, config.seed, grab);
            break;
        case ModuleSet::G:
            regenerate_candidate(pair, config, *backbone, 0, grab);
            break;
        case ModuleSet::GR:
        case ModuleSet::GRC: {
            const auto c = regenerate_candidate(pair, config, *backbone, m.selected_index.value_or(0));
            if (m.correction_applied && m.proposed_box)
                corrected_generate(c, *m.proposed_box, g, *backbone, grab);
            else
                rerender(c, g, *backbone, grab);
            break;
        }
    }
    InspectResult out;
    if (!captured) {
        out.warning = "no attention captured at step " + std::to_string(step);
        return out;
    }
    for (const auto& id : layers) {
        auto files = dump_attention(dump_root / run_id, *captured, id);
        out.files.insert(out.files.end(), files.begin(), files.end());
    }
    return out;
}

std::vector<ScoreRecord> evaluate_runs(const fs::path& out_root, const std::vector<std::string>& run_ids,
                                       Embedder* embedder) {
    if (embedder == nullptr) throw EmbedderUnavailable("evaluate needs an embedder (set embedder = remote)");
    std::vector<ScoreRecord> out;
    for (const auto& id : run_ids) {
        const fs::path dir = out_root / id;
        const RunManifest m = load_manifest(dir);
        const RunConfig config = parse_config(m.config_text);
        const auto backbone = make_backbone(config);
        const PromptPair pair = make_pair_for(m.prompt_source, config, *backbone);
        const fs::path img = fs::exists(dir / "final.png") ? dir / "final.png" : dir / "candidates" / "0.png";
        auto rec = score_image(id, read_png(img), pair, embedder);
        write_scores_tsv(dir / "scores.tsv", {rec});
        out.push_back(std::move(rec));
    }
    return out;
}

}  // namespace record
