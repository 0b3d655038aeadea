// record: command-line front end for the ReCorD pipeline.
//
//   record generate "a man is carrying a bicycle" --modules g,r,c --seed 7
//   record batch prompts.txt --config my.conf
//   record evaluate <run-id>... --config eval.conf
//   record inspect-attention <run-id> --step 12 --layer mid.cross
//
// Exit status: 0 success, 1 pipeline error, 3 finished with a warning.

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "record/error.hpp"
#include "record/runner.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string modules = "g,r,c";
    std::string backbone;
    std::string vlm;
    std::string out = "runs";
    std::vector<std::string> overrides;  // key=value
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_modules) {
    cmd->add_option("--config", f.config_path, "key=value config file (docs/config.md)");
    cmd->add_option("--seed", f.seed, "base seed; candidates use seed + i");
    if (with_modules) cmd->add_option("--modules", f.modules, "none | g | g,r | g,r,c")->capture_default_str();
    cmd->add_option("--backbone", f.backbone, "toy | ldm-adapter");
    cmd->add_option("--vlm", f.vlm, "mock | remote");
    cmd->add_option("--out", f.out, "root of the runs/ tree")->capture_default_str();
    cmd->add_option("--set", f.overrides, "extra config entries, key=value (repeatable)");
}

record::RunConfig build_config(const CommonFlags& f) {
    record::RunConfig c;
    if (!f.config_path.empty()) c = record::load_config(f.config_path);
    for (const auto& kv : f.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw record::InvalidConfig("--set expects key=value, got '" + kv + "'");
        c.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (f.seed) c.seed = *f.seed;
    if (!f.backbone.empty()) c.backbone = f.backbone;
    if (!f.vlm.empty()) c.vlm = f.vlm;
    c.validate();
    return c;
}

void print_manifest(const record::RunManifest& m, const std::string& out) {
    std::cout << "run " << m.run_id << "  modules=" << record::to_string(m.modules) << "  manifest_hash=" << m.manifest_hash()
              << "\n";
    if (m.selected_index) std::cout << "  selected candidate " << *m.selected_index << "\n";
    if (m.extracted_box && m.proposed_box)
        std::cout << "  b_o " << record::to_string(*m.extracted_box) << " -> " << record::to_string(*m.proposed_box)
                  << (m.correction_applied ? "  (corrected)" : "  (no change)") << "\n";
    for (const auto& [name, rel] : m.artifacts) std::cout << "  " << name << ": " << out << "/" << m.run_id << "/" << rel << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ReCorD: training-free human-object interaction generation"};
    app.require_subcommand(1);

    CommonFlags gen_flags;
    std::string gen_prompt, gen_manifest;
    auto* gen = app.add_subcommand("generate", "run the pipeline on one prompt");
    gen->add_option("prompt", gen_prompt, "\"subject|verb|object\" or \"a man is carrying a bicycle\"");
    gen->add_option("--manifest", gen_manifest, "re-run the inputs recorded in a manifest.json");
    add_common(gen, gen_flags, true);

    CommonFlags batch_flags;
    std::string batch_file;
    auto* batch = app.add_subcommand("batch", "one run per line of a prompt file");
    batch->add_option("prompts", batch_file, "prompt file (subject|verb|object per line)")->required();
    add_common(batch, batch_flags, true);

    CommonFlags eval_flags;
    std::vector<std::string> eval_runs;
    auto* eval = app.add_subcommand("evaluate", "CLIP-Score and Verb CLIP-Score of finished runs");
    eval->add_option("runs", eval_runs, "run ids")->required();
    add_common(eval, eval_flags, false);

    std::string insp_run, insp_layer, insp_dumps = "dumps";
    std::string insp_out = "runs";
    int insp_step = 0;
    auto* insp = app.add_subcommand("inspect-attention", "dump the attention maps of one step of a run");
    insp->add_option("run", insp_run, "run id")->required();
    insp->add_option("--step", insp_step, "denoising step t of the run's last pass")->required();
    insp->add_option("--layer", insp_layer, "cross-attention layer id (default: all hooked layers)");
    insp->add_option("--out", insp_out, "root of the runs/ tree")->capture_default_str();
    insp->add_option("--dumps", insp_dumps, "root of the dump tree")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            record::RunRequest req;
            if (!gen_manifest.empty()) {
                const auto m = record::RunManifest::from_json([&] {
                    std::ifstream is(gen_manifest);
                    if (!is) throw record::RunNotFound("cannot read " + gen_manifest);
                    std::stringstream ss;
                    ss << is.rdbuf();
                    return ss.str();
                }());
                req = record::request_from_manifest(m, gen_flags.out);
            } else {
                if (gen_prompt.empty()) throw record::InvalidConfig("generate needs a prompt or --manifest");
                req.prompt = gen_prompt;
                req.config = build_config(gen_flags);
                req.modules = record::parse_modules(gen_flags.modules);
                req.out_root = gen_flags.out;
            }
            auto services = record::RunServices::from_config(req.config);
            print_manifest(record::run_generate(req, services), req.out_root.string());
        } else if (*batch) {
            const auto config = build_config(batch_flags);
            auto services = record::RunServices::from_config(config);
            const auto res = record::run_batch(batch_file, config, record::parse_modules(batch_flags.modules),
                                               batch_flags.out, services);
            for (const auto& m : res.manifests) print_manifest(m, batch_flags.out);
            for (const auto& e : res.errors) std::cerr << "line " << e.line << ": " << e.kind << ": " << e.message << "\n";
            if (res.summary)
                std::cout << "mean clip_score " << res.summary->mean_clip_score << ", verb_clip_score "
                          << res.summary->mean_verb_clip_score << " over " << res.summary->count << " runs\n";
            std::cout << res.manifests.size() << " runs, " << res.errors.size() << " failures\n";
            return res.errors.empty() ? 0 : 3;
        } else if (*eval) {
            const auto config = build_config(eval_flags);
            auto embedder = record::make_embedder(config);
            const auto records = record::evaluate_runs(eval_flags.out, eval_runs, embedder.get());
            std::cout << record::scores_tsv(records);
            if (!records.empty()) std::cout << record::summary_tsv(record::batch_report(records));
        } else if (*insp) {
            const auto res = record::inspect_attention(insp_out, insp_run, insp_step, insp_layer, insp_dumps);
            for (const auto& f : res.files) std::cout << f.string() << "\n";
            if (!res.warning.empty()) {
                std::cerr << "warning: " << res.warning << "\n";
                return 3;
            }
        }
    } catch (const record::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
