#include "record/agents.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

#include "record/error.hpp"

namespace record {

namespace {

constexpr std::array<const char*, 10> kCardinals = {"one", "two",   "three", "four", "five",
                                                    "six", "seven", "eight", "nine", "ten"};
constexpr std::array<const char*, 10> kOrdinals = {"first", "second",  "third",  "fourth", "fifth",
                                                   "sixth", "seventh", "eighth", "ninth",  "tenth"};

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::size_t word_value(const std::string& w) {
    for (std::size_t i = 0; i < kCardinals.size(); ++i)
        if (w == kCardinals[i] || w == kOrdinals[i]) return i + 1;
    return 0;
}

std::string word_alternation() {
    std::string alt;
    for (std::size_t i = 0; i < kCardinals.size(); ++i) alt += std::string(i ? "|" : "") + kCardinals[i] + "|" + kOrdinals[i];
    return alt;
}

// Digits as an index; anything longer than a few digits is out of range anyway.
std::size_t digits_value(const std::string& d) { return d.size() > 6 ? 0 : static_cast<std::size_t>(std::stoul(d)); }

std::string read_file(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw IoError("missing agent fixture " + p.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

std::string trim(std::string s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    std::size_t b = 0;
    while (b < s.size() && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    return s.substr(b);
}

template <typename Parse>
auto ask_with_retries(VLMRequest request, VlmClient& vlm, const AgentOptions& options, AgentLog* log, Parse&& parse)
    -> std::pair<decltype(parse(std::string{})), std::string> {
    const std::string base_instruction = request.instruction;
    for (int attempt = 0;; ++attempt) {
        const auto reply = vlm.complete(request);
        if (log) log->record(request, reply.text, attempt);
        try {
            return {parse(reply.text), reply.text};
        } catch (const UnparsableAgentReply& e) {
            if (attempt >= options.retries) throw;
            request.instruction = base_instruction +
                                  "\n\nYour previous answer could not be used (" + std::string(e.what()) +
                                  "). Reply again and follow the required answer format exactly.";
        }
    }
}

std::map<std::string, std::string> pair_metadata(const PromptPair& pair) {
    const GerundRules rules;
    return {{"prompt", pair.full_prompt},
            {"intransitive_prompt", pair.intransitive_prompt},
            {"subject", pair.triplet.subject},
            {"verb", pair.triplet.verb},
            {"verb_gerund", rules.verb_gerund(pair.triplet.verb)},
            {"object", pair.triplet.object}};
}

}  // namespace

std::size_t parse_pose_reply(std::string_view reply_in, std::size_t k) {
    if (k == 0) throw UnparsableAgentReply("no candidates to choose from");
    const std::string reply = lower(reply_in);
    static const std::regex labelled(R"(\b(?:image|picture|candidate|option|photo)\s*(?:#|no\.?|number)?\s*(\d+))");
    static const std::regex hashed(R"(#\s*(\d+))");
    static const std::regex labelled_word("\\b(?:image|picture|candidate|option|photo)\\s+(" + word_alternation() + ")\\b");
    static const std::regex bare(R"((?:^|[^\d.\-])(\d+)(?![\d.]))");
    static const std::regex any_word("\\b(" + word_alternation() + ")\\b");

    std::size_t value = 0;
    bool found = false;
    std::smatch m;
    if (std::regex_search(reply, m, labelled) || std::regex_search(reply, m, hashed)) {
        value = digits_value(m[1].str());
        found = true;
    } else if (std::regex_search(reply, m, labelled_word)) {
        value = word_value(m[1].str());
        found = true;
    } else if (std::regex_search(reply, m, bare)) {
        value = digits_value(m[1].str());
        found = true;
    } else if (std::regex_search(reply, m, any_word)) {
        value = word_value(m[1].str());
        found = true;
    }
    if (!found) throw UnparsableAgentReply("no image reference in reply");
    if (value < 1 || value > k)
        throw UnparsableAgentReply("image reference " + std::to_string(value) + " outside 1.." + std::to_string(k));
    return value - 1;
}

BoundingBox parse_box_reply(std::string_view reply_in, int image_width, int image_height) {
    static const std::string num = R"(([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))";
    static const std::regex group("\\[\\s*" + num + "\\s*,\\s*" + num + "\\s*,\\s*" + num + "\\s*,\\s*" + num + "\\s*\\]");
    const std::string reply(reply_in);
    std::smatch m;
    if (!std::regex_search(reply, m, group)) throw UnparsableAgentReply("no [x_min, y_min, x_max, y_max] group in reply");
    std::array<double, 4> v{};
    for (int i = 0; i < 4; ++i) v[i] = std::strtod(m[i + 1].str().c_str(), nullptr);
    for (double x : v)
        if (!std::isfinite(x)) throw BoxOutOfRange("non-finite box coordinate");
    if (std::any_of(v.begin(), v.end(), [](double x) { return x > 1.0; })) {
        if (image_width < 1 || image_height < 1) throw BoxOutOfRange("pixel box without image size");
        v[0] /= image_width;
        v[2] /= image_width;
        v[1] /= image_height;
        v[3] /= image_height;
    }
    const BoundingBox b{v[0], v[1], v[2], v[3]};
    if (!b.valid()) throw BoxOutOfRange("scraped box " + to_string(b) + " is not a valid normalized box");
    return b;
}

std::vector<std::pair<std::string, std::string>> parse_visual_attributes(std::string_view reply) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream is{std::string(reply)};
    bool in_block = false;
    for (std::string line; std::getline(is, line);) {
        const std::string t = trim(line);
        const std::string lt = lower(t);
        if (lt.rfind("visual attributes", 0) == 0) {
            in_block = true;
            continue;
        }
        if (!in_block) continue;
        const auto colon = t.find(':');
        if (t.empty() || colon == std::string::npos || colon == 0) {
            if (!out.empty()) break;
            continue;
        }
        std::string key = lower(trim(t.substr(0, colon)));
        if (key.rfind("- ", 0) == 0) key = trim(key.substr(2));
        if (key == "reasoning" || key == "proposed box") break;
        out.emplace_back(key, trim(t.substr(colon + 1)));
    }
    return out;
}

AgentFixtures AgentFixtures::load(const std::filesystem::path& dir) {
    AgentFixtures f;
    f.system = read_file(dir / "prompts" / "system_v1.txt");
    f.pose_instruction = read_file(dir / "prompts" / "pose_v1.txt");
    f.layout_instruction = read_file(dir / "prompts" / "layout_v1.txt");
    for (int i = 1; i <= 3; ++i) f.exemplars.push_back(read_file(dir / "fewshot" / (std::to_string(i) + ".txt")));
    return f;
}

void AgentLog::record(const VLMRequest& request, const std::string& reply, int attempt) {
    std::lock_guard lock(mu_);
    text_ += "=== " + std::string(to_string(request.kind)) + " request " + request.hash().substr(0, 16) + " attempt " +
             std::to_string(attempt) + "\n";
    for (const auto& img : request.images) text_ += "[image] " + img.label + " (" + std::to_string(img.png.size()) + " bytes)\n";
    text_ += request.user_text() + "\n--- reply\n" + reply + "\n\n";
}

std::string AgentLog::text() const {
    std::lock_guard lock(mu_);
    return text_;
}

void AgentLog::write(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << text();
}

VLMRequest build_pose_request(const std::vector<CandidateImage>& candidates, const PromptPair& pair,
                              const AgentFixtures& fixtures) {
    VLMRequest r;
    r.kind = RequestKind::PoseSelection;
    r.system = fixtures.system;
    r.metadata = pair_metadata(pair);
    r.metadata["k"] = std::to_string(candidates.size());
    r.instruction = fill_template(fixtures.pose_instruction, r.metadata);
    for (std::size_t i = 0; i < candidates.size(); ++i)
        r.images.push_back({"Image " + std::to_string(i + 1), encode_png(candidates[i].preview)});
    return r;
}

std::size_t select_pose(const std::vector<CandidateImage>& candidates, const PromptPair& pair, VlmClient& vlm,
                        const AgentFixtures& fixtures, const AgentOptions& options, AgentLog* log) {
    if (candidates.empty()) throw CandidateCountZero("pose selection needs at least one candidate");
    if (candidates.size() == 1) return 0;
    const std::size_t k = candidates.size();
    return ask_with_retries(build_pose_request(candidates, pair, fixtures), vlm, options, log,
                            [k](const std::string& text) { return parse_pose_reply(text, k); })
        .first;
}

LayoutSuggestion::LayoutSuggestion(BoundingBox extracted, BoundingBox proposed, double change_threshold,
                                   std::string rationale, std::vector<std::pair<std::string, std::string>> attrs)
    : extracted_(extracted),
      proposed_(proposed),
      threshold_(change_threshold),
      needs_correction_(change_gate(extracted, proposed, change_threshold)),
      rationale_(std::move(rationale)),
      attrs_(std::move(attrs)) {
    extracted_.validate();
    proposed_.validate();
}

VLMRequest build_layout_request(const CandidateImage& selected, const PoseKeypoints& points, const BoundingBox& b_h,
                                const BoundingBox& b_o, const PromptPair& pair, const AgentFixtures& fixtures) {
    if (fixtures.exemplars.size() != 3) throw InvalidConfig("the layout agent needs exactly three exemplars");
    VLMRequest r;
    r.kind = RequestKind::Layout;
    r.system = fixtures.system;
    r.metadata = pair_metadata(pair);
    r.metadata["b_h"] = to_string(b_h);
    r.metadata["b_o"] = to_string(b_o);
    r.metadata["keypoints"] = serialize_keypoints(points);
    r.instruction = fill_template(fixtures.layout_instruction, r.metadata);
    r.exemplars = fixtures.exemplars;
    r.images.push_back({"Selected image", encode_png(selected.preview)});
    return r;
}

LayoutSuggestion suggest_layout(const CandidateImage& selected, const PoseKeypoints& points, const BoundingBox& b_h,
                                const BoundingBox& b_o, const PromptPair& pair, VlmClient& vlm,
                                const AgentFixtures& fixtures, const AgentOptions& options, AgentLog* log) {
    b_h.validate();
    b_o.validate();
    const int w = selected.preview.width, h = selected.preview.height;
    auto [box, text] = ask_with_retries(build_layout_request(selected, points, b_h, b_o, pair, fixtures), vlm, options,
                                        log, [w, h](const std::string& t) { return parse_box_reply(t, w, h); });
    return LayoutSuggestion(b_o, box, options.change_threshold, text, parse_visual_attributes(text));
}

}  // namespace record
