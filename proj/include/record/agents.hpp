#pragma once

#include <cstddef>
#include <filesystem>
#include <mutex>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "record/boxes.hpp"
#include "record/coarse_generator.hpp"
#include "record/keypoints.hpp"
#include "record/prompt.hpp"
#include "record/vlm.hpp"

namespace record {

// ---- reply parsers ------------------------------------------------------------

/// 0-based index from a pose-selection reply. Accepts "Image 3", "picture #2",
/// a bare number, or a number word / ordinal ("two", "second") within 1..k.
/// Throws UnparsableAgentReply otherwise, including for out-of-range numbers.
std::size_t parse_pose_reply(std::string_view reply, std::size_t k);

/// First "[a, b, c, d]" group of decimals. Values above 1 are read as pixel
/// coordinates of an image_width x image_height image. Throws
/// UnparsableAgentReply when no group exists and BoxOutOfRange when the
/// resulting box is not a valid normalized box.
BoundingBox parse_box_reply(std::string_view reply, int image_width, int image_height);

/// "key: value" lines under a "Visual attributes" heading (keys lowercased).
std::vector<std::pair<std::string, std::string>> parse_visual_attributes(std::string_view reply);

// ---- fixtures -----------------------------------------------------------------

/// Instruction templates and the three few-shot exemplars, loaded from
/// `<dir>/prompts/{system,pose,layout}_v1.txt` and `<dir>/fewshot/{1,2,3}.txt`.
struct AgentFixtures {
    std::string system;
    std::string pose_instruction;
    std::string layout_instruction;
    std::vector<std::string> exemplars;

    static AgentFixtures load(const std::filesystem::path& dir);
};

/// Append-only transcript of every agent exchange in a run.
class AgentLog {
public:
    void record(const VLMRequest& request, const std::string& reply, int attempt);
    std::string text() const;
    void write(const std::filesystem::path& path) const;

private:
    mutable std::mutex mu_;
    std::string text_;
};

struct AgentOptions {
    int retries = 2;  // re-asks after the first unparsable reply
    double change_threshold = 0.8;
};

// ---- agents -------------------------------------------------------------------

/// Pose Selection Agent: asks the VLM which preview best matches y and
/// returns a 0-based candidate index. k = 1 returns 0 without a call.
std::size_t select_pose(const std::vector<CandidateImage>& candidates, const PromptPair& pair, VlmClient& vlm,
                        const AgentFixtures& fixtures, const AgentOptions& options, AgentLog* log = nullptr);

class LayoutSuggestion {
public:
    /// Computes needs_correction with the change gate; the invariant holds
    /// by construction.
    LayoutSuggestion(BoundingBox extracted, BoundingBox proposed, double change_threshold, std::string rationale,
                     std::vector<std::pair<std::string, std::string>> visual_attributes);

    const BoundingBox& extracted_box() const noexcept { return extracted_; }
    const BoundingBox& proposed_box() const noexcept { return proposed_; }
    bool needs_correction() const noexcept { return needs_correction_; }
    double change_threshold() const noexcept { return threshold_; }
    const std::string& rationale() const noexcept { return rationale_; }
    const std::vector<std::pair<std::string, std::string>>& visual_attributes() const noexcept { return attrs_; }

private:
    BoundingBox extracted_;
    BoundingBox proposed_;
    double threshold_;
    bool needs_correction_;
    std::string rationale_;
    std::vector<std::pair<std::string, std::string>> attrs_;
};

/// Layout Agent: sends the selected image, keypoints P, b_h and b_o with the
/// guideline block and three exemplars; scrapes b̂_o from the reply.
LayoutSuggestion suggest_layout(const CandidateImage& selected, const PoseKeypoints& points, const BoundingBox& b_h,
                                const BoundingBox& b_o, const PromptPair& pair, VlmClient& vlm,
                                const AgentFixtures& fixtures, const AgentOptions& options, AgentLog* log = nullptr);

/// The request suggest_layout sends on its first attempt (for mock tables and audits).
VLMRequest build_layout_request(const CandidateImage& selected, const PoseKeypoints& points, const BoundingBox& b_h,
                                const BoundingBox& b_o, const PromptPair& pair, const AgentFixtures& fixtures);
VLMRequest build_pose_request(const std::vector<CandidateImage>& candidates, const PromptPair& pair,
                              const AgentFixtures& fixtures);

}  // namespace record
