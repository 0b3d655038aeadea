#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace record {

/// Gerund formation for the verb slot. A small rule table (silent-e drop,
/// -ie -> -ying, consonant doubling for one-syllable CVC stems) plus an
/// override map for irregular cases.
class GerundRules {
public:
    GerundRules();
    explicit GerundRules(std::map<std::string, std::string> overrides);

    /// "carry" -> "carrying", "ride" -> "riding", "run" -> "running".
    std::string gerund(std::string_view base) const;

    /// Inverse of gerund(): nullopt when `word` is not a gerund of any stem.
    std::optional<std::string> base_of(std::string_view word) const;

    /// Applies gerund() to the first word of a multi-word verb ("lie on").
    std::string verb_gerund(std::string_view verb) const;

    const std::map<std::string, std::string>& overrides() const noexcept { return overrides_; }

private:
    std::map<std::string, std::string> overrides_;
};

struct HOITriplet {
    std::string subject;
    std::string verb;    // base form, may carry a particle ("point at")
    std::string object;  // empty only for the degenerate intransitive case
    std::string subject_article = "a";
    std::string object_article = "a";

    friend bool operator==(const HOITriplet&, const HOITriplet&) = default;
};

/// Builds a triplet with normalized fields and articles. Throws
/// UnparsablePrompt when a field is empty or the verb repeats object words.
/// `allow_empty_object` permits the intransitive identity case.
HOITriplet make_triplet(std::string_view subject, std::string_view verb, std::string_view object,
                        const GerundRules& rules = GerundRules{}, bool allow_empty_object = false);

/// Accepts "subject|verb|object" or "a(n) X is V-ing a(n) Y".
HOITriplet parse_triplet(std::string_view text, const GerundRules& rules = GerundRules{});

using Tokenizer = std::function<std::vector<std::string>(std::string_view)>;

/// Lowercases, splits on whitespace and strips surrounding punctuation.
std::vector<std::string> word_tokenize(std::string_view text);

/// Alignment from full-prompt token index to intransitive token index.
class TokenAlignment {
public:
    TokenAlignment() = default;
    explicit TokenAlignment(std::size_t full_size) : map_(full_size) {}

    std::size_t full_size() const noexcept { return map_.size(); }
    bool contains(std::size_t full_index) const noexcept {
        return full_index < map_.size() && map_[full_index].has_value();
    }
    std::size_t at(std::size_t full_index) const;
    void set(std::size_t full_index, std::size_t intrans_index) { map_.at(full_index) = intrans_index; }
    std::size_t domain_size() const noexcept;
    bool empty() const noexcept { return domain_size() == 0; }

    /// Pairs (full, intrans) in increasing full order.
    std::vector<std::pair<std::size_t, std::size_t>> pairs() const;

    friend bool operator==(const TokenAlignment&, const TokenAlignment&) = default;

private:
    std::vector<std::optional<std::size_t>> map_;
};

/// Greedy subsequence alignment of `intrans` into `full`. Throws
/// TokenizationMismatch when `intrans` is not a subsequence.
TokenAlignment align_tokens(const std::vector<std::string>& full, const std::vector<std::string>& intrans);

struct PromptPair {
    HOITriplet triplet;
    std::string full_prompt;
    std::string intransitive_prompt;
    std::vector<std::string> full_tokens;
    std::vector<std::string> intrans_tokens;
    TokenAlignment alignment;
    std::size_t verb_index = 0;
    std::optional<std::size_t> object_index;  // head noun of the object phrase
};

/// Renders y and ỹ for a triplet and aligns their token streams.
PromptPair render_prompts(const HOITriplet& triplet, const Tokenizer& tokenizer = word_tokenize,
                          const GerundRules& rules = GerundRules{});

/// Throws TokenizationMismatch if any PromptPair invariant is violated.
void check_prompt_pair(const PromptPair& pair);

/// "a person is {verb-gerund}", the verb-only phrase used for scoring.
std::string verb_phrase(const HOITriplet& triplet, const GerundRules& rules = GerundRules{});

/// Reads `subject|verb|object` records (one per line, `#` comments, blank
/// lines skipped). Free-form lines are returned verbatim for parse_triplet.
std::vector<std::string> read_prompt_lines(std::string_view content);

}  // namespace record
