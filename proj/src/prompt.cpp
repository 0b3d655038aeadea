#include "record/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "record/error.hpp"

namespace record {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_ws(std::string_view s) {
    std::vector<std::string> out;
    std::istringstream is{std::string(s)};
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

std::string join(const std::vector<std::string>& words, std::size_t from, std::size_t to) {
    std::string out;
    for (std::size_t i = from; i < to; ++i) {
        if (!out.empty()) out.push_back(' ');
        out += words[i];
    }
    return out;
}

std::string normalize(std::string_view s) {
    const auto words = split_ws(lower(s));
    return join(words, 0, words.size());
}

bool is_vowel(char c) { return c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u'; }

// 'y' counts as a vowel except in first position.
bool is_vowel_at(std::string_view w, std::size_t i) { return is_vowel(w[i]) || (w[i] == 'y' && i > 0); }

int vowel_groups(std::string_view w) {
    int groups = 0;
    bool prev = false;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const bool v = is_vowel_at(w, i);
        if (v && !prev) ++groups;
        prev = v;
    }
    return groups;
}

bool has_vowel(std::string_view w) {
    for (std::size_t i = 0; i < w.size(); ++i)
        if (is_vowel_at(w, i)) return true;
    return false;
}

bool is_article(std::string_view w) { return w == "a" || w == "an" || w == "the"; }

std::string article_for(std::string_view word) { return !word.empty() && is_vowel(word[0]) ? "an" : "a"; }

}  // namespace

// --- GerundRules --------------------------------------------------------

GerundRules::GerundRules() : GerundRules(std::map<std::string, std::string>{{"picnic", "picnicking"}}) {}

GerundRules::GerundRules(std::map<std::string, std::string> overrides) : overrides_(std::move(overrides)) {}

std::string GerundRules::gerund(std::string_view base_in) const {
    const std::string base = lower(base_in);
    if (auto it = overrides_.find(base); it != overrides_.end()) return it->second;
    const std::size_t n = base.size();
    if (n >= 2 && base.ends_with("ie")) return base.substr(0, n - 2) + "ying";
    if (base.ends_with("ee") || base.ends_with("oe") || base.ends_with("ye")) return base + "ing";
    if (n > 2 && base.back() == 'e' && !is_vowel(base[n - 2])) return base.substr(0, n - 1) + "ing";
    if (n >= 3 && vowel_groups(base) == 1) {
        const char last = base[n - 1];
        const bool cvc = !is_vowel_at(base, n - 1) && is_vowel_at(base, n - 2) && !is_vowel_at(base, n - 3);
        if (cvc && last != 'w' && last != 'x' && last != 'y') return base + last + "ing";
    }
    return base + "ing";
}

std::optional<std::string> GerundRules::base_of(std::string_view word_in) const {
    const std::string word = lower(word_in);
    for (const auto& [b, g] : overrides_)
        if (g == word) return b;
    if (word.size() < 5 || !word.ends_with("ing")) return std::nullopt;
    const std::string stem = word.substr(0, word.size() - 3);
    if (!has_vowel(stem)) return std::nullopt;  // "sing", "bring"

    std::vector<std::string> candidates;
    const std::size_t n = stem.size();
    const bool doubled = n >= 2 && stem[n - 1] == stem[n - 2] && !is_vowel(stem[n - 1]);
    const bool keeps_double = doubled && std::string_view("slfz").find(stem[n - 1]) != std::string_view::npos;
    if (n == 2 && stem[1] == 'y') candidates.push_back(stem.substr(0, 1) + "ie");
    if (doubled && !keeps_double) candidates.push_back(stem.substr(0, n - 1));
    candidates.push_back(stem);
    if (doubled && keeps_double) candidates.push_back(stem.substr(0, n - 1));
    candidates.push_back(stem + "e");
    for (const auto& c : candidates)
        if (gerund(c) == word) return c;
    return std::nullopt;
}

std::string GerundRules::verb_gerund(std::string_view verb) const {
    auto words = split_ws(lower(verb));
    if (words.empty()) return {};
    words[0] = gerund(words[0]);
    return join(words, 0, words.size());
}

// --- triplets -----------------------------------------------------------

HOITriplet make_triplet(std::string_view subject, std::string_view verb, std::string_view object,
                        const GerundRules& rules, bool allow_empty_object) {
    HOITriplet t;
    auto subj_words = split_ws(lower(subject));
    auto obj_words = split_ws(lower(object));
    auto verb_words = split_ws(lower(verb));
    if (!subj_words.empty() && is_article(subj_words.front())) subj_words.erase(subj_words.begin());
    if (!obj_words.empty() && is_article(obj_words.front())) obj_words.erase(obj_words.begin());
    if (subj_words.empty()) throw UnparsablePrompt("empty subject");
    if (verb_words.empty()) throw UnparsablePrompt("empty verb");
    if (obj_words.empty() && !allow_empty_object) throw UnparsablePrompt("empty object");

    // Accept a gerund in the verb slot and store its base form.
    if (auto base = rules.base_of(verb_words.front())) verb_words.front() = *base;

    for (const auto& w : verb_words)
        if (std::find(obj_words.begin(), obj_words.end(), w) != obj_words.end())
            throw UnparsablePrompt("verb '" + join(verb_words, 0, verb_words.size()) + "' contains object word '" +
                                   w + "'");

    t.subject = join(subj_words, 0, subj_words.size());
    t.verb = join(verb_words, 0, verb_words.size());
    t.object = join(obj_words, 0, obj_words.size());
    t.subject_article = article_for(t.subject);
    t.object_article = t.object.empty() ? "" : article_for(t.object);
    return t;
}

HOITriplet parse_triplet(std::string_view text_in, const GerundRules& rules) {
    const std::string text = trim(text_in);
    if (text.empty()) throw UnparsablePrompt("empty prompt");

    if (text.find('|') != std::string::npos) {
        std::vector<std::string> fields;
        std::string field;
        std::istringstream is(text);
        while (std::getline(is, field, '|')) fields.push_back(trim(field));
        if (fields.size() != 3) throw UnparsablePrompt("structured prompt needs exactly 3 fields: '" + text + "'");
        return make_triplet(fields[0], fields[1], fields[2], rules);
    }

    std::string clean = lower(text);
    while (!clean.empty() && (clean.back() == '.' || clean.back() == '!')) clean.pop_back();
    const auto words = split_ws(clean);

    // "a(n) X is V-ing [particles] a(n) Y"
    if (words.size() < 5 || !is_article(words[0])) throw UnparsablePrompt("no match for '" + text + "'");
    std::size_t copula = 0;
    for (std::size_t i = 2; i < words.size(); ++i)
        if ((words[i] == "is" || words[i] == "are") && i + 1 < words.size() && rules.base_of(words[i + 1])) {
            copula = i;
            break;
        }
    if (copula == 0) throw UnparsablePrompt("no 'is V-ing' in '" + text + "'");
    const std::size_t verb_at = copula + 1;
    std::size_t object_article = 0;
    for (std::size_t i = words.size() - 1; i > verb_at; --i)
        if (is_article(words[i])) {
            object_article = i;
            break;
        }
    if (object_article == 0 || object_article + 1 >= words.size())
        throw UnparsablePrompt("no object phrase in '" + text + "'");

    std::string verb = *rules.base_of(words[verb_at]);
    if (object_article > verb_at + 1) verb += " " + join(words, verb_at + 1, object_article);
    return make_triplet(join(words, 1, copula), verb, join(words, object_article + 1, words.size()), rules);
}

// --- tokens and alignment ----------------------------------------------

std::vector<std::string> word_tokenize(std::string_view text) {
    std::vector<std::string> out;
    for (auto& w : split_ws(lower(text))) {
        std::size_t b = 0, e = w.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(w[b]))) ++b;
        while (e > b && std::ispunct(static_cast<unsigned char>(w[e - 1]))) --e;
        if (e > b) out.push_back(w.substr(b, e - b));
    }
    return out;
}

std::size_t TokenAlignment::at(std::size_t full_index) const {
    if (!contains(full_index)) throw TokenizationMismatch("token " + std::to_string(full_index) + " is not aligned");
    return *map_[full_index];
}

std::size_t TokenAlignment::domain_size() const noexcept {
    return static_cast<std::size_t>(std::count_if(map_.begin(), map_.end(), [](const auto& v) { return v.has_value(); }));
}

std::vector<std::pair<std::size_t, std::size_t>> TokenAlignment::pairs() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 0; i < map_.size(); ++i)
        if (map_[i]) out.emplace_back(i, *map_[i]);
    return out;
}

TokenAlignment align_tokens(const std::vector<std::string>& full, const std::vector<std::string>& intrans) {
    TokenAlignment alignment(full.size());
    std::size_t j = 0;
    for (std::size_t i = 0; i < full.size() && j < intrans.size(); ++i) {
        if (full[i] == intrans[j]) alignment.set(i, j++);
    }
    if (j != intrans.size())
        throw TokenizationMismatch("intransitive tokens are not a subsequence of the full prompt tokens");
    return alignment;
}

PromptPair render_prompts(const HOITriplet& triplet, const Tokenizer& tokenizer, const GerundRules& rules) {
    if (triplet.subject.empty() || triplet.verb.empty()) throw UnparsablePrompt("triplet needs subject and verb");
    PromptPair pair;
    pair.triplet = triplet;
    const std::string subject_part = triplet.subject_article + " " + triplet.subject + " is";
    pair.intransitive_prompt = normalize(subject_part + " " + rules.verb_gerund(triplet.verb));
    pair.full_prompt = triplet.object.empty()
                           ? pair.intransitive_prompt
                           : pair.intransitive_prompt + " " + triplet.object_article + " " + normalize(triplet.object);

    pair.full_tokens = tokenizer(pair.full_prompt);
    pair.intrans_tokens = tokenizer(pair.intransitive_prompt);
    pair.alignment = align_tokens(pair.full_tokens, pair.intrans_tokens);
    pair.verb_index = tokenizer(normalize(subject_part)).size();
    if (!triplet.object.empty()) pair.object_index = pair.full_tokens.size() - 1;
    check_prompt_pair(pair);
    return pair;
}

void check_prompt_pair(const PromptPair& pair) {
    const auto& al = pair.alignment;
    if (al.full_size() != pair.full_tokens.size()) throw TokenizationMismatch("alignment size mismatch");
    if (al.domain_size() != pair.intrans_tokens.size())
        throw TokenizationMismatch("every intransitive token must be aligned exactly once");
    std::optional<std::size_t> prev;
    for (const auto& [f, i] : al.pairs()) {
        if (i >= pair.intrans_tokens.size()) throw TokenizationMismatch("alignment target out of range");
        if (prev && i <= *prev) throw TokenizationMismatch("alignment is not monotone");
        if (pair.full_tokens[f] != pair.intrans_tokens[i]) throw TokenizationMismatch("aligned tokens differ");
        prev = i;
    }
    if (!al.contains(pair.verb_index)) throw TokenizationMismatch("verb token is not in the intransitive prompt");
    if (pair.object_index && al.contains(*pair.object_index))
        throw TokenizationMismatch("object token must not be aligned");
}

std::string verb_phrase(const HOITriplet& triplet, const GerundRules& rules) {
    if (trim(triplet.verb).empty()) throw PreconditionViolation("triplet has no verb");
    return "a person is " + rules.verb_gerund(triplet.verb);
}

std::vector<std::string> read_prompt_lines(std::string_view content) {
    std::vector<std::string> out;
    std::istringstream is{std::string(content)};
    for (std::string line; std::getline(is, line);) {
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (!line.empty()) out.push_back(line);
    }
    return out;
}

}  // namespace record
