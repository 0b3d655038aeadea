#include <gtest/gtest.h>

#include <random>

#include "record/error.hpp"
#include "record/prompt.hpp"

using namespace record;

TEST(Gerund, RuleTable) {
    const GerundRules g;
    EXPECT_EQ(g.gerund("carry"), "carrying");
    EXPECT_EQ(g.gerund("ride"), "riding");
    EXPECT_EQ(g.gerund("run"), "running");
    EXPECT_EQ(g.gerund("hit"), "hitting");
    EXPECT_EQ(g.gerund("lie"), "lying");
    EXPECT_EQ(g.gerund("see"), "seeing");
    EXPECT_EQ(g.gerund("open"), "opening");
    EXPECT_EQ(g.gerund("hold"), "holding");
    EXPECT_EQ(g.gerund("ski"), "skiing");
    EXPECT_EQ(g.gerund("picnic"), "picnicking");
    EXPECT_EQ(g.verb_gerund("lie on"), "lying on");
}

TEST(Gerund, OverridesReplaceRules) {
    const GerundRules g(std::map<std::string, std::string>{{"visit", "visitting"}});
    EXPECT_EQ(g.gerund("visit"), "visitting");
    EXPECT_EQ(g.gerund("carry"), "carrying");
}

TEST(Gerund, BaseOfInvertsGerund) {
    const GerundRules g;
    for (const char* v : {"carry", "ride", "run", "lie", "hold", "kick", "throw", "sit", "feed", "hug", "tie"}) {
        const auto back = g.base_of(g.gerund(v));
        ASSERT_TRUE(back.has_value()) << v;
        EXPECT_EQ(g.gerund(*back), g.gerund(v));
    }
    EXPECT_FALSE(g.base_of("table").has_value());
}

TEST(Triplet, ParsesStructuredAndFreeForm) {
    const auto a = parse_triplet("man|carry|bicycle");
    const auto b = parse_triplet("a man is carrying a bicycle");
    EXPECT_EQ(a, b);
    EXPECT_EQ(a.subject, "man");
    EXPECT_EQ(a.verb, "carry");
    EXPECT_EQ(a.object, "bicycle");
    const auto c = parse_triplet("an old woman is lying on a bench");
    EXPECT_EQ(c.subject, "old woman");
    EXPECT_EQ(c.subject_article, "an");
    EXPECT_EQ(c.verb, "lie on");
}

TEST(Triplet, Rejections) {
    EXPECT_THROW(parse_triplet(""), UnparsablePrompt);
    EXPECT_THROW(parse_triplet("man|carry"), UnparsablePrompt);
    EXPECT_THROW(parse_triplet("man||bicycle"), UnparsablePrompt);
    EXPECT_THROW(parse_triplet("the sky is blue"), UnparsablePrompt);
    EXPECT_THROW(parse_triplet("a kid is tying a tie"), UnparsablePrompt);
    EXPECT_NO_THROW(make_triplet("man", "stand", "", GerundRules{}, true));
}

TEST(PromptPair, RendersBothStreams) {
    const auto p = render_prompts(parse_triplet("man|ride|horse"));
    EXPECT_EQ(p.full_prompt, "a man is riding a horse");
    EXPECT_EQ(p.intransitive_prompt, "a man is riding");
    EXPECT_EQ(p.verb_index, 3u);
    ASSERT_TRUE(p.object_index.has_value());
    EXPECT_EQ(*p.object_index, 5u);
    EXPECT_EQ(p.full_tokens[*p.object_index], "horse");
    EXPECT_EQ(p.alignment.domain_size(), p.intrans_tokens.size());
    EXPECT_NO_THROW(check_prompt_pair(p));
}

TEST(PromptPair, MultiWordParts) {
    const auto p = render_prompts(parse_triplet("an old woman|lie on|park bench"));
    EXPECT_EQ(p.full_prompt, "an old woman is lying on a park bench");
    EXPECT_EQ(p.intransitive_prompt, "an old woman is lying on");
    EXPECT_EQ(p.full_tokens[p.verb_index], "lying");
    EXPECT_EQ(p.full_tokens[*p.object_index], "bench");
    EXPECT_FALSE(p.alignment.contains(*p.object_index));
}

TEST(PromptPair, IntransitiveIdentity) {
    const auto t = make_triplet("man", "stand", "", GerundRules{}, true);
    const auto p = render_prompts(t);
    EXPECT_EQ(p.full_prompt, p.intransitive_prompt);
    EXPECT_FALSE(p.object_index.has_value());
    EXPECT_EQ(p.alignment.domain_size(), p.full_tokens.size());
}

TEST(Alignment, SubsequenceAndMismatch) {
    const auto al = align_tokens({"a", "man", "is", "riding", "a", "horse"}, {"a", "man", "is", "riding"});
    EXPECT_EQ(al.domain_size(), 4u);
    EXPECT_EQ(al.at(3), 3u);
    EXPECT_FALSE(al.contains(5));
    EXPECT_THROW(al.at(5), TokenizationMismatch);
    EXPECT_THROW(align_tokens({"a", "man"}, {"a", "woman"}), TokenizationMismatch);
}

TEST(Alignment, RandomSubsequencesAreMonotoneAndExact) {
    std::mt19937_64 rng(3);
    const std::vector<std::string> vocab{"a", "b", "c", "d"};
    for (int trial = 0; trial < 300; ++trial) {
        std::vector<std::string> full, sub;
        const int n = 1 + static_cast<int>(rng() % 12);
        for (int i = 0; i < n; ++i) {
            full.push_back(vocab[rng() % vocab.size()]);
            if (rng() % 2) sub.push_back(full.back());
        }
        const auto al = align_tokens(full, sub);
        ASSERT_EQ(al.domain_size(), sub.size());
        std::optional<std::size_t> prev;
        for (auto [f, i] : al.pairs()) {
            EXPECT_EQ(full[f], sub[i]);
            if (prev) EXPECT_GT(i, *prev);
            prev = i;
        }
    }
}

TEST(Prompt, VerbPhraseAndTokenizer) {
    EXPECT_EQ(verb_phrase(parse_triplet("woman|hold|umbrella")), "a person is holding");
    EXPECT_EQ(word_tokenize("  A Man, is riding!  "), (std::vector<std::string>{"a", "man", "is", "riding"}));
    HOITriplet t;
    EXPECT_THROW(verb_phrase(t), PreconditionViolation);
}

TEST(Prompt, ReadPromptLinesSkipsCommentsAndBlanks) {
    const auto lines = read_prompt_lines("# header\nman|ride|horse\n\n  a boy is kicking a ball  \n#x\n");
    EXPECT_EQ(lines, (std::vector<std::string>{"man|ride|horse", "a boy is kicking a ball"}));
}
