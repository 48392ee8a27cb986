#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "topicforge/corpus.hpp"

using namespace topicforge;

TEST(Tokenize, SplitsLowercasesAndFilters) {
    EXPECT_EQ(tokenize("The Moon-landing!", 2, {"the"}), (std::vector<std::string>{"moon", "landing"}));
    EXPECT_TRUE(tokenize("", 1, {}).empty());
    EXPECT_EQ(tokenize("a a a", 1, {}), (std::vector<std::string>{"a", "a", "a"}));
}

TEST(Tokenize, MinLengthCountsCodePointsNotBytes) {
    // "él" is two code points but three bytes.
    EXPECT_EQ(tokenize("Él ÉTÉ", 2, {}), (std::vector<std::string>{"él", "été"}));
    EXPECT_TRUE(tokenize("él", 3, {}).empty());
}

TEST(Tokenize, UnicodeBoundaries) {
    EXPECT_EQ(tokenize("Ünïcode—dash…ellipsis", 1, {}), (std::vector<std::string>{"ünïcode", "dash", "ellipsis"}));
    EXPECT_EQ(tokenize("ΜΕΓΑΛΟ Москва", 1, {}), (std::vector<std::string>{"μεγαλο", "москва"}));
    EXPECT_EQ(tokenize("x\xff" "y", 1, {}), (std::vector<std::string>{"x", "y"}));
}

TEST(IngestCorpus, HandCountedVocabulary) {
    const auto corpus = ingest_corpus({"a b", "b c"}, 1, {});
    const auto& vocab = corpus.vocabulary();
    EXPECT_EQ(vocab.size(), 3u);
    EXPECT_EQ(vocab.at("b").corpus_frequency, 2u);
    EXPECT_EQ(vocab.at("b").document_frequency, 2u);
    EXPECT_EQ(vocab.at("a").corpus_frequency, 1u);
    EXPECT_EQ(vocab.at("a").token_id, 0u);
    EXPECT_EQ(vocab.at("c").token_id, 2u);
    EXPECT_EQ(corpus.token_counts_per_doc(), (std::vector<std::size_t>{2, 2}));
}

TEST(IngestCorpus, Errors) {
    try {
        ingest_corpus({}, 1, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyCorpus);
    }
    try {
        ingest_corpus({"fine", "  \t"}, 1, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyDocument);
        EXPECT_NE(std::string(e.what()).find("document 1"), std::string::npos);
    }
    try {
        ingest_corpus({""}, 1, {});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyDocument);
    }
}

TEST(IngestCorpus, SmallCorpusWarning) {
    const std::vector<std::string> texts(9'999, "hello");
    const auto corpus = ingest_corpus(texts, 1, {});
    EXPECT_EQ(corpus.vocabulary().size(), 1u);
    ASSERT_EQ(corpus.warnings().size(), 1u);
    EXPECT_NE(corpus.warnings()[0].find("small corpus"), std::string::npos);

    const std::vector<std::string> enough(10'000, "hello");
    EXPECT_TRUE(ingest_corpus(enough, 1, {}).warnings().empty());
}

TEST(IngestCorpus, InvariantsOnGeneratedText) {
    std::vector<std::string> texts;
    for (int i = 0; i < 200; ++i) {
        std::string t;
        for (int j = 0; j <= i % 17; ++j) t += "w" + std::to_string((i * 7 + j * 13) % 41) + (j % 3 ? ", " : " ");
        texts.push_back(t);
    }
    const auto corpus = ingest_corpus(texts, IngestOptions{2, {"w1"}});
    std::size_t frequency_sum = 0;
    for (const auto& w : corpus.vocabulary().words()) {
        const auto& e = corpus.vocabulary().at(w);
        EXPECT_GE(e.corpus_frequency, e.document_frequency);
        EXPECT_GE(e.document_frequency, 1u);
        frequency_sum += e.corpus_frequency;
    }
    const auto& counts = corpus.token_counts_per_doc();
    EXPECT_EQ(frequency_sum, std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
    for (const auto& doc : corpus.documents()) {
        EXPECT_EQ(tokenize(doc.text, 2, {"w1"}), doc.tokens);
        for (const auto& token : doc.tokens) EXPECT_TRUE(corpus.vocabulary().contains(token));
    }
    for (std::size_t i = 0; i < corpus.size(); ++i) EXPECT_EQ(corpus.document(i).id, i);
    EXPECT_TRUE(corpus == ingest_corpus(texts, IngestOptions{2, {"w1"}}));
}

TEST(IngestCorpus, DuplicatesStayDistinct) {
    const auto corpus = ingest_corpus({"same text", "same text"}, 1, {});
    EXPECT_EQ(corpus.size(), 2u);
    EXPECT_EQ(corpus.vocabulary().at("same").document_frequency, 2u);
}

TEST(CorpusInput, Formats) {
    EXPECT_EQ(parse_corpus_texts(R"(["one", "two"])"), (std::vector<std::string>{"one", "two"}));
    EXPECT_EQ(parse_corpus_texts("{\"text\": \"a\"}\n\n{\"text\": \"b\", \"id\": 3}\n"),
              (std::vector<std::string>{"a", "b"}));
    EXPECT_EQ(parse_corpus_texts("first line\r\n\nsecond line\n"),
              (std::vector<std::string>{"first line", "second line"}));
    EXPECT_THROW(parse_corpus_texts("{\"body\": \"x\"}"), Error);
}

TEST(Stopwords, ShippedListLoads) {
    const auto words = load_stopwords(std::string(TOPICFORGE_DATA_DIR) + "/stopwords_en.txt");
    EXPECT_TRUE(words.contains("the"));
    EXPECT_TRUE(words.contains("and"));
    EXPECT_FALSE(words.contains("moon"));
}
