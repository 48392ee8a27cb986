#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "topicforge/error.hpp"

namespace topicforge {

using DocId = std::size_t;
using TokenId = std::uint32_t;
using StopwordSet = std::unordered_set<std::string>;

/// Topic quality degrades on small corpora; below this size ingestion records
/// a warning.
inline constexpr std::size_t kRecommendedMinDocuments = 10'000;
inline constexpr int kDefaultMinTokenLength = 3;

namespace utf8 {

/// Decodes one code point starting at `pos`, advancing it. Malformed
/// sequences decode to U+FFFD and consume a single byte.
inline char32_t decode(std::string_view s, std::size_t& pos) {
    const auto byte = [&](std::size_t i) { return static_cast<unsigned char>(s[i]); };
    const unsigned char c = byte(pos);
    if (c < 0x80) {
        ++pos;
        return c;
    }
    int extra = 0;
    char32_t cp = 0;
    if ((c & 0xE0) == 0xC0) {
        extra = 1;
        cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
        extra = 2;
        cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
        extra = 3;
        cp = c & 0x07;
    } else {
        ++pos;
        return 0xFFFD;
    }
    for (int i = 1; i <= extra; ++i) {
        if (pos + i >= s.size() || (byte(pos + i) & 0xC0) != 0x80) {
            ++pos;
            return 0xFFFD;
        }
        cp = (cp << 6) | (byte(pos + i) & 0x3F);
    }
    pos += static_cast<std::size_t>(extra) + 1;
    return cp;
}

inline void append(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Letter/digit classification over the scripts a topic corpus is likely to
// contain. Punctuation, symbol and separator blocks are excluded explicitly;
// everything from Hiragana upward (CJK, Hangul, ...) counts as a letter.
inline bool is_alnum(char32_t cp) {
    if (cp < 0x80) {
        return (cp >= '0' && cp <= '9') || (cp >= 'a' && cp <= 'z') || (cp >= 'A' && cp <= 'Z');
    }
    if (cp >= 0xC0 && cp <= 0x24F) return cp != 0xD7 && cp != 0xF7;  // Latin-1 letters, Latin Extended A/B
    if (cp >= 0x250 && cp <= 0x2AF) return true;                      // IPA
    if (cp >= 0x370 && cp <= 0x3FF) return cp != 0x37E && cp != 0x387;  // Greek
    if (cp >= 0x400 && cp <= 0x52F) return cp < 0x482 || cp > 0x489;    // Cyrillic
    if (cp >= 0x530 && cp <= 0x58F) return cp < 0x559 || (cp > 0x55F && cp < 0x589);  // Armenian
    if (cp >= 0x5D0 && cp <= 0x5EA) return true;                        // Hebrew letters
    if (cp >= 0x620 && cp <= 0x669) return true;                        // Arabic letters, digits
    if (cp >= 0x671 && cp <= 0x6D3) return true;
    if (cp >= 0x900 && cp <= 0xDFF) return cp != 0x964 && cp != 0x965;  // Indic
    if (cp >= 0xE00 && cp <= 0xEFF) return true;                        // Thai, Lao
    if (cp >= 0x10A0 && cp <= 0x10FF) return true;                      // Georgian
    if (cp >= 0x1E00 && cp <= 0x1FFF) return true;                      // Latin/Greek extended
    if (cp >= 0x3040 && cp <= 0xD7FF) return true;                      // kana, CJK, Hangul
    if (cp >= 0xF900 && cp <= 0xFAFF) return true;
    if (cp >= 0xFF10 && cp <= 0xFF19) return true;  // fullwidth digits
    if (cp >= 0xFF21 && cp <= 0xFF3A) return true;
    if (cp >= 0xFF41 && cp <= 0xFF5A) return true;
    if (cp >= 0x20000 && cp <= 0x3FFFF) return true;
    return false;
}

inline char32_t to_lower(char32_t cp) {
    if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
    if (cp < 0x80) return cp;
    if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
    if (cp >= 0x100 && cp <= 0x137) return cp | 1;
    if (cp >= 0x139 && cp <= 0x148) return (cp & 1) ? cp + 1 : cp;
    if (cp >= 0x14A && cp <= 0x177) return cp | 1;
    if (cp == 0x178) return 0xFF;
    if (cp >= 0x179 && cp <= 0x17E) return (cp & 1) ? cp + 1 : cp;
    if (cp >= 0x391 && cp <= 0x3AB && cp != 0x3A2) return cp + 0x20;
    if (cp >= 0x410 && cp <= 0x42F) return cp + 0x20;
    if (cp >= 0x400 && cp <= 0x40F) return cp + 0x50;
    if (cp >= 0x460 && cp <= 0x481) return cp | 1;
    if (cp >= 0x48A && cp <= 0x4BF) return cp | 1;
    if (cp >= 0x531 && cp <= 0x556) return cp + 0x30;
    if (cp >= 0x10A0 && cp <= 0x10C5) return cp + 0x1C60;
    if (cp >= 0xFF21 && cp <= 0xFF3A) return cp + 0x20;
    return cp;
}

}  // namespace utf8

/// Lowercases, splits on every non-alphanumeric code point, then drops
/// tokens shorter than `min_token_len` code points and stopwords.
inline std::vector<std::string> tokenize(std::string_view text, int min_token_len,
                                         const StopwordSet& stopwords) {
    std::vector<std::string> tokens;
    std::string current;
    std::size_t current_len = 0;
    const auto flush = [&] {
        if (current_len > 0 && static_cast<int>(current_len) >= min_token_len &&
            !stopwords.contains(current)) {
            tokens.push_back(current);
        }
        current.clear();
        current_len = 0;
    };
    std::size_t pos = 0;
    while (pos < text.size()) {
        const char32_t cp = utf8::decode(text, pos);
        if (utf8::is_alnum(cp)) {
            utf8::append(current, utf8::to_lower(cp));
            ++current_len;
        } else {
            flush();
        }
    }
    flush();
    return tokens;
}

inline std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

struct Document {
    DocId id = 0;
    std::string text;
    std::vector<std::string> tokens;

    bool operator==(const Document&) const = default;
};

struct VocabEntry {
    TokenId token_id = 0;
    std::size_t corpus_frequency = 0;
    std::size_t document_frequency = 0;

    bool operator==(const VocabEntry&) const = default;
};

/// Token table with ids assigned densely in order of first occurrence.
class Vocabulary {
public:
    std::size_t size() const noexcept { return words_.size(); }
    bool contains(const std::string& word) const { return index_.contains(word); }

    const VocabEntry& at(const std::string& word) const {
        const auto it = index_.find(word);
        if (it == index_.end()) throw Error(ErrorCode::NotFound, "word not in vocabulary: " + word);
        return entries_[it->second];
    }
    const VocabEntry& at(TokenId id) const { return entries_.at(id); }
    const std::string& word(TokenId id) const { return words_.at(id); }
    const std::vector<std::string>& words() const noexcept { return words_; }

    std::size_t total_tokens() const noexcept {
        std::size_t total = 0;
        for (const auto& e : entries_) total += e.corpus_frequency;
        return total;
    }

    TokenId add_occurrence(const std::string& word) {
        const auto [it, inserted] = index_.try_emplace(word, static_cast<TokenId>(words_.size()));
        if (inserted) {
            words_.push_back(word);
            entries_.push_back(VocabEntry{it->second, 0, 0});
        }
        ++entries_[it->second].corpus_frequency;
        return it->second;
    }
    void add_document_occurrence(TokenId id) { ++entries_.at(id).document_frequency; }

    bool operator==(const Vocabulary& other) const {
        return words_ == other.words_ && entries_ == other.entries_;
    }

private:
    std::unordered_map<std::string, TokenId> index_;
    std::vector<std::string> words_;
    std::vector<VocabEntry> entries_;
};

struct IngestOptions {
    int min_token_len = kDefaultMinTokenLength;
    StopwordSet stopwords;
};

/// Immutable document table. Every other module refers to documents by their
/// dense id, which is the position in ingestion order.
class Corpus {
public:
    const std::vector<Document>& documents() const noexcept { return documents_; }
    const Document& document(DocId id) const { return documents_.at(id); }
    std::size_t size() const noexcept { return documents_.size(); }
    const Vocabulary& vocabulary() const noexcept { return vocabulary_; }
    const std::vector<std::size_t>& token_counts_per_doc() const noexcept { return token_counts_; }
    /// Token ids of document `id`, parallel to its `tokens`.
    const std::vector<TokenId>& token_ids(DocId id) const { return token_ids_.at(id); }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }
    const IngestOptions& options() const noexcept { return options_; }

    bool operator==(const Corpus& other) const {
        return documents_ == other.documents_ && vocabulary_ == other.vocabulary_ &&
               token_counts_ == other.token_counts_ && token_ids_ == other.token_ids_ &&
               warnings_ == other.warnings_;
    }

    friend Corpus ingest_corpus(const std::vector<std::string>& texts, const IngestOptions& options);

private:
    std::vector<Document> documents_;
    Vocabulary vocabulary_;
    std::vector<std::size_t> token_counts_;
    std::vector<std::vector<TokenId>> token_ids_;
    std::vector<std::string> warnings_;
    IngestOptions options_;
};

inline Corpus ingest_corpus(const std::vector<std::string>& texts, const IngestOptions& options) {
    if (texts.empty()) throw Error(ErrorCode::EmptyCorpus, "no input texts");
    if (options.min_token_len < 1) throw Error(ErrorCode::InvalidArgument, "min_token_len must be >= 1");
    for (std::size_t i = 0; i < texts.size(); ++i) {
        if (trim(texts[i]).empty()) {
            throw Error(ErrorCode::EmptyDocument, "document " + std::to_string(i) + " is empty");
        }
    }

    Corpus corpus;
    corpus.options_ = options;
    corpus.documents_.reserve(texts.size());
    corpus.token_counts_.reserve(texts.size());
    corpus.token_ids_.reserve(texts.size());
    std::vector<std::uint8_t> seen_in_doc;
    for (std::size_t i = 0; i < texts.size(); ++i) {
        Document doc{i, texts[i], tokenize(texts[i], options.min_token_len, options.stopwords)};
        std::vector<TokenId> ids;
        ids.reserve(doc.tokens.size());
        for (const auto& token : doc.tokens) ids.push_back(corpus.vocabulary_.add_occurrence(token));
        seen_in_doc.resize(corpus.vocabulary_.size(), 0);
        for (const TokenId id : ids) {
            if (!seen_in_doc[id]) {
                seen_in_doc[id] = 1;
                corpus.vocabulary_.add_document_occurrence(id);
            }
        }
        for (const TokenId id : ids) seen_in_doc[id] = 0;
        corpus.token_counts_.push_back(doc.tokens.size());
        corpus.token_ids_.push_back(std::move(ids));
        corpus.documents_.push_back(std::move(doc));
    }
    if (texts.size() < kRecommendedMinDocuments) {
        corpus.warnings_.push_back("small corpus: " + std::to_string(texts.size()) +
                                   " documents; over " + std::to_string(kRecommendedMinDocuments) +
                                   " are recommended for reliable topics and retrieval");
    }
    return corpus;
}

inline Corpus ingest_corpus(const std::vector<std::string>& texts, int min_token_len,
                            const StopwordSet& stopwords) {
    return ingest_corpus(texts, IngestOptions{min_token_len, stopwords});
}

/// One stopword per line; blank lines and lines starting with '#' ignored.
inline StopwordSet load_stopwords(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::NotFound, "cannot open stopword file " + path);
    StopwordSet words;
    std::string line;
    while (std::getline(in, line)) {
        const auto word = trim(line);
        if (word.empty() || word.front() == '#') continue;
        for (auto& token : tokenize(word, 1, {})) words.insert(std::move(token));
    }
    return words;
}

/// Reads corpus texts from a JSON array of strings, JSON lines with a "text"
/// field, or newline-delimited plain text (blank lines skipped). The format
/// is sniffed from the first non-blank character.
inline std::vector<std::string> parse_corpus_texts(const std::string& content) {
    const auto body = trim(content);
    std::vector<std::string> texts;
    if (body.empty()) return texts;
    if (body.front() == '[') {
        const auto array = nlohmann::json::parse(body);
        for (const auto& item : array) {
            if (!item.is_string()) throw Error(ErrorCode::InvalidArgument, "corpus array must hold strings");
            texts.push_back(item.get<std::string>());
        }
        return texts;
    }
    std::istringstream lines{std::string(body)};
    std::string line;
    const bool json_lines = body.front() == '{';
    std::size_t line_no = 0;
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (json_lines) {
            const auto record = nlohmann::json::parse(line);
            if (!record.contains("text") || !record["text"].is_string()) {
                throw Error(ErrorCode::InvalidArgument,
                            "line " + std::to_string(line_no) + ": missing string field \"text\"");
            }
            texts.push_back(record["text"].get<std::string>());
        } else {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            texts.push_back(line);
        }
    }
    return texts;
}

inline std::vector<std::string> load_corpus_texts(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::NotFound, "cannot open corpus file " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return parse_corpus_texts(buffer.str());
}

}  // namespace topicforge
