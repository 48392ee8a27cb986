#pragma once

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <fcntl.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "topicforge/corpus.hpp"
#include "topicforge/embedding.hpp"
#include "topicforge/error.hpp"
#include "topicforge/topicstore.hpp"

namespace topicforge {

inline constexpr int kStateSchemaVersion = 1;
inline constexpr std::array<char, 8> kMatrixMagic = {'T', 'F', 'M', 'A', 'T', 'R', 'X', '1'};
inline constexpr std::size_t kMatrixHeaderBytes = 16;

/// Called at named points during a save. Throwing from it simulates a crash
/// at that point.
using SaveCheckpoint = std::function<void(std::string_view point)>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint32_t get_u32(const char* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
}

inline void fsync_path(const std::filesystem::path& p, bool directory) {
    const int fd = ::open(p.c_str(), directory ? O_RDONLY | O_DIRECTORY : O_RDONLY);
    if (fd < 0) return;
    ::fsync(fd);
    ::close(fd);
}

inline void checkpoint(const SaveCheckpoint& hook, std::string_view point) {
    if (hook) hook(point);
}

/// Writes `bytes` to `target` through a temporary file and a rename. The
/// payload is written in two halves so a crash can leave a partial file.
inline void write_atomically(const std::filesystem::path& target, const std::string& bytes, const SaveCheckpoint& hook,
                             const std::string& label) {
    const auto tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::InvalidConfig, "cannot write " + tmp);
        checkpoint(hook, label + ":opened");
        const auto half = bytes.size() / 2;
        out.write(bytes.data(), static_cast<std::streamsize>(half));
        out.flush();
        checkpoint(hook, label + ":half-written");
        out.write(bytes.data() + half, static_cast<std::streamsize>(bytes.size() - half));
        out.flush();
        if (!out) throw Error(ErrorCode::InvalidConfig, "write failed: " + tmp);
        checkpoint(hook, label + ":written");
    }
    fsync_path(tmp, false);
    checkpoint(hook, label + ":synced");
    std::filesystem::rename(tmp, target);
    checkpoint(hook, label + ":renamed");
    fsync_path(target.parent_path().empty() ? "." : target.parent_path(), true);
    checkpoint(hook, label + ":dir-synced");
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::NotFound, "cannot open " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace detail

/// 16-byte header {magic[8], u32 rows, u32 cols} followed by little-endian
/// float32 values, row-major.
inline std::string encode_matrix(const EmbeddingMatrix& m) {
    std::string out(kMatrixMagic.begin(), kMatrixMagic.end());
    detail::put_u32(out, static_cast<std::uint32_t>(m.rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.reserve(kMatrixHeaderBytes + m.values().size() * 4);
    for (const double v : m.values()) {
        const float f = static_cast<float>(v);
        std::uint32_t bits;
        std::memcpy(&bits, &f, 4);
        detail::put_u32(out, bits);
    }
    return out;
}

inline EmbeddingMatrix decode_matrix(std::string_view bytes, const std::string& name) {
    if (bytes.size() < kMatrixHeaderBytes) {
        throw Error(ErrorCode::CorruptState, name + ": header truncated at byte offset " + std::to_string(bytes.size()));
    }
    if (std::memcmp(bytes.data(), kMatrixMagic.data(), kMatrixMagic.size()) != 0) {
        throw Error(ErrorCode::CorruptState, name + ": bad magic at byte offset 0");
    }
    const std::size_t rows = detail::get_u32(bytes.data() + 8);
    const std::size_t cols = detail::get_u32(bytes.data() + 12);
    const std::size_t expected = kMatrixHeaderBytes + rows * cols * 4;
    if (bytes.size() != expected) {
        throw Error(ErrorCode::CorruptState, name + ": expected " + std::to_string(expected) + " bytes, data ends at byte offset " +
                                                 std::to_string(bytes.size()));
    }
    std::vector<double> values(rows * cols);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const std::uint32_t bits = detail::get_u32(bytes.data() + kMatrixHeaderBytes + 4 * i);
        float f;
        std::memcpy(&f, &bits, 4);
        values[i] = f;
    }
    return EmbeddingMatrix(rows, cols, std::move(values));
}

// ---------------------------------------------------------------------------
// JSON document
// ---------------------------------------------------------------------------

inline nlohmann::json topic_to_json(const Topic& t) {
    nlohmann::json j = {{"index", t.index},
                        {"title", t.title},
                        {"description", t.description},
                        {"doc_ids", t.doc_ids},
                        {"centroid_full", t.centroid_full},
                        {"centroid_reduced", t.centroid_reduced},
                        {"topwords_tfidf", t.topwords_tfidf.to_json()}};
    j["topwords_cosine"] = t.topwords_cosine ? t.topwords_cosine->to_json() : nlohmann::json();
    return j;
}

inline Topic topic_from_json(const nlohmann::json& j) {
    Topic t;
    t.index = j.at("index").get<std::size_t>();
    t.title = j.at("title").get<std::string>();
    t.description = j.at("description").get<std::string>();
    t.doc_ids = j.at("doc_ids").get<std::vector<DocId>>();
    t.centroid_full = j.at("centroid_full").get<Vector>();
    t.centroid_reduced = j.at("centroid_reduced").get<Vector>();
    t.topwords_tfidf = TopwordList::from_json(j.at("topwords_tfidf"));
    if (!j.at("topwords_cosine").is_null()) t.topwords_cosine = TopwordList::from_json(j["topwords_cosine"]);
    return t;
}

/// Everything except the matrices, which are referenced by file name.
inline nlohmann::json state_document(const TopicModelState& s, const nlohmann::json& matrices) {
    const auto& corpus = *s.corpus;
    nlohmann::json texts = nlohmann::json::array();
    for (const auto& d : corpus.documents()) texts.push_back(d.text);
    std::vector<std::string> stopwords(corpus.options().stopwords.begin(), corpus.options().stopwords.end());
    std::sort(stopwords.begin(), stopwords.end());
    nlohmann::json vocabulary = nlohmann::json::array();
    const auto& vocab = corpus.vocabulary();
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        const auto& e = vocab.at(static_cast<TokenId>(id));
        vocabulary.push_back({vocab.word(static_cast<TokenId>(id)), e.corpus_frequency, e.document_frequency});
    }
    nlohmann::json topics = nlohmann::json::array();
    for (const auto& t : s.topics) topics.push_back(topic_to_json(t));
    nlohmann::json history = nlohmann::json::array();
    for (const auto& r : s.history) history.push_back(r.to_json());
    return {{"schema_version", kStateSchemaVersion},
            {"version", s.version},
            {"config", s.config},
            {"settings", s.settings.to_json()},
            {"corpus", {{"texts", texts}, {"min_token_len", corpus.options().min_token_len}, {"stopwords", stopwords}}},
            {"vocabulary", vocabulary},
            {"topics", topics},
            {"reducer", s.reducer->to_json()},
            {"history", history},
            {"initial_partition", s.initial_partition},
            {"matrices", matrices}};
}

/// Canonical serialization: keys sorted, no insignificant whitespace.
inline std::string canonical_json(const nlohmann::json& j) { return j.dump(-1, ' ', false, nlohmann::json::error_handler_t::strict); }

namespace detail {

inline std::string matrix_file_name(const std::filesystem::path& state_path, const std::string& role, const std::string& sha) {
    return state_path.filename().string() + "." + role + "." + sha.substr(0, 16) + ".bin";
}

inline nlohmann::json write_matrix(const std::filesystem::path& state_path, const std::string& role, const EmbeddingMatrix& m,
                                   const SaveCheckpoint& hook) {
    const auto bytes = encode_matrix(m);
    const auto sha = sha256_hex(bytes);
    const auto name = matrix_file_name(state_path, role, sha);
    const auto target = state_path.parent_path() / name;
    // Content-addressed: an existing file with this name already holds these bytes.
    if (!std::filesystem::exists(target) || std::filesystem::file_size(target) != bytes.size()) {
        write_atomically(target, bytes, hook, role);
    } else {
        checkpoint(hook, role + ":reused");
    }
    return {{"file", name}, {"sha256", sha}, {"rows", m.rows()}, {"cols", m.cols()}};
}

}  // namespace detail

/// Writes the matrices first (content-addressed, so files referenced by the
/// current primary stay intact), then the JSON document via temp + rename.
/// The rename of the JSON is the commit point. Unreferenced matrix files and
/// leftover temporaries are removed afterwards.
inline void save_state(const TopicModelState& s, const std::filesystem::path& path, const SaveCheckpoint& hook = {}) {
    const auto dir = path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    detail::checkpoint(hook, "begin");
    nlohmann::json matrices = {{"embeddings", detail::write_matrix(path, "embeddings", *s.embeddings, hook)},
                               {"reduced", detail::write_matrix(path, "reduced", *s.reduced, hook)}};
    const auto document = canonical_json(state_document(s, matrices));
    detail::write_atomically(path, document, hook, "state");
    const std::set<std::string> keep = {matrices["embeddings"]["file"], matrices["reduced"]["file"]};
    const auto prefix = path.filename().string() + ".";
    for (const auto& entry : std::filesystem::directory_iterator(dir.empty() ? "." : dir)) {
        const auto name = entry.path().filename().string();
        const bool stale_bin = entry.path().extension() == ".bin" && !keep.contains(name);
        if (name.rfind(prefix, 0) == 0 && (stale_bin || entry.path().extension() == ".tmp")) {
            std::error_code ignored;
            std::filesystem::remove(entry.path(), ignored);
        }
    }
    detail::checkpoint(hook, "done");
}

inline TopicModelState load_state(const std::filesystem::path& path, int reader_schema_version = kStateSchemaVersion) {
    const auto text = detail::read_file(path);
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::CorruptState, path.string() + ": invalid JSON at byte offset " + std::to_string(e.byte));
    }
    const int stored = doc.value("schema_version", 0);
    if (stored != reader_schema_version) {
        throw Error(ErrorCode::SchemaVersionMismatch, "state file has schema v" + std::to_string(stored) +
                                                          ", this reader expects v" + std::to_string(reader_schema_version));
    }
    try {
        TopicModelState s;
        const auto& c = doc.at("corpus");
        IngestOptions options;
        options.min_token_len = c.at("min_token_len").get<int>();
        for (const auto& w : c.at("stopwords")) options.stopwords.insert(w.get<std::string>());
        auto corpus = std::make_shared<Corpus>(ingest_corpus(c.at("texts").get<std::vector<std::string>>(), options));
        const auto& vocab = corpus->vocabulary();
        const auto& stored_vocab = doc.at("vocabulary");
        if (stored_vocab.size() != vocab.size()) throw Error(ErrorCode::CorruptState, "vocabulary size differs from corpus");
        for (std::size_t id = 0; id < vocab.size(); ++id) {
            const auto& e = vocab.at(static_cast<TokenId>(id));
            const auto& row = stored_vocab[id];
            if (row[0] != vocab.word(static_cast<TokenId>(id)) || row[1] != e.corpus_frequency || row[2] != e.document_frequency) {
                throw Error(ErrorCode::CorruptState, "vocabulary entry " + std::to_string(id) + " differs from corpus");
            }
        }
        s.corpus = std::move(corpus);
        const auto load_matrix = [&](const char* role) {
            const auto& ref = doc.at("matrices").at(role);
            const auto file = path.parent_path() / ref.at("file").get<std::string>();
            std::string bytes;
            try {
                bytes = detail::read_file(file);
            } catch (const Error&) {
                throw Error(ErrorCode::CorruptState, std::string(role) + " matrix file missing: " + file.string());
            }
            auto m = decode_matrix(bytes, file.string());
            if (sha256_hex(bytes) != ref.at("sha256").get<std::string>()) {
                throw Error(ErrorCode::CorruptState, file.string() + ": checksum mismatch (payload from byte offset " +
                                                         std::to_string(kMatrixHeaderBytes) + ")");
            }
            if (m.rows() != ref.at("rows").get<std::size_t>() || m.cols() != ref.at("cols").get<std::size_t>()) {
                throw Error(ErrorCode::CorruptState, file.string() + ": shape differs from state document");
            }
            return std::make_shared<const EmbeddingMatrix>(std::move(m));
        };
        s.embeddings = load_matrix("embeddings");
        s.reduced = load_matrix("reduced");
        if (s.embeddings->rows() != s.corpus->size() || s.reduced->rows() != s.corpus->size()) {
            throw Error(ErrorCode::CorruptState, "matrix row count differs from document count");
        }
        s.reducer = std::make_shared<const ReducerModel>(ReducerModel::from_json(doc.at("reducer")));
        s.config = doc.at("config");
        s.settings = TopicSettings::from_json(doc.at("settings"));
        s.version = doc.at("version").get<std::uint64_t>();
        for (const auto& t : doc.at("topics")) s.topics.push_back(topic_from_json(t));
        for (const auto& r : doc.at("history")) s.history.push_back(ModificationRecord::from_json(r));
        s.initial_partition = doc.at("initial_partition").get<Partition>();
        if (const auto bad = partition_violation(s.partition(), s.corpus->size())) {
            throw Error(ErrorCode::CorruptState, "topics do not partition the corpus: " + *bad);
        }
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::CorruptState, path.string() + ": " + e.what());
    }
}

/// Canonical bytes of the state document as it would be saved.
inline std::string canonical_state_bytes(const TopicModelState& s) {
    const auto ref = [](const EmbeddingMatrix& m, const std::string& role) {
        const auto sha = sha256_hex(encode_matrix(m));
        return nlohmann::json{{"file", role + "." + sha.substr(0, 16) + ".bin"}, {"sha256", sha}, {"rows", m.rows()}, {"cols", m.cols()}};
    };
    return canonical_json(state_document(s, {{"embeddings", ref(*s.embeddings, "embeddings")}, {"reduced", ref(*s.reduced, "reduced")}}));
}

}  // namespace topicforge
