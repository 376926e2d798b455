#ifndef LAYERPROBE_HSD_HPP
#define LAYERPROBE_HSD_HPP

// Hidden-State Dump (HSD): a directory holding per-layer embedding matrices
// captured from a language model, plus the token ids they were computed on.
//
//   manifest.json   UTF-8 JSON, fixed key set, magic "HSD"
//   tokens.bin      per sequence: u32 length T_s, then T_s u32 token ids
//   layer_<l>.bin   N x d f32, row-major, l = 1..L
//   targets.bin     optional, N f64
//
// All binary values are little-endian. Rows are ordered sequence-major and
// position-ascending. A sequence either contributes every position 1..T_s
// (no "positions" key) or exactly the listed positions.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "layerprobe/error.hpp"

namespace layerprobe {

namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;
inline constexpr const char* kMagic = "HSD";

enum class NormKind { LayerNorm, RmsNorm, Standardize, None };
enum class TaskKind { Ntp, ExplicitTargets };

inline std::string to_string(NormKind kind) {
    switch (kind) {
    case NormKind::LayerNorm: return "layernorm_default";
    case NormKind::RmsNorm: return "rmsnorm_default";
    case NormKind::Standardize: return "standardize";
    case NormKind::None: return "none";
    }
    return "none";
}

inline NormKind parse_norm_kind(std::string_view name) {
    if (name == "layernorm_default" || name == "layernorm") return NormKind::LayerNorm;
    if (name == "rmsnorm_default" || name == "rmsnorm") return NormKind::RmsNorm;
    if (name == "standardize" || name == "std") return NormKind::Standardize;
    if (name == "none") return NormKind::None;
    fail_validation("BadNormKind", "unknown normalization kind '" + std::string(name) + "'");
}

inline std::string to_string(TaskKind kind) {
    return kind == TaskKind::Ntp ? "ntp" : "explicit_targets";
}

struct SequenceInfo {
    std::uint32_t id = 0;
    std::uint32_t length = 0;
    /// 1-based positions that carry a row; empty means every position 1..length.
    std::vector<std::uint32_t> positions;

    [[nodiscard]] std::size_t row_count() const noexcept {
        return positions.empty() ? length : positions.size();
    }
};

/// Row address: `sequence` is the ordinal of the sequence in the manifest
/// (not its id), `position` is 1-based within that sequence.
struct RowIndex {
    std::size_t sequence = 0;
    std::uint32_t position = 0;

    friend bool operator==(const RowIndex&, const RowIndex&) = default;
};

/// Token ids per sequence, in manifest order.
using TokenTable = std::vector<std::vector<std::uint32_t>>;

struct DumpManifest {
    int format_version = kFormatVersion;
    std::string model_name;
    int num_layers = 0;
    int hidden_dim = 0;
    std::uint32_t vocab_size = 0;
    NormKind norm_kind = NormKind::None;
    bool prelast_norm_rule = false;
    TaskKind task_kind = TaskKind::Ntp;
    std::uint64_t num_rows = 0;
    std::vector<SequenceInfo> sequences;

    [[nodiscard]] std::uint64_t counted_rows() const noexcept {
        std::uint64_t n = 0;
        for (const auto& s : sequences) n += s.row_count();
        return n;
    }

    /// Semantic invariants; returns one message per violation.
    [[nodiscard]] std::vector<std::string> check() const {
        std::vector<std::string> out;
        if (format_version != kFormatVersion)
            out.push_back("unsupported format_version " + std::to_string(format_version));
        if (num_layers < 1) out.push_back("num_layers must be >= 1");
        if (hidden_dim < 1) out.push_back("hidden_dim must be >= 1");
        if (vocab_size < 2) out.push_back("vocab_size must be >= 2");
        if (norm_kind == NormKind::Standardize)
            out.push_back("norm_kind 'standardize' is a probe-time policy, not a model property");
        std::set<std::uint32_t> ids;
        for (const auto& s : sequences) {
            const std::string tag = "sequence " + std::to_string(s.id);
            if (!ids.insert(s.id).second) out.push_back(tag + ": duplicate sequence id");
            if (s.length < 1) out.push_back(tag + ": length must be >= 1");
            std::uint32_t prev = 0;
            for (auto t : s.positions) {
                if (t < 1 || t > s.length) {
                    out.push_back(tag + ": position " + std::to_string(t) + " outside 1.." +
                                  std::to_string(s.length));
                } else if (t <= prev) {
                    out.push_back(tag + ": positions not strictly ascending");
                }
                prev = t;
            }
        }
        if (counted_rows() != num_rows)
            out.push_back("row count mismatch: sequences contribute " + std::to_string(counted_rows()) +
                          " rows, num_rows is " + std::to_string(num_rows));
        return out;
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["magic"] = kMagic;
        j["format_version"] = format_version;
        j["model_name"] = model_name;
        j["num_layers"] = num_layers;
        j["hidden_dim"] = hidden_dim;
        j["vocab_size"] = vocab_size;
        j["norm_kind"] = to_string(norm_kind);
        j["prelast_norm_rule"] = prelast_norm_rule;
        j["task_kind"] = to_string(task_kind);
        j["num_rows"] = num_rows;
        auto seqs = nlohmann::ordered_json::array();
        for (const auto& s : sequences) {
            nlohmann::ordered_json e;
            e["id"] = s.id;
            e["length"] = s.length;
            if (!s.positions.empty()) e["positions"] = s.positions;
            seqs.push_back(std::move(e));
        }
        j["sequences"] = std::move(seqs);
        return j;
    }

    /// Strict parse: unknown or missing keys and wrong types are errors.
    static DumpManifest from_json(const nlohmann::json& j) {
        auto bad = [](const std::string& msg) { fail_validation("BadManifest", "manifest: " + msg); };
        if (!j.is_object()) bad("top level must be an object");
        static const std::set<std::string> keys = {
            "magic",      "format_version",    "model_name", "num_layers", "hidden_dim", "vocab_size",
            "norm_kind",  "prelast_norm_rule", "task_kind",  "num_rows",   "sequences"};
        for (const auto& [k, v] : j.items()) {
            if (!keys.contains(k)) bad("unknown key '" + k + "'");
        }
        for (const auto& k : keys) {
            if (!j.contains(k)) bad("missing key '" + k + "'");
        }
        try {
            if (j.at("magic").get<std::string>() != kMagic) bad("magic must be \"HSD\"");
            DumpManifest m;
            m.format_version = j.at("format_version").get<int>();
            m.model_name = j.at("model_name").get<std::string>();
            m.num_layers = j.at("num_layers").get<int>();
            m.hidden_dim = j.at("hidden_dim").get<int>();
            m.vocab_size = j.at("vocab_size").get<std::uint32_t>();
            const auto nk = j.at("norm_kind").get<std::string>();
            if (nk != "layernorm_default" && nk != "rmsnorm_default" && nk != "none")
                bad("norm_kind must be layernorm_default, rmsnorm_default or none");
            m.norm_kind = parse_norm_kind(nk);
            m.prelast_norm_rule = j.at("prelast_norm_rule").get<bool>();
            const auto tk = j.at("task_kind").get<std::string>();
            if (tk == "ntp") m.task_kind = TaskKind::Ntp;
            else if (tk == "explicit_targets") m.task_kind = TaskKind::ExplicitTargets;
            else bad("task_kind must be ntp or explicit_targets");
            m.num_rows = j.at("num_rows").get<std::uint64_t>();
            if (!j.at("sequences").is_array()) bad("sequences must be an array");
            for (const auto& e : j.at("sequences")) {
                if (!e.is_object()) bad("sequence entries must be objects");
                for (const auto& [k, v] : e.items()) {
                    if (k != "id" && k != "length" && k != "positions") bad("unknown sequence key '" + k + "'");
                }
                SequenceInfo s;
                s.id = e.at("id").get<std::uint32_t>();
                s.length = e.at("length").get<std::uint32_t>();
                if (e.contains("positions")) {
                    s.positions = e.at("positions").get<std::vector<std::uint32_t>>();
                    if (s.positions.empty()) bad("positions, when present, must be non-empty");
                }
                m.sequences.push_back(std::move(s));
            }
            return m;
        } catch (const nlohmann::json::exception& e) {
            bad(e.what());
        }
        return {};
    }

    /// Row table in storage order; size num_rows when check() passes.
    [[nodiscard]] std::vector<RowIndex> rows() const {
        std::vector<RowIndex> out;
        out.reserve(counted_rows());
        for (std::size_t s = 0; s < sequences.size(); ++s) {
            const auto& seq = sequences[s];
            if (seq.positions.empty()) {
                for (std::uint32_t t = 1; t <= seq.length; ++t) out.push_back({s, t});
            } else {
                for (auto t : seq.positions) out.push_back({s, t});
            }
        }
        return out;
    }
};

/// A contiguous slice [row_begin, row_end) of one layer's embedding matrix.
class LayerBatch {
public:
    LayerBatch() = default;
    LayerBatch(int layer, std::size_t row_begin, std::size_t dim, std::vector<float> data)
        : layer_(layer), row_begin_(row_begin), dim_(dim), data_(std::move(data)) {
        if (dim_ == 0 || data_.size() % dim_ != 0)
            fail_validation("BadBatch", "batch data size is not a multiple of the hidden dimension");
    }

    [[nodiscard]] int layer() const noexcept { return layer_; }
    [[nodiscard]] std::size_t row_begin() const noexcept { return row_begin_; }
    [[nodiscard]] std::size_t row_end() const noexcept { return row_begin_ + rows(); }
    [[nodiscard]] std::size_t rows() const noexcept { return dim_ == 0 ? 0 : data_.size() / dim_; }
    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
    [[nodiscard]] std::span<const float> row(std::size_t i) const noexcept {
        return std::span<const float>(data_).subspan(i * dim_, dim_);
    }

    [[nodiscard]] bool all_finite() const noexcept {
        return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
    }

private:
    int layer_ = 0;
    std::size_t row_begin_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

namespace detail {

template <typename T>
T byteswap_value(T v) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

template <typename T>
void write_le(std::ostream& os, std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
        os.write(reinterpret_cast<const char*>(values.data()),
                 static_cast<std::streamsize>(values.size_bytes()));
    } else {
        for (T v : values) {
            T s = byteswap_value(v);
            os.write(reinterpret_cast<const char*>(&s), sizeof(T));
        }
    }
}

template <typename T>
void write_le(std::ostream& os, T value) {
    write_le(os, std::span<const T>(&value, 1));
}

/// Reads exactly out.size() values; returns false on short read.
template <typename T>
bool read_le(std::istream& is, std::span<T> out) {
    is.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size_bytes()));
    if (static_cast<std::size_t>(is.gcount()) != out.size_bytes()) return false;
    if constexpr (std::endian::native != std::endian::little) {
        for (auto& v : out) v = byteswap_value(v);
    }
    return true;
}

inline std::uintmax_t file_size_or_zero(const fs::path& p) {
    std::error_code ec;
    auto n = fs::file_size(p, ec);
    return ec ? 0 : n;
}

} // namespace detail

inline fs::path layer_file(const fs::path& dir, int layer) {
    return dir / ("layer_" + std::to_string(layer) + ".bin");
}

/// Read-only handle to a dump directory. Cheap to copy; safe to share across threads.
class Dump {
public:
    static Dump open(const fs::path& dir) {
        const auto mpath = dir / "manifest.json";
        std::ifstream in(mpath);
        if (!in) fail_io("cannot read manifest " + mpath.string());
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            fail_validation("BadManifest", "manifest is not valid JSON: " + std::string(e.what()));
        }
        Dump d;
        d.dir_ = dir;
        d.manifest_ = DumpManifest::from_json(j);
        return d;
    }

    [[nodiscard]] const fs::path& dir() const noexcept { return dir_; }
    [[nodiscard]] const DumpManifest& manifest() const noexcept { return manifest_; }
    [[nodiscard]] fs::path layer_path(int layer) const { return layer_file(dir_, layer); }
    [[nodiscard]] bool has_targets() const { return fs::exists(dir_ / "targets.bin"); }

    [[nodiscard]] TokenTable read_tokens() const {
        const auto path = dir_ / "tokens.bin";
        std::ifstream in(path, std::ios::binary);
        if (!in) fail_io("cannot read " + path.string());
        TokenTable table;
        table.reserve(manifest_.sequences.size());
        for (const auto& seq : manifest_.sequences) {
            std::uint32_t len = 0;
            if (!detail::read_le(in, std::span<std::uint32_t>(&len, 1)))
                fail_io("tokens.bin: truncated at sequence " + std::to_string(seq.id));
            if (len != seq.length)
                fail_validation("BadTokens", "tokens.bin: sequence " + std::to_string(seq.id) + " has length " +
                                                 std::to_string(len) + ", manifest says " +
                                                 std::to_string(seq.length));
            std::vector<std::uint32_t> ids(len);
            if (!detail::read_le(in, std::span<std::uint32_t>(ids)))
                fail_io("tokens.bin: truncated in sequence " + std::to_string(seq.id));
            table.push_back(std::move(ids));
        }
        if (in.peek() != std::char_traits<char>::eof())
            fail_validation("BadTokens", "tokens.bin: trailing bytes after last sequence");
        return table;
    }

    [[nodiscard]] std::vector<double> read_targets() const {
        const auto path = dir_ / "targets.bin";
        std::ifstream in(path, std::ios::binary);
        if (!in) fail_io("cannot read " + path.string());
        std::vector<double> out(manifest_.num_rows);
        if (!detail::read_le(in, std::span<double>(out)) || in.peek() != std::char_traits<char>::eof())
            fail_io("targets.bin: expected " + std::to_string(manifest_.num_rows) + " f64 values");
        return out;
    }

private:
    Dump() = default;
    fs::path dir_;
    DumpManifest manifest_;
};

/// Sequential reader over rows [row_begin, row_end) of one layer file.
/// Holds at most one batch of batch_rows x d floats at a time.
class LayerStream {
public:
    LayerStream(const Dump& dump, int layer, std::size_t batch_rows, std::size_t row_begin = 0,
                std::optional<std::size_t> row_end = std::nullopt)
        : layer_(layer), dim_(static_cast<std::size_t>(dump.manifest().hidden_dim)), batch_rows_(batch_rows) {
        const auto& m = dump.manifest();
        if (layer < 1 || layer > m.num_layers)
            fail_validation("LayerOutOfRange", "layer index " + std::to_string(layer) + " outside 1.." +
                                                   std::to_string(m.num_layers));
        if (batch_rows < 1) fail_validation("BadBatchRows", "batch_rows must be >= 1");
        const std::size_t n = m.num_rows;
        end_ = row_end.value_or(n);
        if (row_begin > end_ || end_ > n) fail_validation("BadRowRange", "row range outside 0..num_rows");
        next_ = row_begin;
        begin_ = row_begin;

        const auto path = dump.layer_path(layer);
        if (!fs::exists(path)) fail_io("missing layer file " + path.string());
        const auto expected = static_cast<std::uintmax_t>(n) * dim_ * sizeof(float);
        const auto actual = detail::file_size_or_zero(path);
        if (actual < expected)
            fail_io("short layer file " + path.string() + ": " + std::to_string(actual) + " bytes, expected " +
                    std::to_string(expected));
        if (actual > expected)
            fail_validation("FileLength", "layer file length mismatch " + path.string() + ": " +
                                              std::to_string(actual) + " bytes, expected " +
                                              std::to_string(expected));
        in_.open(path, std::ios::binary);
        if (!in_) fail_io("cannot open " + path.string());
        in_.seekg(static_cast<std::streamoff>(row_begin * dim_ * sizeof(float)));
    }

    [[nodiscard]] std::size_t batch_count() const noexcept {
        return (end_ - begin_ + batch_rows_ - 1) / batch_rows_;
    }

    std::optional<LayerBatch> next() {
        if (next_ >= end_) return std::nullopt;
        const std::size_t rows = std::min(batch_rows_, end_ - next_);
        std::vector<float> buf(rows * dim_);
        if (!detail::read_le(in_, std::span<float>(buf)))
            fail_io("short layer file while reading layer " + std::to_string(layer_));
        LayerBatch batch(layer_, next_, dim_, std::move(buf));
        next_ += rows;
        return batch;
    }

private:
    int layer_;
    std::size_t dim_;
    std::size_t batch_rows_;
    std::size_t begin_ = 0;
    std::size_t next_ = 0;
    std::size_t end_ = 0;
    std::ifstream in_;
};

inline LayerStream open_layer_stream(const Dump& dump, int layer, std::size_t batch_rows) {
    return LayerStream(dump, layer, batch_rows);
}

/// Single-writer builder for a dump directory. Layers are written one at a
/// time; manifest.json is written last by finalize(), so an unfinished dump
/// never opens.
class DumpWriter {
public:
    DumpWriter(fs::path dir, DumpManifest manifest, const TokenTable& tokens,
               std::optional<std::vector<double>> targets = std::nullopt)
        : dir_(std::move(dir)), manifest_(std::move(manifest)), written_(manifest_.num_layers + 1, false) {
        if (auto v = manifest_.check(); !v.empty()) fail_validation("BadManifest", "manifest: " + v.front());
        if (tokens.size() != manifest_.sequences.size())
            fail_validation("BadTokens", "token table has " + std::to_string(tokens.size()) +
                                             " sequences, manifest has " +
                                             std::to_string(manifest_.sequences.size()));
        for (std::size_t s = 0; s < tokens.size(); ++s) {
            if (tokens[s].size() != manifest_.sequences[s].length)
                fail_validation("BadTokens", "token array length differs from sequence length for sequence " +
                                                 std::to_string(manifest_.sequences[s].id));
            for (auto id : tokens[s]) {
                if (id >= manifest_.vocab_size) fail_validation("BadTokens", "token id out of range");
            }
        }
        if (targets && targets->size() != manifest_.num_rows)
            fail_validation("RowCountMismatch", "row count mismatch: targets has " +
                                                    std::to_string(targets->size()) + " values");
        if (manifest_.task_kind == TaskKind::ExplicitTargets && !targets)
            fail_validation("MissingTargets", "explicit_targets dump requires targets");

        fs::create_directories(dir_);
        std::ofstream tok(dir_ / "tokens.bin", std::ios::binary | std::ios::trunc);
        if (!tok) fail_io("cannot write tokens.bin in " + dir_.string());
        for (const auto& seq : tokens) {
            detail::write_le(tok, static_cast<std::uint32_t>(seq.size()));
            detail::write_le(tok, std::span<const std::uint32_t>(seq));
        }
        if (!tok) fail_io("write failed: tokens.bin");
        if (targets) {
            std::ofstream tg(dir_ / "targets.bin", std::ios::binary | std::ios::trunc);
            detail::write_le(tg, std::span<const double>(*targets));
            if (!tg) fail_io("write failed: targets.bin");
        } else {
            fs::remove(dir_ / "targets.bin");
        }
        fs::remove(dir_ / "manifest.json");
    }

    void begin_layer(int layer) {
        if (current_ != 0) fail_validation("WriterState", "begin_layer while layer " + std::to_string(current_) +
                                                              " is open");
        if (layer < 1 || layer > manifest_.num_layers)
            fail_validation("LayerOutOfRange", "layer index " + std::to_string(layer) + " out of range");
        if (written_[layer]) fail_validation("DuplicateLayer", "duplicate layer " + std::to_string(layer));
        out_.open(layer_file(dir_, layer), std::ios::binary | std::ios::trunc);
        if (!out_) fail_io("cannot write layer file for layer " + std::to_string(layer));
        current_ = layer;
        rows_ = 0;
    }

    void append(const LayerBatch& batch) {
        if (current_ == 0) fail_validation("WriterState", "append without begin_layer");
        if (batch.dim() != static_cast<std::size_t>(manifest_.hidden_dim))
            fail_validation("DimMismatch", "batch dimension differs from hidden_dim");
        if (batch.row_begin() != rows_)
            fail_validation("RowOrder", "batch starts at row " + std::to_string(batch.row_begin()) +
                                            ", expected " + std::to_string(rows_));
        if (rows_ + batch.rows() > manifest_.num_rows)
            fail_validation("RowCountMismatch", "row count mismatch: layer " + std::to_string(current_) +
                                                    " receives more than " + std::to_string(manifest_.num_rows) +
                                                    " rows");
        if (!batch.all_finite())
            fail_validation("NonFinite", "non-finite embedding value in layer " + std::to_string(current_));
        detail::write_le(out_, batch.data());
        rows_ += batch.rows();
    }

    void end_layer() {
        if (current_ == 0) fail_validation("WriterState", "end_layer without begin_layer");
        if (rows_ != manifest_.num_rows)
            fail_validation("RowCountMismatch", "row count mismatch: layer " + std::to_string(current_) +
                                                    " received " + std::to_string(rows_) + " rows, expected " +
                                                    std::to_string(manifest_.num_rows));
        out_.close();
        if (!out_) fail_io("write failed for layer " + std::to_string(current_));
        written_[current_] = true;
        current_ = 0;
    }

    Dump finalize() {
        if (current_ != 0) fail_validation("WriterState", "finalize with layer " + std::to_string(current_) + " open");
        for (int l = 1; l <= manifest_.num_layers; ++l) {
            if (!written_[l]) fail_validation("MissingLayer", "layer " + std::to_string(l) + " was never written");
        }
        std::ofstream m(dir_ / "manifest.json", std::ios::trunc);
        m << manifest_.to_json().dump(2) << '\n';
        m.close();
        if (!m) fail_io("write failed: manifest.json");
        return Dump::open(dir_);
    }

private:
    fs::path dir_;
    DumpManifest manifest_;
    std::vector<bool> written_;
    std::ofstream out_;
    int current_ = 0;
    std::size_t rows_ = 0;
};

/// Produces the batches of one layer in row order; returns nullopt when done.
using LayerSource = std::function<std::optional<LayerBatch>(int layer)>;

inline Dump write_dump(const fs::path& dir, const DumpManifest& manifest, const TokenTable& tokens,
                       const LayerSource& source, std::optional<std::vector<double>> targets = std::nullopt) {
    DumpWriter w(dir, manifest, tokens, std::move(targets));
    for (int l = 1; l <= manifest.num_layers; ++l) {
        w.begin_layer(l);
        while (auto batch = source(l)) w.append(*batch);
        w.end_layer();
    }
    return w.finalize();
}

struct ValidationReport {
    std::vector<std::string> violations;
    [[nodiscard]] bool ok() const noexcept { return violations.empty(); }
};

/// Checks manifest invariants, token ids, file lengths and finiteness.
/// `sample_rows` rows per layer (evenly spaced) are checked for finite
/// values; 0 checks every row. Throws only when the manifest is unreadable.
inline ValidationReport validate_dump(const fs::path& dir, std::size_t sample_rows = 1024) {
    ValidationReport report;
    auto& v = report.violations;
    const Dump dump = Dump::open(dir);
    const auto& m = dump.manifest();
    for (auto& msg : m.check()) v.push_back(std::move(msg));

    const auto tpath = dir / "tokens.bin";
    if (std::ifstream in{tpath, std::ios::binary}; !in) {
        v.push_back("missing tokens.bin");
    } else {
        bool trunc = false;
        std::uint64_t out_of_range = 0;
        for (const auto& seq : m.sequences) {
            std::uint32_t len = 0;
            if (!detail::read_le(in, std::span<std::uint32_t>(&len, 1))) {
                trunc = true;
                break;
            }
            if (len != seq.length)
                v.push_back("tokens.bin: sequence " + std::to_string(seq.id) + " length prefix " +
                            std::to_string(len) + " differs from manifest length " + std::to_string(seq.length));
            std::vector<std::uint32_t> ids(len);
            if (!detail::read_le(in, std::span<std::uint32_t>(ids))) {
                trunc = true;
                break;
            }
            for (auto id : ids) out_of_range += id >= m.vocab_size;
        }
        if (trunc) v.push_back("tokens.bin truncated");
        else if (in.peek() != std::char_traits<char>::eof()) v.push_back("tokens.bin has trailing bytes");
        if (out_of_range > 0)
            v.push_back("token id out of range: " + std::to_string(out_of_range) + " ids >= vocab_size " +
                        std::to_string(m.vocab_size));
    }

    const bool have_targets = dump.has_targets();
    if (have_targets) {
        const auto expected = m.num_rows * sizeof(double);
        const auto actual = detail::file_size_or_zero(dir / "targets.bin");
        if (actual != expected)
            v.push_back("targets.bin file length mismatch: " + std::to_string(actual) + " bytes, expected " +
                        std::to_string(expected));
    } else if (m.task_kind == TaskKind::ExplicitTargets) {
        v.push_back("explicit_targets dump without targets.bin");
    }

    const std::size_t d = m.hidden_dim > 0 ? static_cast<std::size_t>(m.hidden_dim) : 0;
    for (int l = 1; l <= m.num_layers; ++l) {
        const auto path = dump.layer_path(l);
        if (!fs::exists(path)) {
            v.push_back("missing layer file layer_" + std::to_string(l) + ".bin");
            continue;
        }
        const auto expected = m.num_rows * d * sizeof(float);
        const auto actual = detail::file_size_or_zero(path);
        if (actual != expected) {
            v.push_back("layer_" + std::to_string(l) + ".bin file length mismatch: " + std::to_string(actual) +
                        " bytes, expected " + std::to_string(expected));
            continue;
        }
        if (d == 0 || m.num_rows == 0) continue;
        std::ifstream in(path, std::ios::binary);
        const std::size_t n = m.num_rows;
        const std::size_t count = (sample_rows == 0 || sample_rows >= n) ? n : sample_rows;
        std::vector<float> row(d);
        std::uint64_t bad = 0;
        for (std::size_t k = 0; k < count; ++k) {
            const std::size_t r = count == n ? k : (k * (n - 1)) / (count - 1 == 0 ? 1 : count - 1);
            in.seekg(static_cast<std::streamoff>(r * d * sizeof(float)));
            if (!detail::read_le(in, std::span<float>(row))) break;
            bad += std::any_of(row.begin(), row.end(), [](float x) { return !std::isfinite(x); });
        }
        if (bad > 0)
            v.push_back("layer_" + std::to_string(l) + ".bin: " + std::to_string(bad) +
                        " sampled rows contain non-finite values");
    }
    return report;
}

} // namespace layerprobe

#endif
