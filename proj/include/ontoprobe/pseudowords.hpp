#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "backend.hpp"
#include "entailment.hpp"
#include "error.hpp"
#include "prompting.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

namespace binio {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

class Reader {
public:
    Reader(std::string data, std::string source) : data_(std::move(data)), source_(std::move(source)) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }

    float f32() {
        std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool at_end() const { return pos_ == data_.size(); }
    std::size_t remaining() const { return data_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (data_.size() - pos_ < n) throw ValidationError(source_ + ": truncated binary file");
    }

    std::string data_;
    std::string source_;
    std::size_t pos_ = 0;
};

} // namespace binio

/// Static token embeddings; row `mask_id` is the [MASK] embedding.
struct EmbeddingTable {
    std::size_t dimension = 0;
    std::vector<std::vector<float>> rows;
    std::size_t mask_id = 0;

    std::size_t vocab_size() const { return rows.size(); }

    void validate() const {
        if (dimension == 0) throw ValidationError("embedding dimension must be positive");
        if (rows.size() < 2) throw ValidationError("embedding table needs [MASK] and at least one other token");
        if (mask_id >= rows.size()) throw ValidationError("mask id " + std::to_string(mask_id) + " is out of range");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != dimension) throw ValidationError("row " + std::to_string(i) + " has the wrong dimension");
            for (float x : rows[i])
                if (!std::isfinite(x)) throw ValidationError("row " + std::to_string(i) + " has a non-finite value");
        }
    }
};

/// Little-endian u32 vocab size, u32 dimension, then vocab x dimension f32.
inline std::string encode_table(const EmbeddingTable& t) {
    std::string out;
    binio::put_u32(out, static_cast<std::uint32_t>(t.rows.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(t.dimension));
    for (const auto& r : t.rows)
        for (float x : r) binio::put_f32(out, x);
    return out;
}

inline EmbeddingTable decode_table(std::string data, std::size_t mask_id, const std::string& source = "<table>") {
    binio::Reader in(std::move(data), source);
    EmbeddingTable t;
    std::size_t vocab = in.u32();
    t.dimension = in.u32();
    t.mask_id = mask_id;
    if (in.remaining() != vocab * t.dimension * 4) throw ValidationError(source + ": size does not match header");
    t.rows.assign(vocab, std::vector<float>(t.dimension));
    for (auto& r : t.rows)
        for (auto& x : r) x = in.f32();
    t.validate();
    return t;
}

inline void write_table(const std::string& path, const EmbeddingTable& t) { write_file(path, encode_table(t)); }
inline EmbeddingTable read_table(const std::string& path, std::size_t mask_id) { return decode_table(read_file(path), mask_id, path); }

/// Gaussian table for desk runs and tests.
inline EmbeddingTable random_table(std::size_t vocab, std::size_t dimension, std::uint64_t seed, std::size_t mask_id = 0) {
    Rng rng(seed);
    EmbeddingTable t{dimension, std::vector<std::vector<float>>(vocab, std::vector<float>(dimension)), mask_id};
    for (auto& r : t.rows)
        for (auto& x : r) x = static_cast<float>(rng.normal());
    t.validate();
    return t;
}

inline double distance(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

inline std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

/// d = alpha * min over t != [MASK] of |z_t - z_[MASK]|.
inline double sampling_distance(const EmbeddingTable& t, double alpha) {
    if (!(alpha > 0 && alpha < 1)) throw ValidationError("alpha must be in (0, 1)");
    t.validate();
    const auto z = widen(t.rows[t.mask_id]);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        if (i != t.mask_id) best = std::min(best, distance(widen(t.rows[i]), z));
    if (best == 0) throw ValidationError("degenerate embedding table: a token coincides with [MASK]");
    return alpha * best;
}

struct PseudowordOptions {
    double alpha = 0.5;
    /// Uniform in the ball of radius d instead of on the sphere.
    bool ball = false;
    /// Rejected draws allowed per accepted vector.
    std::size_t budget = 10000;
};

struct PseudowordSet {
    std::vector<std::vector<double>> vectors;
    double d = 0;
    double alpha = 0.5;
    std::uint64_t seed = 0;
    bool ball = false;
};

/// Vectors z_[MASK] + d*u with u uniform on the unit sphere (or scaled into
/// the ball), each at least d away from every earlier one.
inline PseudowordSet sample_pseudowords(const EmbeddingTable& t, std::size_t count, std::uint64_t seed,
                                        const PseudowordOptions& opt = {}) {
    if (count < 1) throw ValidationError("pseudoword count must be >= 1");
    PseudowordSet out{{}, sampling_distance(t, opt.alpha), opt.alpha, seed, opt.ball};
    const auto z = widen(t.rows[t.mask_id]);
    const std::size_t dim = t.dimension;
    Rng rng(seed);
    while (out.vectors.size() < count) {
        bool accepted = false;
        for (std::size_t attempt = 0; attempt <= opt.budget && !accepted; ++attempt) {
            std::vector<double> u(dim);
            double norm = 0;
            do {
                norm = 0;
                for (auto& x : u) {
                    x = rng.normal();
                    norm += x * x;
                }
            } while (norm == 0);
            norm = std::sqrt(norm);
            double r = out.d;
            if (opt.ball) r *= std::pow(rng.uniform(), 1.0 / static_cast<double>(dim));
            std::vector<double> v(dim);
            for (std::size_t i = 0; i < dim; ++i) v[i] = z[i] + r * (u[i] / norm);
            bool far = true;
            for (const auto& w : out.vectors)
                if (distance(v, w) < out.d) {
                    far = false;
                    break;
                }
            if (far) {
                out.vectors.push_back(std::move(v));
                accepted = true;
            }
        }
        if (!accepted)
            throw ValidationError("rejection budget of " + std::to_string(opt.budget) + " draws exhausted after " +
                                  std::to_string(out.vectors.size()) + " of " + std::to_string(count) +
                                  " pseudowords; dimension " + std::to_string(dim) + " is too small");
    }
    return out;
}

/// Pseudoword vectors for each rule: pair k binds [X] to vector 2k and [Y]
/// to vector 2k+1.
struct PseudowordBank {
    double d = 0;
    double alpha = 0.5;
    bool ball = false;
    std::size_t dimension = 0;
    std::map<std::string, PseudowordSet> rules;

    std::map<std::string, Vector> bind(const std::string& rule, std::size_t pair) const {
        auto it = rules.find(rule);
        if (it == rules.end()) throw ValidationError("no pseudowords for rule " + rule);
        const auto& v = it->second.vectors;
        if (2 * pair + 1 >= v.size()) throw ValidationError("no pseudoword pair " + std::to_string(pair) + " for rule " + rule);
        return {{"X", v[2 * pair]}, {"Y", v[2 * pair + 1]}};
    }
};

inline PseudowordBank sample_bank(const EmbeddingTable& t, std::size_t pairs, std::uint64_t seed,
                                  const PseudowordOptions& opt = {}) {
    PseudowordBank bank{sampling_distance(t, opt.alpha), opt.alpha, opt.ball, t.dimension, {}};
    for (auto r : kRules) {
        std::string name = to_string(r);
        bank.rules.emplace(name, sample_pseudowords(t, 2 * pairs, fnv1a64(name, seed), opt));
    }
    return bank;
}

inline RecordFile bank_records(const PseudowordBank& b, json header) {
    header["alpha"] = b.alpha;
    header["d"] = b.d;
    header["sampling"] = b.ball ? "ball" : "sphere";
    header["dimension"] = b.dimension;
    RecordFile f{std::move(header), {}};
    for (const auto& [rule, set] : b.rules)
        f.records.push_back({{"rule", rule}, {"seed", set.seed}, {"vectors", set.vectors}});
    return f;
}

inline PseudowordBank bank_from_records(const RecordFile& f) {
    try {
        PseudowordBank b;
        b.alpha = f.header.at("alpha").get<double>();
        b.d = f.header.at("d").get<double>();
        b.ball = f.header.at("sampling").get<std::string>() == "ball";
        b.dimension = f.header.at("dimension").get<std::size_t>();
        for (const auto& r : f.records) {
            PseudowordSet s{r.at("vectors").get<std::vector<std::vector<double>>>(), b.d, b.alpha,
                            r.at("seed").get<std::uint64_t>(), b.ball};
            for (const auto& v : s.vectors)
                if (v.size() != b.dimension) throw ValidationError("pseudoword vector has the wrong dimension");
            b.rules.emplace(r.at("rule").get<std::string>(), std::move(s));
        }
        return b;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed pseudoword file: ") + e.what());
    }
}

/// Trained soft-token vectors keyed by placeholder id ("s1" ... "s5").
/// File: "OPSK", u32 version, u32 dimension, u32 count, u32 metadata length,
/// metadata bytes, then per entry u32 name length, name, dimension f32.
struct SoftCheckpoint {
    std::size_t dimension = 0;
    std::string metadata;
    std::map<std::string, std::vector<float>> vectors;

    std::map<std::string, Vector> as_doubles() const {
        std::map<std::string, Vector> out;
        for (const auto& [k, v] : vectors) out[k] = widen(v);
        return out;
    }
};

inline constexpr std::uint32_t kSoftVersion = 1;

inline std::string encode_soft(const SoftCheckpoint& c) {
    std::string out = "OPSK";
    binio::put_u32(out, kSoftVersion);
    binio::put_u32(out, static_cast<std::uint32_t>(c.dimension));
    binio::put_u32(out, static_cast<std::uint32_t>(c.vectors.size()));
    binio::put_u32(out, static_cast<std::uint32_t>(c.metadata.size()));
    out += c.metadata;
    for (const auto& [name, v] : c.vectors) {
        if (v.size() != c.dimension) throw ValidationError("soft vector " + name + " has the wrong dimension");
        binio::put_u32(out, static_cast<std::uint32_t>(name.size()));
        out += name;
        for (float x : v) binio::put_f32(out, x);
    }
    return out;
}

inline SoftCheckpoint decode_soft(std::string data, const std::string& source = "<soft>") {
    binio::Reader in(std::move(data), source);
    if (in.bytes(4) != "OPSK") throw ValidationError(source + ": not a soft-token checkpoint");
    if (auto v = in.u32(); v != kSoftVersion) throw ValidationError(source + ": unsupported version " + std::to_string(v));
    SoftCheckpoint c;
    c.dimension = in.u32();
    std::size_t count = in.u32();
    c.metadata = in.bytes(in.u32());
    for (std::size_t i = 0; i < count; ++i) {
        std::string name = in.bytes(in.u32());
        std::vector<float> v(c.dimension);
        for (auto& x : v) x = in.f32();
        c.vectors.emplace(std::move(name), std::move(v));
    }
    if (!in.at_end()) throw ValidationError(source + ": trailing bytes");
    return c;
}

inline SoftCheckpoint read_soft(const std::string& path) { return decode_soft(read_file(path), path); }
inline void write_soft(const std::string& path, const SoftCheckpoint& c) { write_file(path, encode_soft(c)); }

} // namespace ontoprobe
