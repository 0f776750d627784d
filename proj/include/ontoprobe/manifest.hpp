#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "error.hpp"
#include "records.hpp"

namespace ontoprobe {

inline constexpr const char* kToolVersion = "0.1.0";

/// Run parameters embedded in the header of every output file.
struct RunManifest {
    std::string command;
    std::string graph_hash;
    std::map<std::string, std::uint64_t> seeds;
    std::string template_variant;
    std::vector<std::string> scoring;
    json backend;
    std::optional<double> alpha;
    std::vector<std::string> grid;
    std::string candidate_policy;
    std::map<std::string, std::string> outputs;
    json extra = json::object();
};

inline json to_json(const RunManifest& m) {
    json j{{"tool", "ontoprobe"}, {"version", kToolVersion}, {"command", m.command}, {"graph_hash", m.graph_hash}};
    j["seeds"] = m.seeds;
    if (!m.template_variant.empty()) j["template"] = m.template_variant;
    if (!m.scoring.empty()) j["scoring"] = m.scoring;
    if (!m.backend.is_null()) j["backend"] = m.backend;
    if (m.alpha) j["alpha"] = *m.alpha;
    if (!m.grid.empty()) j["grid"] = m.grid;
    if (!m.candidate_policy.empty()) j["candidate_policy"] = m.candidate_policy;
    if (!m.outputs.empty()) j["outputs"] = m.outputs;
    for (const auto& [k, v] : m.extra.items()) j[k] = v;
    return j;
}

/// Graph hash recorded in a file header; throws when absent.
inline std::string header_graph_hash(const json& header, const std::string& source) {
    if (!header.contains("graph_hash") || !header["graph_hash"].is_string())
        throw ValidationError(source + ": header has no graph hash");
    return header["graph_hash"].get<std::string>();
}

/// Rejects inputs produced under a different graph.
inline void check_graph_hash(const json& header, const std::string& expected, const std::string& source) {
    auto got = header_graph_hash(header, source);
    if (got != expected)
        throw ValidationError("manifest mismatch: " + source + " was produced from graph " + got + ", expected " + expected);
}

} // namespace ontoprobe
