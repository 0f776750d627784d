#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <regex>
#include <string>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "ontology.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

enum class Subtask { TP, SCO, SPO, DM, RG };

inline constexpr std::array<Subtask, 5> kSubtasks{Subtask::TP, Subtask::SCO, Subtask::SPO, Subtask::DM, Subtask::RG};

inline const char* to_string(Subtask s) {
    switch (s) {
    case Subtask::TP: return "TP";
    case Subtask::SCO: return "SCO";
    case Subtask::SPO: return "SPO";
    case Subtask::DM: return "DM";
    case Subtask::RG: return "RG";
    }
    return "?";
}

inline Subtask parse_subtask(std::string_view s) {
    for (auto t : kSubtasks)
        if (s == to_string(t)) return t;
    throw ValidationError("unknown subtask: " + std::string(s));
}

/// Ontological relation verbalized by the subtask's templates.
inline const char* relation_of(Subtask s) {
    switch (s) {
    case Subtask::TP: return "type";
    case Subtask::SCO: return "subclass_of";
    case Subtask::SPO: return "subproperty_of";
    case Subtask::DM: return "domain";
    case Subtask::RG: return "range";
    }
    return "?";
}

/// Candidates are properties for SPO, classes otherwise.
inline NodeKind candidate_kind(Subtask s) { return s == Subtask::SPO ? NodeKind::Property : NodeKind::Class; }

enum class Split { Train, Dev, Test };

inline const char* to_string(Split s) {
    switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
    }
    return "?";
}

inline Split parse_split(std::string_view s) {
    if (s == "train") return Split::Train;
    if (s == "dev") return Split::Dev;
    if (s == "test") return Split::Test;
    throw ValidationError("unknown split: " + std::string(s));
}

struct MemorizingSample {
    std::string id;
    Subtask subtask = Subtask::TP;
    NodeId subject_id;
    std::string subject_label;
    /// Verb phrase for DM/RG templates; empty for other subtasks.
    std::string subject_phrase;
    std::vector<std::string> golds;
    std::vector<std::string> candidates;
    Split split = Split::Test;

    friend bool operator==(const MemorizingSample&, const MemorizingSample&) = default;
};

inline json to_json(const MemorizingSample& s) {
    json j{{"id", s.id},
           {"subtask", to_string(s.subtask)},
           {"subject_id", s.subject_id.str()},
           {"subject_label", s.subject_label},
           {"golds", s.golds},
           {"candidates", s.candidates},
           {"split", to_string(s.split)}};
    if (!s.subject_phrase.empty()) j["subject_phrase"] = s.subject_phrase;
    return j;
}

inline MemorizingSample memorizing_from_json(const json& j) {
    try {
        MemorizingSample s;
        s.id = j.at("id").get<std::string>();
        s.subtask = parse_subtask(j.at("subtask").get<std::string>());
        s.subject_id = NodeId{j.at("subject_id").get<std::string>()};
        s.subject_label = j.at("subject_label").get<std::string>();
        s.subject_phrase = j.value("subject_phrase", std::string{});
        s.golds = j.at("golds").get<std::vector<std::string>>();
        s.candidates = j.at("candidates").get<std::vector<std::string>>();
        s.split = parse_split(j.at("split").get<std::string>());
        return s;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed memorizing record: ") + e.what());
    }
}

struct MemorizingOptions {
    /// TP golds include superclasses of the asserted types.
    bool transitive_types = true;
    std::size_t train = 10;
    std::size_t dev = 10;
};

struct SubtaskSamples {
    std::vector<MemorizingSample> samples;
    std::vector<std::string> warnings;
    std::size_t train = 0, dev = 0, test = 0;
};

/// Deduplicated labels of all classes (or properties), declaration order.
inline std::vector<std::string> label_vocabulary(const OntologyGraph& g, NodeKind kind) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    auto add = [&](const std::string& l) {
        if (seen.insert(l).second) out.push_back(l);
    };
    if (kind == NodeKind::Class)
        for (const auto& c : g.classes()) add(c.label);
    else
        for (const auto& p : g.properties()) add(p.label);
    return out;
}

inline std::string domain_phrase(const PropertyNode& p) { return p.domain_phrase.value_or("have " + p.label); }
inline std::string range_phrase(const PropertyNode& p) { return p.range_phrase.value_or("be " + p.label); }

namespace detail {

inline std::vector<std::string> labels_of(const OntologyGraph& g, const std::vector<NodeId>& ids) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (const auto& id : ids) {
        const auto& l = g.label_of(id);
        if (seen.insert(l).second) out.push_back(l);
    }
    return out;
}

inline void assign_splits(std::vector<MemorizingSample>& samples, Subtask task, std::uint64_t seed,
                          const MemorizingOptions& opt, SubtaskSamples& out) {
    const std::size_t n = samples.size();
    std::size_t train = opt.train, dev = opt.dev;
    if (n < train + dev + 1) {
        // keep at least one test subject; train and dev shrink evenly
        train = dev = n == 0 ? 0 : std::min({opt.train, opt.dev, (n - 1) / 2});
        out.warnings.push_back(std::string(to_string(task)) + ": only " + std::to_string(n) +
                               " subjects; split " + std::to_string(train) + "/" + std::to_string(dev) + "/" +
                               std::to_string(n - train - dev));
    }
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed, static_cast<std::uint64_t>(task) + 1);
    rng.shuffle(order);
    for (std::size_t r = 0; r < n; ++r)
        samples[order[r]].split = r < train ? Split::Train : r < train + dev ? Split::Dev : Split::Test;
    std::stable_sort(samples.begin(), samples.end(),
                     [](const MemorizingSample& a, const MemorizingSample& b) { return a.split < b.split; });
    out.train = train;
    out.dev = dev;
    out.test = n - train - dev;
}

} // namespace detail

/// Builds the five memorizing subtasks. Golds are ordered nearest-first, so
/// golds.front() is the finest-grained answer. Subjects without golds are
/// skipped. Samples are grouped train, dev, test; each group keeps subject
/// declaration order.
inline std::map<Subtask, SubtaskSamples> generate_memorizing(const OntologyGraph& g, std::uint64_t seed,
                                                             const MemorizingOptions& opt = {}) {
    const auto classes = label_vocabulary(g, NodeKind::Class);
    const auto props = label_vocabulary(g, NodeKind::Property);
    std::map<Subtask, SubtaskSamples> out;
    for (auto task : kSubtasks) {
        std::vector<MemorizingSample> samples;
        auto push = [&](const NodeId& id, const std::string& label, std::vector<std::string> golds,
                        std::string phrase = {}) {
            if (golds.empty()) return;
            samples.push_back({std::string(to_string(task)) + "/" + id.str(), task, id, label, std::move(phrase),
                               std::move(golds), task == Subtask::SPO ? props : classes, Split::Test});
        };
        switch (task) {
        case Subtask::TP:
            for (const auto& i : g.instances())
                push(i.id, i.label, detail::labels_of(g, g.types_of(i.id, opt.transitive_types)));
            break;
        case Subtask::SCO:
            for (const auto& c : g.classes())
                push(c.id, c.label, detail::labels_of(g, g.ancestors(c.id, NodeKind::Class)));
            break;
        case Subtask::SPO:
            for (const auto& p : g.properties())
                push(p.id, p.label, detail::labels_of(g, g.ancestors(p.id, NodeKind::Property)));
            break;
        case Subtask::DM:
            for (const auto& p : g.properties())
                if (p.domain) push(p.id, p.label, {g.label_of(*p.domain)}, domain_phrase(p));
            break;
        case Subtask::RG:
            for (const auto& p : g.properties())
                if (p.range) push(p.id, p.label, {g.label_of(*p.range)}, range_phrase(p));
            break;
        }
        auto& set = out[task];
        detail::assign_splits(samples, task, seed, opt, set);
        set.samples = std::move(samples);
    }
    return out;
}

struct MultipleChoiceQuestion {
    std::string id;
    Subtask subtask = Subtask::TP;
    std::string subject_label;
    std::vector<std::string> choices;
    std::size_t answer_index = 0;
    std::string prompt;

    char answer_letter() const { return static_cast<char>('a' + answer_index); }
};

inline std::string question_stem(Subtask task, const std::string& subject) {
    switch (task) {
    case Subtask::TP: return "What is the type of " + subject + "?";
    case Subtask::SCO: return "What is the superclass of " + subject + "?";
    case Subtask::SPO: return "What is the superproperty of " + subject + "?";
    case Subtask::DM: return "What is the domain constraint of " + subject + "?";
    case Subtask::RG: return "What is the range constraint of " + subject + "?";
    }
    return subject;
}

/// Lettered multiple-choice form of a sample. The correct choice is the
/// first (finest-grained) gold; distractors are drawn uniformly from the
/// non-gold candidates.
inline MultipleChoiceQuestion to_multiple_choice(const MemorizingSample& s, std::size_t n_choices,
                                                 std::uint64_t seed) {
    if (n_choices < 1 || n_choices > 26) throw ValidationError("n_choices must be in [1, 26]");
    if (s.golds.empty()) throw ValidationError("sample " + s.id + " has no gold");
    std::unordered_set<std::string> golds(s.golds.begin(), s.golds.end());
    std::vector<std::string> negatives;
    for (const auto& c : s.candidates)
        if (!golds.count(c)) negatives.push_back(c);
    if (negatives.size() < n_choices - 1)
        throw ValidationError("sample " + s.id + " has only " + std::to_string(negatives.size()) +
                              " non-gold candidates; need " + std::to_string(n_choices - 1));
    Rng rng(seed, fnv1a64(s.id));
    std::vector<std::string> choices{s.golds.front()};
    for (auto i : rng.sample_indices(negatives.size(), n_choices - 1)) choices.push_back(negatives[i]);
    std::vector<std::size_t> perm(choices.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    rng.shuffle(perm);
    MultipleChoiceQuestion q{s.id, s.subtask, s.subject_label, {}, 0, {}};
    for (std::size_t i = 0; i < perm.size(); ++i) {
        q.choices.push_back(choices[perm[i]]);
        if (perm[i] == 0) q.answer_index = i;
    }
    q.prompt = question_stem(s.subtask, s.subject_label);
    for (std::size_t i = 0; i < q.choices.size(); ++i) {
        q.prompt += i == 0 ? " " : ", ";
        q.prompt += std::string("(") + static_cast<char>('a' + i) + ") " + q.choices[i];
    }
    return q;
}

inline json to_json(const MultipleChoiceQuestion& q) {
    return json{{"id", q.id},
                {"subtask", to_string(q.subtask)},
                {"subject_label", q.subject_label},
                {"choices", q.choices},
                {"answer_index", q.answer_index},
                {"answer", std::string(1, q.answer_letter())},
                {"prompt", q.prompt}};
}

inline MultipleChoiceQuestion question_from_json(const json& j) {
    try {
        MultipleChoiceQuestion q;
        q.id = j.at("id").get<std::string>();
        q.subtask = parse_subtask(j.at("subtask").get<std::string>());
        q.subject_label = j.at("subject_label").get<std::string>();
        q.choices = j.at("choices").get<std::vector<std::string>>();
        q.answer_index = j.at("answer_index").get<std::size_t>();
        q.prompt = j.at("prompt").get<std::string>();
        return q;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed question record: ") + e.what());
    }
}

/// Extracts the chosen letter from a free-text answer: the first "(x)" label,
/// or a bare single-letter reply. nullopt when nothing valid is found.
inline std::optional<std::size_t> parse_choice(const std::string& answer, std::size_t n_choices) {
    static const std::regex labelled(R"(\(([a-zA-Z])\))");
    static const std::regex bare(R"(^\s*([a-zA-Z])\s*[\.\):]?\s*$)");
    std::smatch m;
    if (std::regex_search(answer, m, labelled) || std::regex_match(answer, m, bare)) {
        auto idx = static_cast<std::size_t>(std::tolower(static_cast<unsigned char>(m[1].str()[0])) - 'a');
        if (idx < n_choices) return idx;
    }
    return std::nullopt;
}

} // namespace ontoprobe
