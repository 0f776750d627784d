#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "entailment.hpp"
#include "error.hpp"
#include "memorize.hpp"
#include "ontology.hpp"
#include "prompting.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

using PremiseCell = std::pair<PremiseMode, PremiseMode>;

/// All nine (P1 mode, P2 mode) cells, P1 mode major.
inline std::vector<PremiseCell> full_grid() {
    std::vector<PremiseCell> g;
    for (auto a : {PremiseMode::EX, PremiseMode::IM, PremiseMode::NO})
        for (auto b : {PremiseMode::EX, PremiseMode::IM, PremiseMode::NO}) g.emplace_back(a, b);
    return g;
}

inline std::string cell_name(const PremiseCell& c) { return std::string(to_string(c.first)) + "-" + to_string(c.second); }

/// "all" or a comma-separated list such as "EX-EX,NO-NO".
inline std::vector<PremiseCell> parse_grid(std::string_view spec) {
    if (spec == "all") return full_grid();
    std::vector<PremiseCell> out;
    for (const auto& item : split(spec, ',')) {
        auto parts = split(trim(item), '-');
        if (parts.size() != 2) throw ValidationError("grid cell must look like EX-IM: " + item);
        PremiseCell c{parse_premise_mode(parts[0]), parse_premise_mode(parts[1])};
        if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
    }
    if (out.empty()) throw ValidationError("empty premise grid");
    return out;
}

struct Premise {
    std::string id;
    Triple triple;
    PremiseMode mode = PremiseMode::NO;
    std::optional<Sentence> rendered;
};

struct ReasoningInstance {
    std::string id;
    RdfsRule rule = RdfsRule::rdfs2;
    std::size_t p1_index = 0;
    std::size_t pair = 0;
    Premise p1, p2;
    Triple conclusion;
    ClozePrompt hypothesis;
    std::vector<std::string> golds;
    std::vector<std::string> candidates;
    MaskedKind masked_kind = MaskedKind::Class;
    std::vector<std::string> pseudoword_slots;

    PremiseCell cell() const { return {p1.mode, p2.mode}; }
};

/// Memorizing-style probe of a single premise, used to decide whether the
/// model has memorized it.
struct PremiseProbe {
    std::string premise_id;
    RdfsRule rule = RdfsRule::rdfs2;
    std::string position; // P1 | P2
    std::optional<std::size_t> pair;
    ProbeItem item;
};

enum class CandidatePolicy { Full, Neighborhood };

inline const char* to_string(CandidatePolicy p) { return p == CandidatePolicy::Full ? "full_vocabulary" : "neighborhood"; }

inline CandidatePolicy parse_candidate_policy(std::string_view s) {
    if (s == "full" || s == "full_vocabulary") return CandidatePolicy::Full;
    if (s == "neighborhood") return CandidatePolicy::Neighborhood;
    throw ValidationError("candidate policy must be full or neighborhood: " + std::string(s));
}

struct ReasoningOptions {
    std::vector<PremiseCell> grid = full_grid();
    /// Pseudoword pairs per rule.
    std::size_t pairs = 10;
    /// Cap on (P1, pair) combinations per rule; 0 means no cap.
    std::size_t budget = 0;
    TemplateKind template_kind = TemplateKind::Manual;
    std::size_t premise_variant = 1;
    std::size_t hypothesis_variant = 3;
    CandidatePolicy candidates = CandidatePolicy::Full;
    RenderOptions render;
    std::vector<RdfsRule> rules{kRules.begin(), kRules.end()};
};

struct ReasoningSet {
    std::vector<ReasoningInstance> instances;
    std::vector<PremiseProbe> probes;
    std::vector<std::string> warnings;
};

inline bool is_pseudo(std::string_view id) { return id.size() >= 3 && id.front() == '[' && id.back() == ']'; }
inline std::string pseudo_name(std::string_view id) { return std::string(id.substr(1, id.size() - 2)); }

inline bool is_schema_predicate(std::string_view p) {
    return p == "type" || p == "subclass_of" || p == "subproperty_of" || p == "domain" || p == "range";
}

/// Turns triples into premise statements and cloze prompts using the
/// relation templates and property patterns of a graph.
class Verbalizer {
public:
    Verbalizer(const OntologyGraph& g, const TemplateBook& book, const ReasoningOptions& opt)
        : g_(g), book_(book), opt_(opt) {}

    Segment subject(const std::string& id) const {
        return is_pseudo(id) ? Segment::pseudo(pseudo_name(id)) : Segment::text(g_.label_of(NodeId{id}));
    }

    Sentence statement(const Triple& t) const {
        if (is_schema_predicate(t.p)) {
            const auto& tmpl = book_.get(t.p, opt_.template_kind, opt_.premise_variant);
            return render_statement(tmpl, subject(t.s), phrase(t), g_.label_of(NodeId{t.o}), opt_.render);
        }
        auto segs = render_pattern(pattern_of(t.p), subject(t.s), subject(t.o), false);
        if (segs.empty() || segs.back().kind != Segment::Kind::Text || segs.back().value.back() != '.')
            segs.push_back(Segment::text("."));
        segs = normalize(std::move(segs));
        auto& v = segs.back().value;
        if (v.size() >= 2 && v.compare(v.size() - 2, 2, " .") == 0) v.erase(v.size() - 2, 1);
        if (opt_.render.uncased)
            for (auto& s : segs)
                if (s.kind == Segment::Kind::Text) s.value = to_lower(s.value);
        return segs;
    }

    /// Cloze over a triple: the predicate is masked for property-fact
    /// triples, the object otherwise.
    ClozePrompt cloze(const Triple& t) const {
        ClozePrompt p;
        if (is_schema_predicate(t.p)) {
            const auto& tmpl = book_.get(t.p, opt_.template_kind, opt_.hypothesis_variant);
            p.segments = normalize(detail::expand(tmpl, subject(t.s), phrase(t), std::nullopt, 1));
            detail::capitalize_first(p.segments);
        } else {
            p.segments = normalize({subject(t.s), Segment::text(" "), Segment::mask(1), Segment::text(" "),
                                    subject(t.o), Segment::text(" .")});
        }
        if (opt_.render.uncased) detail::lower_all(p.segments);
        return p;
    }

    /// Gold answer for cloze(t).
    std::string answer(const Triple& t) const {
        std::string a = is_schema_predicate(t.p) ? g_.label_of(NodeId{t.o}) : *pattern_region(pattern_of(t.p));
        return opt_.render.uncased ? to_lower(a) : a;
    }

    MaskedKind answer_kind(const Triple& t) const {
        if (!is_schema_predicate(t.p)) return MaskedKind::PropertyPattern;
        return t.p == "subproperty_of" ? MaskedKind::Property : MaskedKind::Class;
    }

    /// Whether statement() and cloze()/answer() are defined for t.
    std::optional<std::string> unsupported(const Triple& t) const {
        if (is_schema_predicate(t.p)) return std::nullopt;
        const auto* p = g_.find_property(NodeId{t.p});
        if (!p) return "unknown property " + t.p;
        if (!p->pattern) return "property " + t.p + " has no pattern";
        if (!pattern_region(*p->pattern)) return "pattern of " + t.p + " is not of the form [X] ... [Y]";
        return std::nullopt;
    }

    std::vector<std::string> vocabulary(MaskedKind k) const {
        std::vector<std::string> out;
        if (k == MaskedKind::Class) out = label_vocabulary(g_, NodeKind::Class);
        else if (k == MaskedKind::Property) out = label_vocabulary(g_, NodeKind::Property);
        else {
            std::unordered_set<std::string> seen;
            for (const auto& p : g_.properties())
                if (p.pattern)
                    if (auto r = pattern_region(*p.pattern); r && seen.insert(*r).second) out.push_back(*r);
        }
        if (opt_.render.uncased) {
            std::vector<std::string> lowered;
            std::unordered_set<std::string> seen;
            for (const auto& c : out)
                if (seen.insert(to_lower(c)).second) lowered.push_back(to_lower(c));
            out = std::move(lowered);
        }
        return out;
    }

private:
    std::string phrase(const Triple& t) const {
        if (t.p == "domain") return domain_phrase(g_.property_at(NodeId{t.s}));
        if (t.p == "range") return range_phrase(g_.property_at(NodeId{t.s}));
        return {};
    }

    const std::string& pattern_of(const std::string& prop) const {
        const auto& p = g_.property_at(NodeId{prop});
        if (!p.pattern) throw ValidationError("property " + prop + " has no pattern");
        return *p.pattern;
    }

    const OntologyGraph& g_;
    const TemplateBook& book_;
    const ReasoningOptions& opt_;
};

namespace detail {

inline std::string pad(std::size_t v, int width) {
    std::string s = std::to_string(v);
    return s.size() >= static_cast<std::size_t>(width) ? s : std::string(width - s.size(), '0') + s;
}

/// Binds the P2 variables not fixed by P1 to pseudowords [X], [Y], ...
inline Triple synthesize_p2(const RuleSpec& rule, const Triple& p1) {
    Bindings b;
    match(rule.p1, p1, b);
    const char* names[] = {"[X]", "[Y]", "[Z]"};
    std::size_t next = 0;
    for (const Term* t : {&rule.p2.s, &rule.p2.p, &rule.p2.o})
        if (t->is_var() && !b.count(t->text)) b.emplace(t->text, names[next++]);
    return subst(rule.p2, b);
}

inline std::vector<std::string> pseudo_slots(const Triple& t) {
    std::vector<std::string> out;
    for (const auto* v : {&t.s, &t.p, &t.o})
        if (is_pseudo(*v) && std::find(out.begin(), out.end(), pseudo_name(*v)) == out.end()) out.push_back(pseudo_name(*v));
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace detail

/// Candidate labels drawn from the hierarchy around the real nodes of P1:
/// the nodes themselves, their ancestors and their descendants.
inline std::vector<std::string> neighborhood_candidates(const OntologyGraph& g, const Verbalizer& v,
                                                        const Triple& p1, MaskedKind kind,
                                                        const std::vector<std::string>& vocab) {
    NodeKind nk = kind == MaskedKind::Class ? NodeKind::Class : NodeKind::Property;
    std::set<NodeId> anchors;
    for (const auto* id : {&p1.s, &p1.o}) {
        NodeId n{*id};
        if ((nk == NodeKind::Class && g.find_class(n)) || (nk == NodeKind::Property && g.find_property(n))) anchors.insert(n);
    }
    std::set<NodeId> hood = anchors;
    auto add_up = [&](const NodeId& n) {
        for (const auto& a : g.ancestors(n, nk)) hood.insert(a);
    };
    for (const auto& a : anchors) add_up(a);
    auto consider = [&](const NodeId& n) {
        auto anc = g.ancestors(n, nk);
        for (const auto& a : anchors)
            if (std::find(anc.begin(), anc.end(), a) != anc.end()) hood.insert(n);
    };
    if (nk == NodeKind::Class)
        for (const auto& c : g.classes()) consider(c.id);
    else
        for (const auto& p : g.properties()) consider(p.id);
    std::unordered_set<std::string> labels;
    for (const auto& n : hood) {
        if (kind == MaskedKind::PropertyPattern) {
            Triple probe{"[X]", n.str(), "[Y]"};
            if (!v.unsupported(probe)) labels.insert(v.answer(probe));
        } else {
            std::string l = g.label_of(n);
            labels.insert(v.vocabulary(kind) == vocab ? (std::find(vocab.begin(), vocab.end(), l) != vocab.end() ? l : to_lower(l)) : l);
        }
    }
    std::vector<std::string> out;
    for (const auto& c : vocab)
        if (labels.count(c)) out.push_back(c);
    return out;
}

/// Reasoning instances for every rule, P1 fact in the graph, pseudoword pair
/// and grid cell, plus one premise probe per distinct premise. Output order:
/// rule, P1 index, pair, grid cell.
inline ReasoningSet generate_reasoning(const OntologyGraph& g, std::uint64_t seed, const ReasoningOptions& opt = {},
                                       const TemplateBook& book = TemplateBook::builtin()) {
    if (opt.grid.empty()) throw ValidationError("empty premise grid");
    if (opt.pairs < 1) throw ValidationError("need at least one pseudoword pair per rule");
    Verbalizer v(g, book, opt);
    const auto facts = graph_triples(g);
    ReasoningSet out;

    for (auto rule_id : opt.rules) {
        const auto& rule = rule_spec(rule_id);
        const std::string rname = to_string(rule_id);
        std::vector<Triple> p1s;
        for (const auto& t : facts) {
            Bindings b;
            if (!detail::match(rule.p1, t, b)) continue;
            Triple p2 = detail::synthesize_p2(rule, t);
            Triple concl = apply_rule(rule, t, p2);
            std::optional<std::string> why = v.unsupported(p2);
            if (!why) why = v.unsupported(concl);
            if (why) {
                out.warnings.push_back(rname + ": skipping P1 " + t.key() + ": " + *why);
                continue;
            }
            p1s.push_back(t);
        }
        if (p1s.empty()) {
            out.warnings.push_back(rname + ": no valid premise pairs");
            continue;
        }
        std::vector<std::pair<std::size_t, std::size_t>> combos;
        for (std::size_t i = 0; i < p1s.size(); ++i)
            for (std::size_t k = 0; k < opt.pairs; ++k) combos.emplace_back(i, k);
        if (opt.budget && combos.size() > opt.budget) {
            Rng rng(seed, static_cast<std::uint64_t>(rule_id) + 101);
            auto keep = rng.sample_indices(combos.size(), opt.budget);
            std::sort(keep.begin(), keep.end());
            std::vector<std::pair<std::size_t, std::size_t>> picked;
            for (auto i : keep) picked.push_back(combos[i]);
            combos = std::move(picked);
            out.warnings.push_back(rname + ": premise pairs capped at " + std::to_string(opt.budget));
        }

        std::set<std::string> probed;
        for (const auto& [i, k] : combos) {
            const Triple& p1 = p1s[i];
            const Triple p2 = detail::synthesize_p2(rule, p1);
            const Triple concl = apply_rule(rule, p1, p2);
            const std::string gold_id = masked_constituent(rule, p1, p2);
            if (p1.s != gold_id && p1.p != gold_id && p1.o != gold_id)
                throw std::logic_error(rname + ": masked constituent missing from P1");
            const auto kind = v.answer_kind(concl);
            const auto vocab = v.vocabulary(kind);
            auto candidates = opt.candidates == CandidatePolicy::Full ? vocab : neighborhood_candidates(g, v, p1, kind, vocab);
            const std::string gold = v.answer(concl);
            if (std::find(candidates.begin(), candidates.end(), gold) == candidates.end())
                throw std::logic_error(rname + ": gold '" + gold + "' not among candidates");

            const std::string p1_id = rname + "/P1/" + p1.key();
            const std::string p2_id = rname + "/P2/" + detail::pad(k, 2) + "/" + p2.key();
            const Sentence p1_text = v.statement(p1);
            const Sentence p2_text = v.statement(p2);
            const ClozePrompt hyp = v.cloze(concl);
            auto slots = detail::pseudo_slots(p2);

            for (const auto& cell : opt.grid) {
                ReasoningInstance inst;
                inst.id = rname + "/" + detail::pad(i, 4) + "/" + detail::pad(k, 2) + "/" + cell_name(cell);
                inst.rule = rule_id;
                inst.p1_index = i;
                inst.pair = k;
                inst.p1 = {p1_id, p1, cell.first, cell.first == PremiseMode::EX ? std::optional(p1_text) : std::nullopt};
                inst.p2 = {p2_id, p2, cell.second, cell.second == PremiseMode::EX ? std::optional(p2_text) : std::nullopt};
                inst.conclusion = concl;
                inst.hypothesis = hyp;
                inst.golds = {gold};
                inst.candidates = candidates;
                inst.masked_kind = kind;
                inst.pseudoword_slots = slots;
                out.instances.push_back(std::move(inst));
            }

            auto add_probe = [&](const std::string& pid, const Triple& t, const char* pos, std::optional<std::size_t> pair) {
                if (!probed.insert(pid).second) return;
                auto pk = v.answer_kind(t);
                ProbeItem item{pid, v.cloze(t), {v.answer(t)}, v.vocabulary(pk), rname, pair};
                out.probes.push_back({pid, rule_id, pos, pair, std::move(item)});
            };
            add_probe(p1_id, p1, "P1", std::nullopt);
            add_probe(p2_id, p2, "P2", k);
        }
    }
    return out;
}

inline json to_json(const Premise& p) {
    json j{{"id", p.id}, {"triple", to_json(p.triple)}, {"mode", to_string(p.mode)}};
    if (p.rendered) {
        j["segments"] = to_json(*p.rendered);
        j["text"] = segments_text(*p.rendered);
    }
    return j;
}

inline Premise premise_from_json(const json& j) {
    Premise p{j.at("id").get<std::string>(), triple_from_json(j.at("triple")), parse_premise_mode(j.at("mode").get<std::string>()), std::nullopt};
    if (j.contains("segments")) p.rendered = segments_from_json(j["segments"]);
    if ((p.mode == PremiseMode::EX) != p.rendered.has_value())
        throw ValidationError("premise " + p.id + ": text must be present iff mode is EX");
    return p;
}

/// Reading order puts the instance-level premise (P2) before the schema
/// premise (P1): "[X] is a person. Person is an animal. Therefore, ..."
inline ClozePrompt reasoning_prompt(const ReasoningInstance& inst, const Conjunction& conj, const RenderOptions& opt = {}) {
    return render_reasoning({{inst.p2.mode, inst.p2.rendered}, {inst.p1.mode, inst.p1.rendered}}, inst.hypothesis, conj, 1, opt);
}

inline json to_json(const ReasoningInstance& r, const Conjunction& conj = Conjunction::manual()) {
    return json{{"id", r.id},
                {"rule", to_string(r.rule)},
                {"p1_index", r.p1_index},
                {"pair", r.pair},
                {"p1", to_json(r.p1)},
                {"p2", to_json(r.p2)},
                {"conclusion", to_json(r.conclusion)},
                {"hypothesis", to_json(r.hypothesis.segments)},
                {"golds", r.golds},
                {"candidates", r.candidates},
                {"masked_kind", to_string(r.masked_kind)},
                {"pseudoword_slots", r.pseudoword_slots},
                {"prompt", reasoning_prompt(r, conj).text()}};
}

inline ReasoningInstance reasoning_from_json(const json& j) {
    try {
        ReasoningInstance r;
        r.id = j.at("id").get<std::string>();
        r.rule = parse_rule(j.at("rule").get<std::string>());
        r.p1_index = j.at("p1_index").get<std::size_t>();
        r.pair = j.at("pair").get<std::size_t>();
        r.p1 = premise_from_json(j.at("p1"));
        r.p2 = premise_from_json(j.at("p2"));
        r.conclusion = triple_from_json(j.at("conclusion"));
        r.hypothesis.segments = segments_from_json(j.at("hypothesis"));
        check_cloze(r.hypothesis);
        r.golds = j.at("golds").get<std::vector<std::string>>();
        r.candidates = j.at("candidates").get<std::vector<std::string>>();
        auto mk = j.at("masked_kind").get<std::string>();
        r.masked_kind = mk == "class" ? MaskedKind::Class : mk == "property" ? MaskedKind::Property : MaskedKind::PropertyPattern;
        r.pseudoword_slots = j.at("pseudoword_slots").get<std::vector<std::string>>();
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed reasoning record: ") + e.what());
    }
}

inline ProbeItem probe_item(const ReasoningInstance& r, const Conjunction& conj, const RenderOptions& opt = {}) {
    return {r.id, reasoning_prompt(r, conj, opt), r.golds, r.candidates, to_string(r.rule), r.pair};
}

inline json to_json(const PremiseProbe& p) {
    json j = to_json(p.item);
    j["position"] = p.position;
    return j;
}

} // namespace ontoprobe
