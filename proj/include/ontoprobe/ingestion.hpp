#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "ontology.hpp"
#include "util.hpp"

namespace ontoprobe {

/// A property as found in one source vocabulary, before alignment.
struct RawPropertyRecord {
    std::string source_id;
    std::string label;
    std::vector<std::string> superproperties;
    std::vector<std::string> domain_candidates;
    std::vector<std::string> range_candidates;
    std::vector<std::string> equivalents;
    std::optional<std::string> pattern;
    std::optional<std::string> domain_phrase;
    std::optional<std::string> range_phrase;
};

struct PropertyVerdict {
    std::string property;
    std::string status; // kept | support | dropped
    std::vector<std::string> reasons;
};

struct IngestReport {
    std::size_t classes = 0;
    std::size_t properties_total = 0;
    std::size_t properties_kept = 0;
    std::size_t properties_dropped = 0;
    /// Kept properties that have domain, range and a superproperty.
    std::size_t properties_complete = 0;
    std::size_t constraints_cleansed = 0;
    std::size_t patches_applied = 0;
    std::size_t instances_sampled = 0;
    std::vector<PropertyVerdict> verdicts;

    std::string to_tsv() const {
        std::string out;
        auto kv = [&](const char* k, std::size_t v) { out += std::string("#\t") + k + "\t" + std::to_string(v) + "\n"; };
        kv("classes", classes);
        kv("properties_total", properties_total);
        kv("properties_kept", properties_kept);
        kv("properties_dropped", properties_dropped);
        kv("properties_complete", properties_complete);
        kv("constraints_cleansed", constraints_cleansed);
        kv("patches_applied", patches_applied);
        kv("instances_sampled", instances_sampled);
        out += "property\tstatus\treasons\n";
        for (const auto& v : verdicts) {
            std::string reasons;
            for (const auto& r : v.reasons) reasons += (reasons.empty() ? "" : "; ") + r;
            out += v.property + "\t" + v.status + "\t" + reasons + "\n";
        }
        return out;
    }
};

/// Uniform sample of at most `k` members per class, without replacement.
/// Classes with fewer than `k` members keep all of them. Sampled members keep
/// their input order. Each class draws from its own stream keyed by the seed
/// and the class name, so adding a class does not perturb the others.
inline std::map<std::string, std::vector<std::string>>
sample_instances(const std::map<std::string, std::vector<std::string>>& class_members, std::size_t k,
                 std::uint64_t seed) {
    if (k < 1) throw ValidationError("sample size must be >= 1");
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& [cls, members] : class_members) {
        if (members.size() <= k) {
            out[cls] = members;
            continue;
        }
        Rng rng(seed, fnv1a64(cls));
        auto idx = rng.sample_indices(members.size(), k);
        std::sort(idx.begin(), idx.end());
        auto& dst = out[cls];
        for (auto i : idx) dst.push_back(members[i]);
    }
    return out;
}

namespace detail {

struct UnionFind {
    std::vector<std::size_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // smallest index wins so the canonical member is the first in sort order
        if (b < a) std::swap(a, b);
        parent[b] = a;
    }
};

} // namespace detail

struct CleansedProperties {
    std::vector<PropertyNode> properties;
    IngestReport report;
};

/// Aligns records through their explicit equivalence edges, then cleanses
/// domain/range candidates against the class vocabulary.
///
/// Records are processed sorted by source_id; an aligned group takes the id
/// of its first member. A candidate survives if it names a vocabulary class
/// by id or (case-insensitively) by label; among survivors the deepest class
/// wins, ties going to the earlier candidate. Properties missing a domain, a
/// range or a superproperty are flagged in the report but still returned.
inline CleansedProperties align_and_cleanse(std::vector<RawPropertyRecord> records,
                                            const std::vector<ClassNode>& class_vocab) {
    if (class_vocab.empty()) throw ValidationError("class vocabulary is empty");
    auto vocab = OntologyGraph::build(class_vocab, {}, {});
    std::unordered_map<std::string, NodeId> by_name;
    for (const auto& c : class_vocab) by_name.emplace(c.id.str(), c.id);
    for (const auto& c : class_vocab) by_name.emplace(to_lower(c.label), c.id);

    std::sort(records.begin(), records.end(),
              [](const RawPropertyRecord& a, const RawPropertyRecord& b) { return a.source_id < b.source_id; });
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (records[i].source_id.empty()) throw ValidationError("property record with empty source id");
        if (!pos.emplace(records[i].source_id, i).second)
            throw ValidationError("duplicate property record: " + records[i].source_id);
    }
    detail::UnionFind uf(records.size());
    for (std::size_t i = 0; i < records.size(); ++i)
        for (const auto& e : records[i].equivalents)
            if (auto it = pos.find(e); it != pos.end()) uf.unite(i, it->second);

    // group members in sorted order; group order = order of canonical member
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < records.size(); ++i) groups[uf.find(i)].push_back(i);
    auto canonical_of = [&](const std::string& source_id) -> std::optional<std::string> {
        auto it = pos.find(source_id);
        if (it == pos.end()) return std::nullopt;
        return records[uf.find(it->second)].source_id;
    };

    CleansedProperties out;
    auto& rep = out.report;
    rep.classes = class_vocab.size();
    rep.properties_total = groups.size();

    auto pick = [&](const std::vector<std::string>& cands, const char* what, PropertyVerdict& verdict) -> std::optional<NodeId> {
        std::optional<NodeId> best;
        std::size_t best_depth = 0;
        std::set<std::string> seen;
        for (const auto& raw : cands) {
            if (!seen.insert(raw).second) continue;
            auto it = by_name.find(raw);
            if (it == by_name.end()) it = by_name.find(to_lower(raw));
            if (it == by_name.end()) {
                ++rep.constraints_cleansed;
                verdict.reasons.push_back(std::string(what) + " candidate '" + raw + "' not in class vocabulary");
                continue;
            }
            std::size_t d = vocab.class_depth(it->second);
            if (!best || d > best_depth) {
                best = it->second;
                best_depth = d;
            }
        }
        return best;
    };

    for (const auto& [root, members] : groups) {
        PropertyNode node;
        node.id = NodeId{records[root].source_id};
        PropertyVerdict verdict{node.id.str(), "kept", {}};
        std::vector<std::string> domains, ranges;
        for (auto m : members) {
            const auto& r = records[m];
            if (node.label.empty()) node.label = r.label;
            for (const auto& s : r.superproperties) {
                auto canon = canonical_of(s);
                if (!canon) {
                    verdict.reasons.push_back("superproperty '" + s + "' has no record");
                    continue;
                }
                if (*canon == node.id.str()) continue;
                NodeId sid{*canon};
                if (std::find(node.superproperties.begin(), node.superproperties.end(), sid) == node.superproperties.end())
                    node.superproperties.push_back(sid);
            }
            domains.insert(domains.end(), r.domain_candidates.begin(), r.domain_candidates.end());
            ranges.insert(ranges.end(), r.range_candidates.begin(), r.range_candidates.end());
            if (!node.pattern && r.pattern) {
                if (is_valid_pattern(*r.pattern))
                    node.pattern = r.pattern;
                else
                    verdict.reasons.push_back("malformed pattern ignored");
            }
            if (!node.domain_phrase) node.domain_phrase = r.domain_phrase;
            if (!node.range_phrase) node.range_phrase = r.range_phrase;
        }
        if (node.label.empty()) node.label = node.id.str();
        node.domain = pick(domains, "domain", verdict);
        node.range = pick(ranges, "range", verdict);
        if (!node.domain) verdict.reasons.push_back("missing domain");
        if (!node.range) verdict.reasons.push_back("missing range");
        if (node.superproperties.empty()) verdict.reasons.push_back("missing superproperty");
        out.properties.push_back(std::move(node));
        rep.verdicts.push_back(std::move(verdict));
    }
    rep.properties_kept = out.properties.size();
    return out;
}

/// Manual override of a cleansed constraint.
struct ConstraintPatch {
    std::string property;
    std::string slot; // domain | range
    std::string cls;
};

inline std::vector<ConstraintPatch> parse_patch(std::string_view text, const std::string& source = "<patch>") {
    std::vector<ConstraintPatch> out;
    std::size_t line_no = 0;
    for (const auto& raw : split(text, '\n')) {
        ++line_no;
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto f = split(line, '\t');
        if (f.size() != 3) throw ParseError(source, line_no, "expected property<TAB>domain|range<TAB>class");
        if (f[1] != "domain" && f[1] != "range") throw ParseError(source, line_no, "slot must be domain or range");
        out.push_back({std::string(trim(f[0])), f[1], std::string(trim(f[2]))});
    }
    return out;
}

/// Applies patches, then keeps every property with domain, range and a
/// superproperty plus the superproperty closure of those. Everything else is
/// dropped with its reasons. Returns the surviving properties in input order.
inline std::vector<PropertyNode> select_properties(std::vector<PropertyNode> props,
                                                   const std::vector<ConstraintPatch>& patches,
                                                   const std::vector<ClassNode>& class_vocab, IngestReport& rep) {
    std::unordered_map<std::string, std::size_t> pos;
    for (std::size_t i = 0; i < props.size(); ++i) pos.emplace(props[i].id.str(), i);
    std::unordered_set<std::string> vocab;
    for (const auto& c : class_vocab) vocab.insert(c.id.str());
    std::unordered_map<std::string, std::size_t> verdict_pos;
    for (std::size_t i = 0; i < rep.verdicts.size(); ++i) verdict_pos.emplace(rep.verdicts[i].property, i);

    for (const auto& p : patches) {
        auto it = pos.find(p.property);
        if (it == pos.end()) throw ValidationError("patch names unknown property: " + p.property);
        if (!vocab.count(p.cls)) throw ValidationError("patch names class outside vocabulary: " + p.cls);
        auto& node = props[it->second];
        (p.slot == "domain" ? node.domain : node.range) = NodeId{p.cls};
        ++rep.patches_applied;
        if (auto v = verdict_pos.find(p.property); v != verdict_pos.end())
            rep.verdicts[v->second].reasons.push_back("patched " + p.slot + " = " + p.cls);
    }

    std::vector<char> keep(props.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t i = 0; i < props.size(); ++i) {
        const auto& p = props[i];
        if (p.domain && p.range && !p.superproperties.empty()) {
            keep[i] = 2;
            stack.push_back(i);
        }
    }
    while (!stack.empty()) {
        auto i = stack.back();
        stack.pop_back();
        for (const auto& s : props[i].superproperties) {
            auto j = pos.at(s.str());
            if (!keep[j]) {
                keep[j] = 1;
                stack.push_back(j);
            }
        }
    }
    std::vector<PropertyNode> out;
    rep.properties_kept = rep.properties_dropped = rep.properties_complete = 0;
    for (std::size_t i = 0; i < props.size(); ++i) {
        auto& verdict = rep.verdicts[verdict_pos.at(props[i].id.str())];
        if (keep[i]) {
            verdict.status = keep[i] == 2 ? "kept" : "support";
            ++rep.properties_kept;
            if (keep[i] == 2) ++rep.properties_complete;
            out.push_back(std::move(props[i]));
        } else {
            verdict.status = "dropped";
            ++rep.properties_dropped;
        }
    }
    return out;
}

/// Offline dump: class hierarchy, class membership and property records,
/// all read from one triple TSV (graph predicates plus `equivalent`).
struct OntologyDump {
    std::vector<ClassNode> classes;
    std::map<std::string, std::vector<std::string>> class_members;
    std::unordered_map<std::string, std::string> instance_labels;
    std::vector<std::string> instance_order;
    std::unordered_map<std::string, std::vector<std::string>> instance_types;
    std::vector<RawPropertyRecord> properties;
};

inline OntologyDump parse_dump(std::string_view text, const std::string& source = "<dump>") {
    static const std::vector<std::string_view> preds{"type", "subclass_of", "subproperty_of", "domain",
                                                     "range", "label", "pattern", "domain_phrase",
                                                     "range_phrase", "equivalent"};
    auto triples = parse_triple_tsv(text, source, preds);

    std::vector<std::string> class_order, prop_order;
    std::unordered_set<std::string> is_class, is_prop;
    auto mark = [](std::vector<std::string>& order, std::unordered_set<std::string>& set, const std::string& id) {
        if (set.insert(id).second) order.push_back(id);
    };
    for (const auto& t : triples) {
        if (t.predicate == "type" && t.object == kClassDecl) mark(class_order, is_class, t.subject);
        else if (t.predicate == "type" && t.object == kPropertyDecl) mark(prop_order, is_prop, t.subject);
        else if (t.predicate == "subclass_of") {
            mark(class_order, is_class, t.subject);
            mark(class_order, is_class, t.object);
        } else if (t.predicate == "subproperty_of") {
            mark(prop_order, is_prop, t.subject);
            mark(prop_order, is_prop, t.object);
        } else if (t.predicate == "domain" || t.predicate == "range" || t.predicate == "equivalent" ||
                   t.predicate == "pattern" || t.predicate == "domain_phrase" || t.predicate == "range_phrase") {
            mark(prop_order, is_prop, t.subject);
        }
    }
    for (const auto& id : class_order)
        if (is_prop.count(id)) throw ValidationError("dump node '" + id + "' is both a class and a property");

    OntologyDump d;
    std::unordered_map<std::string, std::size_t> cpos, ppos;
    for (const auto& id : class_order) {
        cpos.emplace(id, d.classes.size());
        d.classes.push_back({NodeId{id}, id, {}});
    }
    for (const auto& id : prop_order) {
        ppos.emplace(id, d.properties.size());
        d.properties.push_back({id, {}, {}, {}, {}, {}, {}, {}, {}});
    }
    std::unordered_set<std::string> seen_instance;
    for (const auto& t : triples) {
        const auto& p = t.predicate;
        if (p == "label") {
            if (auto it = cpos.find(t.subject); it != cpos.end()) d.classes[it->second].label = t.object;
            else if (auto jt = ppos.find(t.subject); jt != ppos.end()) d.properties[jt->second].label = t.object;
            else d.instance_labels[t.subject] = t.object;
        } else if (p == "subclass_of") {
            auto& sup = d.classes[cpos.at(t.subject)].superclasses;
            NodeId o{t.object};
            if (std::find(sup.begin(), sup.end(), o) == sup.end()) sup.push_back(o);
        } else if (p == "type" && t.object != kClassDecl && t.object != kPropertyDecl) {
            if (seen_instance.insert(t.subject).second) d.instance_order.push_back(t.subject);
            d.instance_types[t.subject].push_back(t.object);
            if (cpos.count(t.object)) d.class_members[t.object].push_back(t.subject);
        } else if (auto jt = ppos.find(t.subject); jt != ppos.end()) {
            auto& r = d.properties[jt->second];
            if (p == "subproperty_of") r.superproperties.push_back(t.object);
            else if (p == "domain") r.domain_candidates.push_back(t.object);
            else if (p == "range") r.range_candidates.push_back(t.object);
            else if (p == "equivalent") r.equivalents.push_back(t.object);
            else if (p == "pattern") r.pattern = t.object;
            else if (p == "domain_phrase") r.domain_phrase = t.object;
            else if (p == "range_phrase") r.range_phrase = t.object;
        }
    }
    return d;
}

struct IngestResult {
    OntologyGraph graph;
    IngestReport report;
};

/// Full offline construction: sample `k` instances per class, align and
/// cleanse properties, apply patches, select, and assemble a validated graph.
inline IngestResult ingest(const OntologyDump& dump, std::size_t k, std::uint64_t seed,
                           const std::vector<ConstraintPatch>& patches = {}) {
    auto cleansed = align_and_cleanse(dump.properties, dump.classes);
    auto& rep = cleansed.report;
    auto props = select_properties(std::move(cleansed.properties), patches, dump.classes, rep);

    auto sampled = sample_instances(dump.class_members, k, seed);
    std::unordered_set<std::string> chosen;
    for (const auto& [cls, members] : sampled) chosen.insert(members.begin(), members.end());
    std::unordered_set<std::string> vocab;
    for (const auto& c : dump.classes) vocab.insert(c.id.str());

    std::vector<InstanceNode> instances;
    for (const auto& id : dump.instance_order) {
        if (!chosen.count(id)) continue;
        InstanceNode inst{NodeId{id}, id, {}};
        if (auto it = dump.instance_labels.find(id); it != dump.instance_labels.end()) inst.label = it->second;
        for (const auto& t : dump.instance_types.at(id)) {
            NodeId tid{t};
            if (vocab.count(t) && std::find(inst.types.begin(), inst.types.end(), tid) == inst.types.end())
                inst.types.push_back(tid);
        }
        instances.push_back(std::move(inst));
    }
    rep.instances_sampled = instances.size();
    return {OntologyGraph::build(dump.classes, std::move(props), std::move(instances)), std::move(rep)};
}

} // namespace ontoprobe
