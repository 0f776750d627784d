#pragma once

#include <array>
#include <algorithm>
#include <compare>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "error.hpp"
#include "ontology.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

struct Triple {
    std::string s, p, o;

    friend auto operator<=>(const Triple&, const Triple&) = default;
    friend bool operator==(const Triple&, const Triple&) = default;

    std::string key() const { return s + "|" + p + "|" + o; }
};

inline json to_json(const Triple& t) { return json::array({t.s, t.p, t.o}); }
inline Triple triple_from_json(const json& j) {
    if (!j.is_array() || j.size() != 3) throw ValidationError("triple must be a 3-element array");
    return {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}

enum class RdfsRule { rdfs2, rdfs3, rdfs5, rdfs7, rdfs9, rdfs11 };

inline constexpr std::array<RdfsRule, 6> kRules{RdfsRule::rdfs2, RdfsRule::rdfs3, RdfsRule::rdfs5,
                                                RdfsRule::rdfs7, RdfsRule::rdfs9, RdfsRule::rdfs11};

inline const char* to_string(RdfsRule r) {
    switch (r) {
    case RdfsRule::rdfs2: return "rdfs2";
    case RdfsRule::rdfs3: return "rdfs3";
    case RdfsRule::rdfs5: return "rdfs5";
    case RdfsRule::rdfs7: return "rdfs7";
    case RdfsRule::rdfs9: return "rdfs9";
    case RdfsRule::rdfs11: return "rdfs11";
    }
    return "?";
}

inline RdfsRule parse_rule(std::string_view s) {
    for (auto r : kRules)
        if (s == to_string(r)) return r;
    throw ValidationError("unknown rule: " + std::string(s));
}

/// Triple term: a constant or a `?name` variable.
struct Term {
    std::string text;
    bool is_var() const { return !text.empty() && text.front() == '?'; }
};

struct TriplePattern {
    Term s, p, o;

    static TriplePattern parse(std::string_view spec) {
        auto f = split(spec, ' ');
        if (f.size() != 3) throw ValidationError("triple pattern needs 3 terms: " + std::string(spec));
        return {{f[0]}, {f[1]}, {f[2]}};
    }
};

enum class MaskedKind { Class, Property, PropertyPattern };

inline const char* to_string(MaskedKind k) {
    switch (k) {
    case MaskedKind::Class: return "class";
    case MaskedKind::Property: return "property";
    case MaskedKind::PropertyPattern: return "property_pattern";
    }
    return "?";
}

/// One entailment rule as data: two premise shapes, a conclusion shape and
/// the conclusion variable that gets masked. P1 is the premise that holds
/// the masked constituent.
struct RuleSpec {
    std::string name;
    TriplePattern p1, p2, conclusion;
    std::string masked_var;
    MaskedKind masked_kind;
};

inline const std::vector<RuleSpec>& default_rules() {
    static const std::vector<RuleSpec> rules = [] {
        auto r = [](const char* name, const char* p1, const char* p2, const char* c, const char* var, MaskedKind k) {
            return RuleSpec{name, TriplePattern::parse(p1), TriplePattern::parse(p2), TriplePattern::parse(c), var, k};
        };
        return std::vector<RuleSpec>{
            r("rdfs2", "?a domain ?x", "?u ?a ?v", "?u type ?x", "?x", MaskedKind::Class),
            r("rdfs3", "?a range ?x", "?u ?a ?v", "?v type ?x", "?x", MaskedKind::Class),
            r("rdfs5", "?b subproperty_of ?c", "?a subproperty_of ?b", "?a subproperty_of ?c", "?c", MaskedKind::Property),
            r("rdfs7", "?a subproperty_of ?b", "?u ?a ?v", "?u ?b ?v", "?b", MaskedKind::PropertyPattern),
            r("rdfs9", "?x subclass_of ?y", "?u type ?x", "?u type ?y", "?y", MaskedKind::Class),
            r("rdfs11", "?y subclass_of ?z", "?x subclass_of ?y", "?x subclass_of ?z", "?z", MaskedKind::Class),
        };
    }();
    return rules;
}

inline const RuleSpec& rule_spec(RdfsRule r) { return default_rules()[static_cast<std::size_t>(r)]; }

using Bindings = std::map<std::string, std::string>;

namespace detail {

inline bool bind_term(const Term& t, const std::string& value, Bindings& b) {
    if (!t.is_var()) return t.text == value;
    auto [it, inserted] = b.emplace(t.text, value);
    return inserted || it->second == value;
}

inline bool match(const TriplePattern& pat, const Triple& t, Bindings& b) {
    return bind_term(pat.s, t.s, b) && bind_term(pat.p, t.p, b) && bind_term(pat.o, t.o, b);
}

inline std::string subst(const Term& t, const Bindings& b) {
    if (!t.is_var()) return t.text;
    auto it = b.find(t.text);
    if (it == b.end()) throw ValidationError("unbound variable " + t.text);
    return it->second;
}

inline Triple subst(const TriplePattern& p, const Bindings& b) { return {subst(p.s, b), subst(p.p, b), subst(p.o, b)}; }

} // namespace detail

/// Conclusion of `rule` from its two premises. Throws ValidationError on a
/// premise that does not fit its shape, or premises that disagree on a
/// shared variable.
inline Triple apply_rule(const RuleSpec& rule, const Triple& p1, const Triple& p2) {
    Bindings b1, b2;
    if (!detail::match(rule.p1, p1, b1))
        throw ValidationError(rule.name + ": shape mismatch, P1 " + p1.key() + " does not fit its pattern");
    if (!detail::match(rule.p2, p2, b2))
        throw ValidationError(rule.name + ": shape mismatch, P2 " + p2.key() + " does not fit its pattern");
    for (const auto& [var, value] : b2) {
        auto [it, inserted] = b1.emplace(var, value);
        if (!inserted && it->second != value)
            throw ValidationError(rule.name + ": join mismatch on " + var + " (" + it->second + " vs " + value + ")");
    }
    return detail::subst(rule.conclusion, b1);
}

inline Triple apply_rule(RdfsRule rule, const Triple& p1, const Triple& p2) { return apply_rule(rule_spec(rule), p1, p2); }

/// Value the rule masks in its conclusion, given the premises.
inline std::string masked_constituent(const RuleSpec& rule, const Triple& p1, const Triple& p2) {
    Bindings b;
    if (!detail::match(rule.p1, p1, b) || !detail::match(rule.p2, p2, b))
        throw ValidationError(rule.name + ": premises do not fit the rule");
    return b.at(rule.masked_var);
}

/// Schema and type edges of a graph as triples, in declaration order.
inline std::vector<Triple> graph_triples(const OntologyGraph& g) {
    std::vector<Triple> out;
    for (const auto& c : g.classes())
        for (const auto& s : c.superclasses) out.push_back({c.id.str(), "subclass_of", s.str()});
    for (const auto& p : g.properties()) {
        for (const auto& s : p.superproperties) out.push_back({p.id.str(), "subproperty_of", s.str()});
        if (p.domain) out.push_back({p.id.str(), "domain", p.domain->str()});
        if (p.range) out.push_back({p.id.str(), "range", p.range->str()});
    }
    for (const auto& i : g.instances())
        for (const auto& t : i.types) out.push_back({i.id.str(), "type", t.str()});
    return out;
}

struct Provenance {
    std::string rule;
    Triple p1, p2;
};

struct Closure {
    std::vector<Triple> base;
    /// Derived triples only (not in base), each with its first derivation.
    std::map<Triple, Provenance> derived;

    bool contains(const Triple& t) const {
        return derived.count(t) || std::find(base.begin(), base.end(), t) != base.end();
    }
    std::set<Triple> all() const {
        std::set<Triple> out(base.begin(), base.end());
        for (const auto& [t, _] : derived) out.insert(t);
        return out;
    }
};

namespace detail {

class TripleIndex {
public:
    bool insert(const Triple& t) {
        if (!set_.insert(t).second) return false;
        std::size_t i = store_.size();
        store_.push_back(t);
        by_p_[t.p].push_back(i);
        by_ps_[t.p + '\x1f' + t.s].push_back(i);
        by_po_[t.p + '\x1f' + t.o].push_back(i);
        return true;
    }
    bool contains(const Triple& t) const { return set_.count(t) > 0; }

    /// Indices of stored triples that may match `pat` under `b`.
    std::vector<std::size_t> candidates(const TriplePattern& pat, const Bindings& b) const {
        auto resolve = [&](const Term& t) -> std::optional<std::string> {
            if (!t.is_var()) return t.text;
            if (auto it = b.find(t.text); it != b.end()) return it->second;
            return std::nullopt;
        };
        auto s = resolve(pat.s), p = resolve(pat.p), o = resolve(pat.o);
        auto lookup = [](const auto& m, const std::string& k) {
            auto it = m.find(k);
            return it == m.end() ? std::vector<std::size_t>{} : it->second;
        };
        if (p && s) return lookup(by_ps_, *p + '\x1f' + *s);
        if (p && o) return lookup(by_po_, *p + '\x1f' + *o);
        if (p) return lookup(by_p_, *p);
        std::vector<std::size_t> all(store_.size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        return all;
    }
    const Triple& at(std::size_t i) const { return store_[i]; }

private:
    std::vector<Triple> store_;
    std::set<Triple> set_;
    std::unordered_map<std::string, std::vector<std::size_t>> by_p_, by_ps_, by_po_;
};

} // namespace detail

/// Least fixpoint of `rules` over `base` (semi-naive forward chaining).
/// Terminates because rules only recombine existing terms.
inline Closure materialize_closure(const std::vector<Triple>& base,
                                   std::span<const RuleSpec> rules = default_rules()) {
    Closure c;
    detail::TripleIndex idx;
    std::vector<Triple> delta;
    for (const auto& t : base)
        if (idx.insert(t)) {
            c.base.push_back(t);
            delta.push_back(t);
        }
    while (!delta.empty()) {
        std::vector<Triple> next;
        for (const auto& t : delta) {
            std::vector<std::pair<Triple, Provenance>> found;
            for (const auto& rule : rules) {
                Bindings b;
                if (detail::match(rule.p1, t, b)) {
                    for (auto i : idx.candidates(rule.p2, b)) {
                        Bindings b2 = b;
                        if (detail::match(rule.p2, idx.at(i), b2))
                            found.push_back({detail::subst(rule.conclusion, b2), {rule.name, t, idx.at(i)}});
                    }
                }
                b.clear();
                if (detail::match(rule.p2, t, b)) {
                    for (auto i : idx.candidates(rule.p1, b)) {
                        Bindings b2 = b;
                        if (detail::match(rule.p1, idx.at(i), b2))
                            found.push_back({detail::subst(rule.conclusion, b2), {rule.name, idx.at(i), t}});
                    }
                }
            }
            for (auto& [triple, prov] : found) {
                if (idx.insert(triple)) {
                    c.derived.emplace(triple, std::move(prov));
                    next.push_back(triple);
                }
            }
        }
        delta = std::move(next);
    }
    return c;
}

inline Closure materialize_closure(const OntologyGraph& g) { return materialize_closure(graph_triples(g)); }

/// Provenance records: one line per derived triple.
inline RecordFile provenance_records(const Closure& c) {
    RecordFile f;
    f.header = {{"kind", "provenance"}, {"base", c.base.size()}, {"derived", c.derived.size()}};
    for (const auto& [t, prov] : c.derived)
        f.records.push_back({{"triple", to_json(t)}, {"rule", prov.rule}, {"p1", to_json(prov.p1)}, {"p2", to_json(prov.p2)}});
    return f;
}

} // namespace ontoprobe
