#pragma once

#include <algorithm>
#include <compare>
#include <cstddef>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "error.hpp"
#include "util.hpp"

namespace ontoprobe {

/// Opaque node identifier (IRI suffix or curated id). Ids are join keys;
/// labels are what gets rendered.
struct NodeId {
    std::string value;

    NodeId() = default;
    explicit NodeId(std::string v) : value(std::move(v)) {}

    bool empty() const noexcept { return value.empty(); }
    const std::string& str() const noexcept { return value; }

    friend auto operator<=>(const NodeId&, const NodeId&) = default;
    friend bool operator==(const NodeId&, const NodeId&) = default;
};

} // namespace ontoprobe

template <>
struct std::hash<ontoprobe::NodeId> {
    std::size_t operator()(const ontoprobe::NodeId& id) const noexcept {
        return std::hash<std::string>{}(id.value);
    }
};

namespace ontoprobe {

enum class NodeKind { Class, Property, Instance };

inline const char* to_string(NodeKind k) {
    switch (k) {
    case NodeKind::Class: return "class";
    case NodeKind::Property: return "property";
    case NodeKind::Instance: return "instance";
    }
    return "?";
}

struct ClassNode {
    NodeId id;
    std::string label;
    std::vector<NodeId> superclasses;

    friend bool operator==(const ClassNode&, const ClassNode&) = default;
};

struct PropertyNode {
    NodeId id;
    std::string label;
    std::vector<NodeId> superproperties;
    std::optional<NodeId> domain;
    std::optional<NodeId> range;
    /// Sentence pattern with one [X] (subject) and one [Y] (object) slot.
    std::optional<std::string> pattern;
    /// Verb phrases used by the domain/range cloze templates
    /// ("One has to be a particular [MASK] to <phrase> ."). When absent the
    /// templates fall back to "have <label>" and "be <label>".
    std::optional<std::string> domain_phrase;
    std::optional<std::string> range_phrase;

    friend bool operator==(const PropertyNode&, const PropertyNode&) = default;
};

struct InstanceNode {
    NodeId id;
    std::string label;
    std::vector<NodeId> types;

    friend bool operator==(const InstanceNode&, const InstanceNode&) = default;
};

inline constexpr std::string_view kClassDecl = "rdfs:Class";
inline constexpr std::string_view kPropertyDecl = "rdf:Property";

inline bool is_valid_pattern(std::string_view p) {
    auto count = [&](std::string_view needle) {
        std::size_t n = 0;
        for (auto pos = p.find(needle); pos != std::string_view::npos; pos = p.find(needle, pos + 1)) ++n;
        return n;
    };
    return count("[X]") == 1 && count("[Y]") == 1;
}

/// Immutable, validated ontology. Node collections keep declaration order.
class OntologyGraph {
public:
    OntologyGraph() = default;

    /// Validates referential integrity and acyclicity; throws ValidationError.
    static OntologyGraph build(std::vector<ClassNode> classes, std::vector<PropertyNode> properties,
                               std::vector<InstanceNode> instances) {
        OntologyGraph g;
        g.classes_ = std::move(classes);
        g.properties_ = std::move(properties);
        g.instances_ = std::move(instances);
        g.index_and_validate();
        return g;
    }

    const std::vector<ClassNode>& classes() const noexcept { return classes_; }
    const std::vector<PropertyNode>& properties() const noexcept { return properties_; }
    const std::vector<InstanceNode>& instances() const noexcept { return instances_; }

    const ClassNode* find_class(const NodeId& id) const {
        auto it = class_index_.find(id);
        return it == class_index_.end() ? nullptr : &classes_[it->second];
    }
    const PropertyNode* find_property(const NodeId& id) const {
        auto it = property_index_.find(id);
        return it == property_index_.end() ? nullptr : &properties_[it->second];
    }
    const InstanceNode* find_instance(const NodeId& id) const {
        auto it = instance_index_.find(id);
        return it == instance_index_.end() ? nullptr : &instances_[it->second];
    }

    const ClassNode& class_at(const NodeId& id) const {
        if (auto* c = find_class(id)) return *c;
        throw ValidationError("unknown class: " + id.str());
    }
    const PropertyNode& property_at(const NodeId& id) const {
        if (auto* p = find_property(id)) return *p;
        throw ValidationError("unknown property: " + id.str());
    }
    const InstanceNode& instance_at(const NodeId& id) const {
        if (auto* i = find_instance(id)) return *i;
        throw ValidationError("unknown instance: " + id.str());
    }

    /// Label of a class, property or instance.
    const std::string& label_of(const NodeId& id) const {
        if (auto* c = find_class(id)) return c->label;
        if (auto* p = find_property(id)) return p->label;
        if (auto* i = find_instance(id)) return i->label;
        throw ValidationError("unknown node: " + id.str());
    }

    /// Transitive superclasses / superproperties, nearest first. BFS layer
    /// order; within a layer, the order edges were declared in.
    std::vector<NodeId> ancestors(const NodeId& id, NodeKind kind) const {
        auto parents = [&](const NodeId& n) -> const std::vector<NodeId>& {
            return kind == NodeKind::Class ? class_at(n).superclasses : property_at(n).superproperties;
        };
        if (kind == NodeKind::Instance) throw ValidationError("ancestors() takes a class or property");
        const auto& direct = parents(id);
        std::vector<NodeId> out;
        std::unordered_set<NodeId> seen{id};
        std::deque<NodeId> queue(direct.begin(), direct.end());
        while (!queue.empty()) {
            NodeId n = std::move(queue.front());
            queue.pop_front();
            if (!seen.insert(n).second) continue;
            out.push_back(n);
            for (const auto& p : parents(n)) queue.push_back(p);
        }
        return out;
    }

    /// Types of an instance: asserted types, then (if transitive) their
    /// superclasses, nearest first.
    std::vector<NodeId> types_of(const NodeId& instance, bool transitive = true) const {
        const auto& inst = instance_at(instance);
        std::vector<NodeId> out;
        std::unordered_set<NodeId> seen;
        std::deque<NodeId> queue(inst.types.begin(), inst.types.end());
        while (!queue.empty()) {
            NodeId n = std::move(queue.front());
            queue.pop_front();
            if (!seen.insert(n).second) continue;
            out.push_back(n);
            if (transitive)
                for (const auto& p : class_at(n).superclasses) queue.push_back(p);
        }
        return out;
    }

    std::optional<NodeId> domain_of(const NodeId& prop) const { return property_at(prop).domain; }
    std::optional<NodeId> range_of(const NodeId& prop) const { return property_at(prop).range; }

    /// Length of the longest superclass chain above `id` (roots have depth 0).
    std::size_t class_depth(const NodeId& id) const {
        std::unordered_map<NodeId, std::size_t> memo;
        return depth_impl(id, memo);
    }

    friend bool operator==(const OntologyGraph& a, const OntologyGraph& b) {
        return a.classes_ == b.classes_ && a.properties_ == b.properties_ && a.instances_ == b.instances_;
    }

private:
    std::size_t depth_impl(const NodeId& id, std::unordered_map<NodeId, std::size_t>& memo) const {
        if (auto it = memo.find(id); it != memo.end()) return it->second;
        std::size_t d = 0;
        for (const auto& p : class_at(id).superclasses) d = std::max(d, depth_impl(p, memo) + 1);
        memo.emplace(id, d);
        return d;
    }

    void index_and_validate() {
        auto check_id = [](const NodeId& id, const char* what) {
            if (id.empty()) throw ValidationError(std::string("empty ") + what + " id");
        };
        for (std::size_t i = 0; i < classes_.size(); ++i) {
            check_id(classes_[i].id, "class");
            if (!class_index_.emplace(classes_[i].id, i).second)
                throw ValidationError("duplicate class id: " + classes_[i].id.str());
        }
        for (std::size_t i = 0; i < properties_.size(); ++i) {
            check_id(properties_[i].id, "property");
            if (!property_index_.emplace(properties_[i].id, i).second)
                throw ValidationError("duplicate property id: " + properties_[i].id.str());
        }
        for (std::size_t i = 0; i < instances_.size(); ++i) {
            check_id(instances_[i].id, "instance");
            if (!instance_index_.emplace(instances_[i].id, i).second)
                throw ValidationError("duplicate instance id: " + instances_[i].id.str());
        }
        auto no_dups = [](const std::vector<NodeId>& v, const NodeId& owner) {
            std::unordered_set<NodeId> s;
            for (const auto& x : v)
                if (!s.insert(x).second)
                    throw ValidationError("duplicate edge " + owner.str() + " -> " + x.str());
        };
        for (const auto& c : classes_) {
            if (c.label.empty()) throw ValidationError("class without label: " + c.id.str());
            no_dups(c.superclasses, c.id);
            for (const auto& s : c.superclasses)
                if (!find_class(s))
                    throw ValidationError("dangling reference: " + c.id.str() + " subclass_of " + s.str());
        }
        for (const auto& p : properties_) {
            if (p.label.empty()) throw ValidationError("property without label: " + p.id.str());
            no_dups(p.superproperties, p.id);
            for (const auto& s : p.superproperties)
                if (!find_property(s))
                    throw ValidationError("dangling reference: " + p.id.str() + " subproperty_of " + s.str());
            if (p.domain && !find_class(*p.domain))
                throw ValidationError("dangling reference: " + p.id.str() + " domain " + p.domain->str());
            if (p.range && !find_class(*p.range))
                throw ValidationError("dangling reference: " + p.id.str() + " range " + p.range->str());
            if (p.pattern && !is_valid_pattern(*p.pattern))
                throw ValidationError("pattern of " + p.id.str() + " must contain exactly one [X] and one [Y]");
        }
        for (const auto& i : instances_) {
            if (i.label.empty()) throw ValidationError("instance without label: " + i.id.str());
            if (i.types.empty()) throw ValidationError("instance without type: " + i.id.str());
            no_dups(i.types, i.id);
            for (const auto& t : i.types)
                if (!find_class(t))
                    throw ValidationError("dangling reference: " + i.id.str() + " type " + t.str());
        }
        detect_cycles(NodeKind::Class);
        detect_cycles(NodeKind::Property);
    }

    void detect_cycles(NodeKind kind) {
        std::vector<const NodeId*> order;
        if (kind == NodeKind::Class)
            for (const auto& c : classes_) order.push_back(&c.id);
        else
            for (const auto& p : properties_) order.push_back(&p.id);
        auto parents = [&](const NodeId& n) -> const std::vector<NodeId>& {
            return kind == NodeKind::Class ? class_at(n).superclasses : property_at(n).superproperties;
        };
        // 0 = unvisited, 1 = on stack, 2 = done
        std::unordered_map<NodeId, int> color;
        std::vector<NodeId> stack;
        std::function<void(const NodeId&)> visit = [&](const NodeId& n) {
            color[n] = 1;
            stack.push_back(n);
            for (const auto& p : parents(n)) {
                int c = color[p];
                if (c == 1) {
                    auto start = std::find(stack.begin(), stack.end(), p);
                    std::string msg = "cycle detected:";
                    for (auto it = start; it != stack.end(); ++it) msg += " " + it->str() + " ->";
                    msg += " " + p.str();
                    throw ValidationError(msg);
                }
                if (c == 0) visit(p);
            }
            stack.pop_back();
            color[n] = 2;
        };
        for (const auto* id : order)
            if (color[*id] == 0) visit(*id);
    }

    std::vector<ClassNode> classes_;
    std::vector<PropertyNode> properties_;
    std::vector<InstanceNode> instances_;
    std::unordered_map<NodeId, std::size_t> class_index_;
    std::unordered_map<NodeId, std::size_t> property_index_;
    std::unordered_map<NodeId, std::size_t> instance_index_;
};

/// One `subject<TAB>predicate<TAB>object` line of a triple TSV file.
struct TsvTriple {
    std::string subject;
    std::string predicate;
    std::string object;
    std::size_t line = 0;
};

/// Splits a triple TSV document. Blank lines and lines starting with `#`
/// are skipped. The predicate must be one of `allowed`.
inline std::vector<TsvTriple> parse_triple_tsv(std::string_view text, const std::string& source,
                                                const std::vector<std::string_view>& allowed) {
    std::vector<TsvTriple> out;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        auto end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty() || trim(line).front() == '#') {
            if (end == text.size()) break;
            continue;
        }
        auto fields = split(line, '\t');
        if (fields.size() != 3) throw ParseError(source, line_no, "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
        for (auto& f : fields) f = std::string(trim(f));
        if (fields[0].empty() || fields[1].empty() || fields[2].empty())
            throw ParseError(source, line_no, "empty field");
        if (std::find(allowed.begin(), allowed.end(), fields[1]) == allowed.end())
            throw ParseError(source, line_no, "unknown predicate '" + fields[1] + "'");
        out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2]), line_no});
        if (end == text.size()) break;
    }
    return out;
}

namespace detail {

struct GraphAssembler {
    struct Entry {
        std::optional<NodeKind> kind;
        std::size_t first_line = 0;
        std::optional<std::string> label;
        std::vector<NodeId> parents; // superclasses, superproperties or types
        std::optional<NodeId> domain, range;
        std::optional<std::string> pattern, domain_phrase, range_phrase;
    };

    std::string source;
    std::vector<NodeId> order;
    std::unordered_map<NodeId, Entry> nodes;

    Entry& touch(const std::string& id, std::size_t line) {
        NodeId nid{id};
        auto [it, inserted] = nodes.try_emplace(nid);
        if (inserted) {
            order.push_back(nid);
            it->second.first_line = line;
        }
        return it->second;
    }

    Entry& claim(const std::string& id, NodeKind kind, std::size_t line) {
        auto& e = touch(id, line);
        if (e.kind && *e.kind != kind)
            throw ParseError(source, line, "node '" + id + "' used as both " + to_string(*e.kind) + " and " + to_string(kind));
        e.kind = kind;
        return e;
    }

    static void set_once(std::optional<std::string>& slot, const std::string& value, const TsvTriple& t,
                         const std::string& source) {
        if (slot && *slot != value) throw ParseError(source, t.line, "conflicting " + t.predicate + " for '" + t.subject + "'");
        slot = value;
    }
    static void set_once(std::optional<NodeId>& slot, const std::string& value, const TsvTriple& t,
                         const std::string& source) {
        if (slot && slot->value != value) throw ParseError(source, t.line, "conflicting " + t.predicate + " for '" + t.subject + "'");
        slot = NodeId{value};
    }
    static void add_edge(std::vector<NodeId>& edges, const std::string& target) {
        NodeId n{target};
        if (std::find(edges.begin(), edges.end(), n) == edges.end()) edges.push_back(std::move(n));
    }

    void apply(const TsvTriple& t) {
        const auto& p = t.predicate;
        if (p == "type") {
            if (t.object == kClassDecl) {
                claim(t.subject, NodeKind::Class, t.line);
            } else if (t.object == kPropertyDecl) {
                claim(t.subject, NodeKind::Property, t.line);
            } else {
                auto& e = claim(t.subject, NodeKind::Instance, t.line);
                claim(t.object, NodeKind::Class, t.line);
                add_edge(e.parents, t.object);
            }
        } else if (p == "subclass_of") {
            auto& e = claim(t.subject, NodeKind::Class, t.line);
            claim(t.object, NodeKind::Class, t.line);
            add_edge(nodes.at(NodeId{t.subject}).parents, t.object);
            (void)e;
        } else if (p == "subproperty_of") {
            claim(t.subject, NodeKind::Property, t.line);
            claim(t.object, NodeKind::Property, t.line);
            add_edge(nodes.at(NodeId{t.subject}).parents, t.object);
        } else if (p == "domain" || p == "range") {
            claim(t.subject, NodeKind::Property, t.line);
            claim(t.object, NodeKind::Class, t.line);
            auto& e = nodes.at(NodeId{t.subject});
            set_once(p == "domain" ? e.domain : e.range, t.object, t, source);
        } else if (p == "label") {
            set_once(touch(t.subject, t.line).label, t.object, t, source);
        } else if (p == "pattern") {
            if (!is_valid_pattern(t.object))
                throw ParseError(source, t.line, "pattern must contain exactly one [X] and one [Y]");
            set_once(claim(t.subject, NodeKind::Property, t.line).pattern, t.object, t, source);
        } else if (p == "domain_phrase") {
            set_once(claim(t.subject, NodeKind::Property, t.line).domain_phrase, t.object, t, source);
        } else if (p == "range_phrase") {
            set_once(claim(t.subject, NodeKind::Property, t.line).range_phrase, t.object, t, source);
        }
    }

    OntologyGraph finish() {
        std::vector<ClassNode> classes;
        std::vector<PropertyNode> properties;
        std::vector<InstanceNode> instances;
        for (const auto& id : order) {
            auto& e = nodes.at(id);
            if (!e.kind)
                throw ParseError(source, e.first_line, "dangling reference: '" + id.str() + "' is never declared as a class, property or instance");
            std::string label = e.label.value_or(id.str());
            switch (*e.kind) {
            case NodeKind::Class:
                classes.push_back({id, std::move(label), std::move(e.parents)});
                break;
            case NodeKind::Property:
                properties.push_back({id, std::move(label), std::move(e.parents), e.domain, e.range, e.pattern,
                                      e.domain_phrase, e.range_phrase});
                break;
            case NodeKind::Instance:
                instances.push_back({id, std::move(label), std::move(e.parents)});
                break;
            }
        }
        return OntologyGraph::build(std::move(classes), std::move(properties), std::move(instances));
    }
};

} // namespace detail

inline const std::vector<std::string_view>& graph_predicates() {
    static const std::vector<std::string_view> preds{"type", "subclass_of", "subproperty_of", "domain", "range",
                                                     "label", "pattern", "domain_phrase", "range_phrase"};
    return preds;
}

/// Parses and validates a triple TSV ontology. Node kinds are inferred from
/// the predicates a node takes part in; `X type rdfs:Class` and
/// `X type rdf:Property` declare kinds explicitly. Nodes without a label are
/// labelled with their id.
inline OntologyGraph parse_graph(std::string_view text, const std::string& source = "<graph>") {
    detail::GraphAssembler as{source, {}, {}};
    for (const auto& t : parse_triple_tsv(text, source, graph_predicates())) as.apply(t);
    return as.finish();
}

inline OntologyGraph load_graph(const std::string& path) { return parse_graph(read_file(path), path); }

/// Canonical serialization; parse_graph(save_graph(g)) == g.
inline std::string save_graph(const OntologyGraph& g) {
    std::string out;
    auto line = [&](const std::string& s, std::string_view p, std::string_view o) {
        out += s;
        out += '\t';
        out += p;
        out += '\t';
        out += o;
        out += '\n';
    };
    for (const auto& c : g.classes()) {
        line(c.id.str(), "type", kClassDecl);
        line(c.id.str(), "label", c.label);
        for (const auto& s : c.superclasses) line(c.id.str(), "subclass_of", s.str());
    }
    for (const auto& p : g.properties()) {
        line(p.id.str(), "type", kPropertyDecl);
        line(p.id.str(), "label", p.label);
        for (const auto& s : p.superproperties) line(p.id.str(), "subproperty_of", s.str());
        if (p.domain) line(p.id.str(), "domain", p.domain->str());
        if (p.range) line(p.id.str(), "range", p.range->str());
        if (p.pattern) line(p.id.str(), "pattern", *p.pattern);
        if (p.domain_phrase) line(p.id.str(), "domain_phrase", *p.domain_phrase);
        if (p.range_phrase) line(p.id.str(), "range_phrase", *p.range_phrase);
    }
    for (const auto& i : g.instances()) {
        line(i.id.str(), "label", i.label);
        for (const auto& t : i.types) line(i.id.str(), "type", t.str());
    }
    return out;
}

inline void write_graph(const OntologyGraph& g, const std::string& path) { write_file(path, save_graph(g)); }

/// Content hash of the canonical serialization.
inline std::string graph_hash(const OntologyGraph& g) { return fingerprint(save_graph(g)); }

} // namespace ontoprobe
