#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include <ontoprobe/ontoprobe.hpp>

namespace testsupport {

using namespace ontoprobe;

inline std::string source_path(const std::string& rel) { return std::string(ONTOPROBE_SOURCE_DIR) + "/" + rel; }

inline OntologyGraph toy_graph() { return load_graph(source_path("data/toy/ontology.tsv")); }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("ontoprobe_test_" + name + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

/// Random acyclic ontology: every edge points to a lower index.
struct GraphShape {
    std::size_t classes = 8, properties = 5, instances = 6;
    double edge_p = 0.3;
};

inline OntologyGraph random_graph(std::uint64_t seed, const GraphShape& shape = {}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    std::vector<ClassNode> cs;
    for (std::size_t i = 0; i < shape.classes; ++i) {
        ClassNode c{NodeId{"C" + std::to_string(i)}, "class " + std::to_string(i), {}};
        for (std::size_t j = 0; j < i; ++j)
            if (u(rng) < shape.edge_p) c.superclasses.push_back(NodeId{"C" + std::to_string(j)});
        cs.push_back(std::move(c));
    }
    std::vector<PropertyNode> ps;
    for (std::size_t i = 0; i < shape.properties; ++i) {
        PropertyNode p;
        p.id = NodeId{"P" + std::to_string(i)};
        p.label = "prop " + std::to_string(i);
        for (std::size_t j = 0; j < i; ++j)
            if (u(rng) < shape.edge_p) p.superproperties.push_back(NodeId{"P" + std::to_string(j)});
        if (shape.classes && u(rng) < 0.8) p.domain = NodeId{"C" + std::to_string(pick(shape.classes))};
        if (shape.classes && u(rng) < 0.8) p.range = NodeId{"C" + std::to_string(pick(shape.classes))};
        p.pattern = "[X] relates " + std::to_string(i) + " to [Y]";
        ps.push_back(std::move(p));
    }
    std::vector<InstanceNode> is;
    for (std::size_t i = 0; i < shape.instances && shape.classes; ++i) {
        InstanceNode n{NodeId{"I" + std::to_string(i)}, "thing " + std::to_string(i), {}};
        n.types.push_back(NodeId{"C" + std::to_string(pick(shape.classes))});
        if (u(rng) < 0.3) {
            NodeId extra{"C" + std::to_string(pick(shape.classes))};
            if (extra != n.types.front()) n.types.push_back(extra);
        }
        is.push_back(std::move(n));
    }
    return OntologyGraph::build(std::move(cs), std::move(ps), std::move(is));
}

/// Graph triples plus random property assertions between instances, so
/// every rule has something to fire on.
inline std::vector<Triple> random_base(const OntologyGraph& g, std::uint64_t seed, std::size_t facts) {
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    auto base = graph_triples(g);
    if (g.instances().empty() || g.properties().empty()) return base;
    auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
    for (std::size_t i = 0; i < facts; ++i) {
        const auto& a = g.instances()[pick(g.instances().size())].id.str();
        const auto& b = g.instances()[pick(g.instances().size())].id.str();
        base.push_back({a, g.properties()[pick(g.properties().size())].id.str(), b});
    }
    return base;
}

/// Naive fixpoint with each rule spelled out by hand: loop over all pairs
/// until nothing changes.
inline std::set<Triple> brute_force_closure(const std::vector<Triple>& base) {
    std::set<Triple> s(base.begin(), base.end());
    for (bool changed = true; changed;) {
        changed = false;
        std::vector<Triple> cur(s.begin(), s.end());
        std::vector<Triple> add;
        for (const auto& a : cur)
            for (const auto& b : cur) {
                if (a.p == "domain" && b.p == a.s) add.push_back({b.s, "type", a.o});
                if (a.p == "range" && b.p == a.s) add.push_back({b.o, "type", a.o});
                if (a.p == "subproperty_of" && b.p == "subproperty_of" && b.o == a.s) add.push_back({b.s, "subproperty_of", a.o});
                if (a.p == "subproperty_of" && b.p == a.s) add.push_back({b.s, a.o, b.o});
                if (a.p == "subclass_of" && b.p == "type" && b.o == a.s) add.push_back({b.s, "type", a.o});
                if (a.p == "subclass_of" && b.p == "subclass_of" && b.o == a.s) add.push_back({b.s, "subclass_of", a.o});
            }
        for (auto& t : add)
            if (s.insert(t).second) changed = true;
    }
    return s;
}

/// Independent metric oracle: sorts each rank list and reads off the
/// quantities directly, in long double.
struct NaiveMetrics {
    std::map<std::size_t, long double> recall;
    long double mrr = 0, mrr_a = 0;
};

inline NaiveMetrics naive_metrics(const std::vector<std::vector<std::size_t>>& ranks, const std::vector<std::size_t>& ks) {
    NaiveMetrics m;
    for (auto k : ks) {
        std::size_t hits = 0;
        for (auto r : ranks) {
            std::sort(r.begin(), r.end());
            hits += r.front() <= k ? 1 : 0;
        }
        m.recall[k] = static_cast<long double>(hits) / ranks.size();
    }
    for (auto r : ranks) {
        std::sort(r.begin(), r.end());
        m.mrr += 1.0L / r.front();
        long double mean = 0;
        for (auto x : r) mean += x;
        mean /= r.size();
        m.mrr_a += 1.0L / mean;
    }
    m.mrr /= ranks.size();
    m.mrr_a /= ranks.size();
    return m;
}

/// Random rank lists: each sample has 1..max_golds distinct ranks in
/// [1, list_len].
inline std::vector<std::vector<std::size_t>> random_rank_lists(std::mt19937_64& rng, std::size_t samples,
                                                               std::size_t list_len, std::size_t max_golds) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < samples; ++i) {
        std::vector<std::size_t> pos(list_len);
        for (std::size_t j = 0; j < list_len; ++j) pos[j] = j + 1;
        std::shuffle(pos.begin(), pos.end(), rng);
        auto g = std::uniform_int_distribution<std::size_t>(1, std::min(max_golds, list_len))(rng);
        pos.resize(g);
        out.push_back(pos);
    }
    return out;
}

/// Runs a shell command and returns its exit status.
inline int run(const std::string& cmd) {
    int rc = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

inline std::string cli() { return ONTOPROBE_CLI; }

} // namespace testsupport
