#include <gtest/gtest.h>

#include <functional>

#include "support.hpp"

using namespace ontoprobe;
using namespace testsupport;

namespace {

std::vector<std::string> ids(const std::vector<NodeId>& v) {
    std::vector<std::string> out;
    for (const auto& n : v) out.push_back(n.str());
    return out;
}

std::string error_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const ValidationError& e) {
        return e.what();
    }
    return {};
}

} // namespace

TEST(Ontology, ToyGraphShape) {
    auto g = toy_graph();
    EXPECT_EQ(g.classes().size(), 6u);
    EXPECT_EQ(g.properties().size(), 3u);
    EXPECT_EQ(g.instances().size(), 4u);
    EXPECT_EQ(g.label_of(NodeId{"SportsTeam"}), "sports team");
    EXPECT_EQ(g.property_at(NodeId{"memberOf"}).pattern.value(), "[X] is a member of [Y]");
}

TEST(Ontology, AncestorsNearestFirst) {
    auto g = toy_graph();
    EXPECT_EQ(ids(g.ancestors(NodeId{"Person"}, NodeKind::Class)), (std::vector<std::string>{"Animal", "Eukaryote"}));
    EXPECT_TRUE(g.ancestors(NodeId{"Eukaryote"}, NodeKind::Class).empty());
    EXPECT_EQ(ids(g.types_of(NodeId{"Messi"})), (std::vector<std::string>{"Person", "Animal", "Eukaryote"}));
    EXPECT_EQ(ids(g.types_of(NodeId{"Messi"}, false)), (std::vector<std::string>{"Person"}));
    EXPECT_EQ(g.class_depth(NodeId{"Person"}), 2u);
    EXPECT_EQ(g.class_depth(NodeId{"Place"}), 0u);
}

TEST(Ontology, DiamondAncestorsListedOnce) {
    auto g = OntologyGraph::build({{NodeId{"A"}, "a", {}},
                                   {NodeId{"B"}, "b", {NodeId{"A"}}},
                                   {NodeId{"C"}, "c", {NodeId{"A"}}},
                                   {NodeId{"D"}, "d", {NodeId{"B"}, NodeId{"C"}}}},
                                  {}, {});
    EXPECT_EQ(ids(g.ancestors(NodeId{"D"}, NodeKind::Class)), (std::vector<std::string>{"B", "C", "A"}));
    EXPECT_EQ(g.class_depth(NodeId{"D"}), 2u);
}

TEST(Ontology, CycleIsRejectedWithPath) {
    auto msg = error_of([] {
        OntologyGraph::build({{NodeId{"A"}, "a", {NodeId{"B"}}}, {NodeId{"B"}, "b", {NodeId{"A"}}}}, {}, {});
    });
    EXPECT_NE(msg.find("cycle detected: A -> B -> A"), std::string::npos) << msg;
    auto self = error_of([] { OntologyGraph::build({{NodeId{"A"}, "a", {NodeId{"A"}}}}, {}, {}); });
    EXPECT_NE(self.find("cycle"), std::string::npos);
}

TEST(Ontology, PropertyCycleIsRejected) {
    PropertyNode p{NodeId{"p"}, "p", {NodeId{"q"}}, {}, {}, {}, {}, {}};
    PropertyNode q{NodeId{"q"}, "q", {NodeId{"p"}}, {}, {}, {}, {}, {}};
    EXPECT_NE(error_of([&] { OntologyGraph::build({}, {p, q}, {}); }).find("cycle"), std::string::npos);
}

TEST(Ontology, DanglingReferences) {
    EXPECT_NE(error_of([] { OntologyGraph::build({{NodeId{"A"}, "a", {NodeId{"Z"}}}}, {}, {}); }).find("dangling"),
              std::string::npos);
    EXPECT_NE(error_of([] { OntologyGraph::build({{NodeId{"A"}, "a", {}}}, {}, {{NodeId{"i"}, "i", {NodeId{"Q"}}}}); })
                  .find("dangling"),
              std::string::npos);
    EXPECT_NE(error_of([] { OntologyGraph::build({{NodeId{"A"}, "a", {}}}, {}, {{NodeId{"i"}, "i", {}}}); })
                  .find("without type"),
              std::string::npos);
    EXPECT_NE(error_of([] { parse_graph("A\tlabel\tan a\n"); }).find("dangling"), std::string::npos);
}

TEST(Ontology, ParseErrorsCarryLineNumbers) {
    try {
        parse_graph("A\ttype\trdfs:Class\nA\tlabel\n", "g.tsv");
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_EQ(e.line(), 2u);
        EXPECT_EQ(e.source(), "g.tsv");
    }
    EXPECT_THROW(parse_graph("A\tknows\tB\n"), ParseError);
    EXPECT_THROW(parse_graph("p\tpattern\t[X] and [X]\n"), ParseError);
    EXPECT_THROW(parse_graph("A\ttype\trdfs:Class\nA\ttype\trdf:Property\n"), ParseError);
    EXPECT_THROW(parse_graph("A\ttype\trdfs:Class\nA\tlabel\tx\nA\tlabel\ty\n"), ParseError);
}

TEST(Ontology, SaveParseRoundTrip) {
    auto g = toy_graph();
    auto text = save_graph(g);
    auto back = parse_graph(text);
    EXPECT_EQ(back, g);
    EXPECT_EQ(save_graph(back), text);
    EXPECT_EQ(graph_hash(back), graph_hash(g));
}

TEST(Ontology, HashChangesWithContent) {
    auto a = random_graph(1);
    auto b = random_graph(2);
    EXPECT_NE(graph_hash(a), graph_hash(b));
    EXPECT_EQ(graph_hash(random_graph(1)), graph_hash(a));
}

TEST(OntologyProperty, RandomGraphsRoundTrip) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto g = random_graph(seed, {10, 6, 8, 0.35});
        EXPECT_EQ(parse_graph(save_graph(g)), g) << "seed " << seed;
    }
}

TEST(OntologyProperty, AncestorsMatchReachability) {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto g = random_graph(seed, {12, 0, 0, 0.3});
        for (const auto& c : g.classes()) {
            std::set<std::string> reach;
            std::function<void(const NodeId&)> dfs = [&](const NodeId& n) {
                for (const auto& p : g.class_at(n).superclasses)
                    if (reach.insert(p.str()).second) dfs(p);
            };
            dfs(c.id);
            auto anc = ids(g.ancestors(c.id, NodeKind::Class));
            std::set<std::string> got(anc.begin(), anc.end());
            EXPECT_EQ(got.size(), anc.size()) << "duplicate ancestor";
            EXPECT_EQ(got, reach) << "seed " << seed << " class " << c.id.str();
            // nearest first: every direct parent precedes anything two hops away
            for (const auto& p : c.superclasses) {
                auto pos = std::find(anc.begin(), anc.end(), p.str()) - anc.begin();
                EXPECT_LT(static_cast<std::size_t>(pos), c.superclasses.size());
            }
        }
    }
}

TEST(OntologyProperty, InjectedBackEdgeIsACycle) {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        auto g = random_graph(seed, {8, 0, 0, 0.4});
        auto classes = g.classes();
        // find an edge i -> j and add j -> ... -> i closing the loop
        for (auto& c : classes) {
            if (c.superclasses.empty()) continue;
            auto target = c.superclasses.front();
            auto& t = *std::find_if(classes.begin(), classes.end(), [&](const ClassNode& x) { return x.id == target; });
            t.superclasses.push_back(c.id);
            EXPECT_NE(error_of([&] { OntologyGraph::build(classes, {}, {}); }).find("cycle"), std::string::npos);
            break;
        }
    }
}
