#include <gtest/gtest.h>

#include "support.hpp"

using namespace ontoprobe;
using namespace testsupport;

namespace {

ReasoningOptions opts(std::size_t pairs) {
    ReasoningOptions o;
    o.pairs = pairs;
    return o;
}

const ReasoningInstance& by_id(const ReasoningSet& s, const std::string& id) {
    for (const auto& i : s.instances)
        if (i.id == id) return i;
    throw std::runtime_error("missing " + id);
}

} // namespace

TEST(Reasoning, GridParsing) {
    EXPECT_EQ(parse_grid("all").size(), 9u);
    auto g = parse_grid("EX-EX, NO-IM,EX-EX");
    ASSERT_EQ(g.size(), 2u);
    EXPECT_EQ(cell_name(g[1]), "NO-IM");
    EXPECT_THROW(parse_grid("EX"), ValidationError);
    EXPECT_THROW(parse_grid("EX-MAYBE"), ValidationError);
}

TEST(Reasoning, ToyCounts) {
    auto s = generate_reasoning(toy_graph(), 1, opts(3));
    EXPECT_EQ(s.instances.size(), 14u * 3u * 9u);
    std::map<std::string, std::size_t> per_rule;
    for (const auto& i : s.instances) ++per_rule[to_string(i.rule)];
    EXPECT_EQ(per_rule["rdfs2"], 81u);
    EXPECT_EQ(per_rule["rdfs7"], 27u);
    std::set<std::string> ids;
    for (const auto& p : s.probes) EXPECT_TRUE(ids.insert(p.premise_id).second);
    // 14 distinct P1 facts plus one P2 per (P1, pair)
    EXPECT_EQ(s.probes.size(), 14u + 14u * 3u);
}

TEST(Reasoning, SubclassExamplePrompt) {
    auto s = generate_reasoning(toy_graph(), 1, opts(1));
    const auto& i = by_id(s, "rdfs9/0001/00/EX-EX");
    EXPECT_EQ(i.p1.triple, (Triple{"Person", "subclass_of", "Animal"}));
    EXPECT_EQ(i.p2.triple, (Triple{"[X]", "type", "Person"}));
    EXPECT_EQ(reasoning_prompt(i, Conjunction::manual()).text(),
              "[X] is a person. Person is an animal. Therefore, [X] is a particular [MASK] .");
    EXPECT_EQ(i.golds, std::vector<std::string>{"animal"});
    EXPECT_EQ(i.pseudoword_slots, std::vector<std::string>{"X"});
    const auto& no = by_id(s, "rdfs9/0001/00/NO-NO");
    EXPECT_EQ(reasoning_prompt(no, Conjunction::manual()).text(), "Therefore, [X] is a particular [MASK] .");
}

TEST(Reasoning, SubpropertyPatternGold) {
    auto s = generate_reasoning(toy_graph(), 1, opts(1));
    const auto& i = by_id(s, "rdfs7/0000/00/EX-EX");
    EXPECT_EQ(i.golds, std::vector<std::string>{"is a member of"});
    EXPECT_EQ(i.hypothesis.text(), "[X] [MASK] [Y] .");
    EXPECT_EQ(i.pseudoword_slots, (std::vector<std::string>{"X", "Y"}));
    EXPECT_EQ(i.candidates, (std::vector<std::string>{"is a member of", "is a player at", "was born in"}));
    EXPECT_EQ(reasoning_prompt(i, Conjunction::manual()).text(),
              "[X] is a player at [Y]. Member of sports team implies member of. Therefore, [X] [MASK] [Y] .");
    EXPECT_EQ(i.masked_kind, MaskedKind::PropertyPattern);
}

TEST(Reasoning, SoftConjunction) {
    auto s = generate_reasoning(toy_graph(), 1, opts(1));
    auto p = reasoning_prompt(by_id(s, "rdfs9/0001/00/EX-EX"), Conjunction::soft());
    EXPECT_EQ(p.text(), "[X] is a person. <s4> Person is an animal. <s5> [X] is a particular [MASK] .");
}

TEST(ReasoningProperty, GridCellsAreConsistent) {
    for (std::uint64_t seed = 0; seed < 15; ++seed) {
        auto g = random_graph(seed, {8, 4, 5, 0.3});
        auto s = generate_reasoning(g, seed, opts(2));
        std::map<std::string, std::set<std::string>> cells_per_combo;
        for (const auto& i : s.instances) {
            auto prompt = reasoning_prompt(i, Conjunction::manual()).text();
            auto p1 = segments_text(Verbalizer(g, TemplateBook::builtin(), opts(2)).statement(i.p1.triple));
            auto p2 = segments_text(Verbalizer(g, TemplateBook::builtin(), opts(2)).statement(i.p2.triple));
            EXPECT_EQ(prompt.find(p1) != std::string::npos, i.p1.mode == PremiseMode::EX) << i.id << ": " << prompt;
            EXPECT_EQ(prompt.find(p2) != std::string::npos, i.p2.mode == PremiseMode::EX) << i.id << ": " << prompt;
            EXPECT_EQ(i.p1.rendered.has_value(), i.p1.mode == PremiseMode::EX);
            EXPECT_EQ(apply_rule(i.rule, i.p1.triple, i.p2.triple), i.conclusion);
            ASSERT_EQ(i.golds.size(), 1u);
            EXPECT_NE(std::find(i.candidates.begin(), i.candidates.end(), i.golds[0]), i.candidates.end());
            auto combo = i.id.substr(0, i.id.rfind('/'));
            EXPECT_TRUE(cells_per_combo[combo].insert(cell_name(i.cell())).second);
        }
        for (const auto& [combo, cells] : cells_per_combo) EXPECT_EQ(cells.size(), 9u) << combo;
    }
}

TEST(ReasoningProperty, Deterministic) {
    auto g = random_graph(4, {10, 5, 6, 0.3});
    ReasoningOptions o = opts(3);
    o.budget = 4;
    auto a = generate_reasoning(g, 77, o);
    auto b = generate_reasoning(g, 77, o);
    ASSERT_EQ(a.instances.size(), b.instances.size());
    for (std::size_t i = 0; i < a.instances.size(); ++i) EXPECT_EQ(to_json(a.instances[i]), to_json(b.instances[i]));
}

TEST(Reasoning, BudgetCapsCombinations) {
    ReasoningOptions o = opts(5);
    o.budget = 2;
    o.grid = parse_grid("EX-EX");
    auto s = generate_reasoning(toy_graph(), 3, o);
    std::map<std::string, std::size_t> per_rule;
    for (const auto& i : s.instances) ++per_rule[to_string(i.rule)];
    for (const auto& [r, n] : per_rule) EXPECT_EQ(n, 2u) << r;
    EXPECT_FALSE(s.warnings.empty());
}

TEST(Reasoning, NeighborhoodIsSubsetWithGold) {
    ReasoningOptions o = opts(1);
    o.candidates = CandidatePolicy::Neighborhood;
    auto near = generate_reasoning(toy_graph(), 1, o);
    auto full = generate_reasoning(toy_graph(), 1, opts(1));
    ASSERT_EQ(near.instances.size(), full.instances.size());
    bool smaller = false;
    for (std::size_t i = 0; i < near.instances.size(); ++i) {
        const auto& n = near.instances[i];
        const auto& f = full.instances[i];
        for (const auto& c : n.candidates) EXPECT_NE(std::find(f.candidates.begin(), f.candidates.end(), c), f.candidates.end());
        EXPECT_NE(std::find(n.candidates.begin(), n.candidates.end(), n.golds[0]), n.candidates.end());
        smaller |= n.candidates.size() < f.candidates.size();
    }
    EXPECT_TRUE(smaller);
}

TEST(Reasoning, JsonRoundTrip) {
    auto s = generate_reasoning(toy_graph(), 1, opts(1));
    for (const auto& i : s.instances) {
        auto j = to_json(i);
        auto back = reasoning_from_json(j);
        EXPECT_EQ(to_json(back), j);
    }
    auto j = to_json(s.instances.front());
    j["p1"].erase("segments");
    j["p1"]["mode"] = "EX";
    EXPECT_THROW(reasoning_from_json(j), ValidationError);
}

TEST(Reasoning, PremiseProbes) {
    auto s = generate_reasoning(toy_graph(), 1, opts(2));
    for (const auto& p : s.probes) {
        EXPECT_NO_THROW(check_cloze(p.item.prompt));
        EXPECT_EQ(p.pair.has_value(), p.position == "P2");
        EXPECT_NE(std::find(p.item.candidates.begin(), p.item.candidates.end(), p.item.golds[0]), p.item.candidates.end());
    }
}

TEST(Reasoning, UncasedLowersWordsButNotPlaceholders) {
    ReasoningOptions o = opts(1);
    o.render.uncased = true;
    auto s = generate_reasoning(toy_graph(), 1, o);
    const auto& i = by_id(s, "rdfs9/0001/00/EX-EX");
    auto text = reasoning_prompt(i, Conjunction::manual(), o.render).text();
    EXPECT_EQ(text, "[X] is a person. person is an animal. therefore, [X] is a particular [MASK] .");
    EXPECT_EQ(i.golds, std::vector<std::string>{"animal"});
}
