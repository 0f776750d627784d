#include <gtest/gtest.h>

#include "support.hpp"

using namespace ontoprobe;
using namespace testsupport;

namespace {

const MemorizingSample& find(const SubtaskSamples& s, const std::string& id) {
    for (const auto& x : s.samples)
        if (x.id == id) return x;
    throw std::runtime_error("no sample " + id);
}

} // namespace

TEST(Memorize, ToyGolds) {
    auto tasks = generate_memorizing(toy_graph(), 1);
    EXPECT_EQ(tasks[Subtask::TP].samples.size(), 4u);
    EXPECT_EQ(tasks[Subtask::SCO].samples.size(), 3u);
    EXPECT_EQ(tasks[Subtask::SPO].samples.size(), 1u);
    EXPECT_EQ(tasks[Subtask::DM].samples.size(), 3u);
    EXPECT_EQ(tasks[Subtask::RG].samples.size(), 3u);
    EXPECT_EQ(find(tasks[Subtask::TP], "TP/Messi").golds, (std::vector<std::string>{"person", "animal", "eukaryote"}));
    EXPECT_EQ(find(tasks[Subtask::SCO], "SCO/Person").golds, (std::vector<std::string>{"animal", "eukaryote"}));
    EXPECT_EQ(find(tasks[Subtask::SPO], "SPO/memberOfSportsTeam").golds, std::vector<std::string>{"member of"});
    const auto& dm = find(tasks[Subtask::DM], "DM/memberOfSportsTeam");
    EXPECT_EQ(dm.golds, std::vector<std::string>{"person"});
    EXPECT_EQ(dm.subject_phrase, "be a player at a sports team");
    EXPECT_EQ(find(tasks[Subtask::RG], "RG/birthPlace").subject_phrase, "be birth place");
    EXPECT_EQ(find(tasks[Subtask::TP], "TP/Messi").candidates.size(), 6u);
    EXPECT_EQ(find(tasks[Subtask::SPO], "SPO/memberOfSportsTeam").candidates.size(), 3u);
}

TEST(Memorize, DirectTypesOnly) {
    MemorizingOptions opt;
    opt.transitive_types = false;
    auto tasks = generate_memorizing(toy_graph(), 1, opt);
    EXPECT_EQ(find(tasks[Subtask::TP], "TP/Messi").golds, std::vector<std::string>{"person"});
}

TEST(Memorize, SmallSubtaskSplitKeepsATestSubject) {
    auto tasks = generate_memorizing(toy_graph(), 1);
    const auto& tp = tasks[Subtask::TP];
    EXPECT_EQ(tp.train, 1u);
    EXPECT_EQ(tp.dev, 1u);
    EXPECT_EQ(tp.test, 2u);
    EXPECT_FALSE(tp.warnings.empty());
    const auto& spo = tasks[Subtask::SPO];
    EXPECT_EQ(spo.train + spo.dev, 0u);
    EXPECT_EQ(spo.test, 1u);
}

TEST(MemorizeProperty, SplitsPartitionSubjects) {
    for (std::uint64_t seed = 0; seed < 40; ++seed) {
        auto g = random_graph(seed, {30, 25, 40, 0.15});
        auto tasks = generate_memorizing(g, seed);
        for (const auto& [task, set] : tasks) {
            std::map<Split, std::size_t> count;
            std::set<std::string> ids;
            for (const auto& s : set.samples) {
                ++count[s.split];
                EXPECT_TRUE(ids.insert(s.id).second);
                EXPECT_FALSE(s.golds.empty());
                for (const auto& gd : s.golds)
                    EXPECT_NE(std::find(s.candidates.begin(), s.candidates.end(), gd), s.candidates.end());
            }
            EXPECT_EQ(count[Split::Train], set.train);
            EXPECT_EQ(count[Split::Dev], set.dev);
            EXPECT_EQ(count[Split::Test], set.test);
            std::size_t n = set.samples.size();
            if (n >= 21) {
                EXPECT_EQ(set.train, 10u);
                EXPECT_EQ(set.dev, 10u);
            } else if (n > 0) {
                EXPECT_EQ(set.train, std::min<std::size_t>(10, (n - 1) / 2));
                EXPECT_GE(set.test, 1u);
            }
            EXPECT_TRUE(std::is_sorted(set.samples.begin(), set.samples.end(),
                                       [](const auto& a, const auto& b) { return a.split < b.split; }));
        }
    }
}

TEST(MemorizeProperty, GenerationIsDeterministic) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto g = random_graph(seed, {25, 22, 30, 0.2});
        auto a = generate_memorizing(g, 99);
        auto b = generate_memorizing(g, 99);
        for (auto t : kSubtasks) EXPECT_EQ(a[t].samples, b[t].samples);
    }
}

TEST(Memorize, JsonRoundTrip) {
    for (const auto& [task, set] : generate_memorizing(toy_graph(), 3))
        for (const auto& s : set.samples) EXPECT_EQ(memorizing_from_json(to_json(s)), s);
    EXPECT_THROW(memorizing_from_json(json{{"id", "x"}}), ValidationError);
}

TEST(Memorize, MultipleChoice) {
    auto tasks = generate_memorizing(toy_graph(), 1);
    const auto& s = find(tasks[Subtask::TP], "TP/Messi");
    auto q = to_multiple_choice(s, 3, 4);
    ASSERT_EQ(q.choices.size(), 3u);
    EXPECT_EQ(q.choices[q.answer_index], "person");
    for (std::size_t i = 0; i < q.choices.size(); ++i)
        if (i != q.answer_index)
            EXPECT_EQ(std::find(s.golds.begin(), s.golds.end(), q.choices[i]), s.golds.end());
    EXPECT_EQ(q.prompt.rfind("What is the type of Lionel Messi? (a) ", 0), 0u);
    EXPECT_THROW(to_multiple_choice(s, 5, 4), ValidationError); // only 3 non-gold classes
    auto back = question_from_json(to_json(q));
    EXPECT_EQ(back.choices, q.choices);
    EXPECT_EQ(back.answer_index, q.answer_index);
}

TEST(Memorize, ParseChoice) {
    EXPECT_EQ(parse_choice("(b) animal", 4), 1u);
    EXPECT_EQ(parse_choice("The answer is (C).", 4), 2u);
    EXPECT_EQ(parse_choice(" a. ", 4), 0u);
    EXPECT_EQ(parse_choice("(e)", 4), std::nullopt);
    EXPECT_EQ(parse_choice("no idea", 4), std::nullopt);
}
