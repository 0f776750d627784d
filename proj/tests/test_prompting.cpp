#include <gtest/gtest.h>

#include "support.hpp"

using namespace ontoprobe;
using namespace testsupport;

namespace {

MemorizingSample sample(Subtask t, std::string label, std::string phrase = {}) {
    return {"x", t, NodeId{"x"}, std::move(label), std::move(phrase), {"g"}, {"g", "h"}, Split::Test};
}

} // namespace

TEST(Prompting, ManualTemplates) {
    auto book = TemplateBook::builtin();
    auto s = sample(Subtask::TP, "Lionel Messi");
    EXPECT_EQ(render_memorizing(s, book.get("type", TemplateKind::Manual, 1)).text(), "Lionel Messi is a [MASK] .");
    EXPECT_EQ(render_memorizing(s, book.get("type", TemplateKind::Manual, 3), 2).text(),
              "Lionel Messi is a particular [MASK] [MASK] .");
    auto dm = sample(Subtask::DM, "member of sports team", "be a player at a sports team");
    EXPECT_EQ(render_memorizing(dm, book.get("domain", TemplateKind::Manual)).text(),
              "One has to be a particular [MASK] to be a player at a sports team .");
    auto sco = sample(Subtask::SCO, "person");
    EXPECT_EQ(render_memorizing(sco, book.get("subclass_of", TemplateKind::Manual, 2)).text(),
              "Person has superclass [MASK] .");
    EXPECT_EQ(render_memorizing(sco, book.get("subclass_of", TemplateKind::Manual, 2), 1, {true}).text(),
              "person has superclass [MASK] .");
}

TEST(Prompting, SoftTemplateCarriesPlaceholders) {
    auto book = TemplateBook::builtin();
    auto p = render_memorizing(sample(Subtask::SPO, "member of"), book.get("subproperty_of", TemplateKind::Soft));
    EXPECT_EQ(p.text(), "Member of <s1> <s2> <s3> [MASK] .");
    std::size_t soft = 0;
    for (const auto& s : p.segments) soft += s.kind == Segment::Kind::Soft;
    EXPECT_EQ(soft, 3u);
}

TEST(Prompting, MismatchedRelationIsRejected) {
    auto book = TemplateBook::builtin();
    EXPECT_THROW(render_memorizing(sample(Subtask::TP, "x"), book.get("domain", TemplateKind::Manual)), ValidationError);
    EXPECT_THROW(render_memorizing(sample(Subtask::TP, "x"), book.get("type", TemplateKind::Manual), 0), ValidationError);
}

TEST(Prompting, TemplateValidation) {
    TemplateBook b;
    EXPECT_THROW(b.add({"type", TemplateKind::Manual, "{subj} is ."}), ValidationError);
    EXPECT_THROW(b.add({"type", TemplateKind::Manual, "{subj} {mask} {mask}"}), ValidationError);
    EXPECT_THROW(b.add({"type", TemplateKind::Soft, "{subj} is a {mask} ."}), ValidationError);
    EXPECT_THROW(b.add({"type", TemplateKind::Manual, "{subj} {oops} {mask}"}), ValidationError);
    EXPECT_NO_THROW(b.add({"type", TemplateKind::Soft, "{s1} {subj} {s2} {mask} ."}));
    EXPECT_THROW(b.load("type\tmanual\n"), ParseError);
    b.load("# extra\ntype\tmanual\t{subj} belongs to {mask} .\n");
    EXPECT_EQ(b.variants("type", TemplateKind::Manual), 1u);
    // missing variant falls back to the first
    EXPECT_EQ(b.get("type", TemplateKind::Manual, 7).body, "{subj} belongs to {mask} .");
}

TEST(Prompting, TemplateChoiceParsing) {
    EXPECT_EQ(TemplateChoice::parse("manual2").variant, 2u);
    EXPECT_EQ(TemplateChoice::parse("soft").kind, TemplateKind::Soft);
    EXPECT_EQ(TemplateChoice::parse("manual12").name(), "manual12");
    EXPECT_THROW(TemplateChoice::parse("manual"), ValidationError);
    EXPECT_THROW(TemplateChoice::parse("manualx"), ValidationError);
}

TEST(Prompting, StatementsUseArticleAgreement) {
    auto book = TemplateBook::builtin();
    auto t = book.get("subclass_of", TemplateKind::Manual, 1);
    EXPECT_EQ(segments_text(render_statement(t, Segment::text("person"), "", "animal")), "Person is an animal.");
    EXPECT_EQ(segments_text(render_statement(t, Segment::text("person"), "", "being")), "Person is a being.");
    EXPECT_EQ(segments_text(render_statement(t, Segment::pseudo("X"), "", "person")), "[X] is a person.");
}

TEST(Prompting, PatternsAndRegions) {
    auto segs = render_pattern("[X] is a member of [Y]", Segment::pseudo("X"), Segment::pseudo("Y"), false);
    EXPECT_EQ(segments_text(segs), "[X] is a member of [Y]");
    auto masked = render_pattern("[X] is a member of [Y]", Segment::pseudo("X"), Segment::pseudo("Y"), true, 3);
    EXPECT_EQ(segments_text(masked), "[X] [MASK] [MASK] [MASK] [Y]");
    EXPECT_EQ(pattern_region("[X] is a member of [Y]"), "is a member of");
    EXPECT_EQ(pattern_region("[X] was born in [Y]."), "was born in");
    EXPECT_EQ(pattern_region("[Y] owns [X]"), std::nullopt);
    EXPECT_EQ(pattern_region("The [X] of [Y]"), std::nullopt);
}

TEST(Prompting, ReasoningPromptLayout) {
    auto hyp = ClozePrompt{{Segment::pseudo("X"), Segment::text(" is a "), Segment::mask(), Segment::text(" .")}};
    Sentence p1{Segment::text("Person is an animal.")};
    Sentence p2{Segment::pseudo("X"), Segment::text(" is a person.")};
    auto manual = render_reasoning({{PremiseMode::EX, p2}, {PremiseMode::EX, p1}}, hyp, Conjunction::manual());
    EXPECT_EQ(manual.text(), "[X] is a person. Person is an animal. Therefore, [X] is a [MASK] .");
    auto soft = render_reasoning({{PremiseMode::EX, p2}, {PremiseMode::EX, p1}}, hyp, Conjunction::soft(), 2);
    EXPECT_EQ(soft.text(), "[X] is a person. <s4> Person is an animal. <s5> [X] is a [MASK] [MASK] .");
    auto none = render_reasoning({{PremiseMode::IM, std::nullopt}, {PremiseMode::NO, std::nullopt}}, hyp,
                                 Conjunction::manual());
    EXPECT_EQ(none.text(), "Therefore, [X] is a [MASK] .");
    auto one = render_reasoning({{PremiseMode::NO, std::nullopt}, {PremiseMode::EX, p1}}, hyp, Conjunction::soft());
    EXPECT_EQ(one.text(), "Person is an animal. <s5> [X] is a [MASK] .");
    EXPECT_THROW(render_reasoning({{PremiseMode::EX, std::nullopt}}, hyp, Conjunction::manual()), ValidationError);
}

TEST(Prompting, ClozeChecks) {
    EXPECT_THROW(check_cloze(ClozePrompt{{Segment::text("no mask")}}), ValidationError);
    EXPECT_THROW(check_cloze(ClozePrompt{{Segment::mask(), Segment::mask()}}), ValidationError);
    EXPECT_THROW(check_cloze(ClozePrompt{{Segment::mask(0)}}), ValidationError);
    ClozePrompt p{{Segment::text("a "), Segment::mask(2)}};
    EXPECT_NE(prompt_fingerprint(p), prompt_fingerprint(p.with_mask_count(1)));
    EXPECT_EQ(segments_from_json(to_json(p.segments)), p.segments);
}

TEST(PromptingProperty, MaskCountRoundTrip) {
    auto book = TemplateBook::builtin();
    for (const char* rel : {"type", "subclass_of", "subproperty_of", "domain", "range"})
        for (auto kind : {TemplateKind::Manual, TemplateKind::Soft})
            for (std::size_t v = 1; v <= book.variants(rel, kind); ++v) {
                const auto& t = book.get(rel, kind, v);
                Subtask task = std::string(rel) == "type" ? Subtask::TP
                             : std::string(rel) == "subclass_of" ? Subtask::SCO
                             : std::string(rel) == "subproperty_of" ? Subtask::SPO
                             : std::string(rel) == "domain" ? Subtask::DM : Subtask::RG;
                for (std::size_t n = 1; n <= 5; ++n) {
                    auto p = render_memorizing(sample(task, "some thing", "do things"), t, n);
                    EXPECT_NO_THROW(check_cloze(p));
                    EXPECT_EQ(p.mask_count(), n);
                    std::size_t masks = 0;
                    for (auto pos = p.text().find("[MASK]"); pos != std::string::npos; pos = p.text().find("[MASK]", pos + 1)) ++masks;
                    EXPECT_EQ(masks, n);
                }
            }
}
