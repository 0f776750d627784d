#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <cstring>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "error.hpp"
#include "memorize.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

/// One piece of a prompt. Soft and pseudoword placeholders are symbolic;
/// only a backend binds them to vectors.
struct Segment {
    enum class Kind { Text, Mask, Soft, Pseudo };
    Kind kind = Kind::Text;
    /// Literal text, soft token id ("s1") or pseudoword id ("X").
    std::string value;
    /// Number of consecutive [MASK] tokens (Mask only).
    std::size_t count = 1;

    static Segment text(std::string s) { return {Kind::Text, std::move(s), 1}; }
    static Segment mask(std::size_t n = 1) { return {Kind::Mask, {}, n}; }
    static Segment soft(std::string id) { return {Kind::Soft, std::move(id), 1}; }
    static Segment pseudo(std::string id) { return {Kind::Pseudo, std::move(id), 1}; }

    friend bool operator==(const Segment&, const Segment&) = default;
};

inline std::string mask_text(std::size_t n) {
    std::string out;
    for (std::size_t i = 0; i < n; ++i) out += i ? " [MASK]" : "[MASK]";
    return out;
}

inline std::string segments_text(const std::vector<Segment>& segs) {
    std::string out;
    for (const auto& s : segs) {
        switch (s.kind) {
        case Segment::Kind::Text: out += s.value; break;
        case Segment::Kind::Mask: out += mask_text(s.count); break;
        case Segment::Kind::Soft: out += "<" + s.value + ">"; break;
        case Segment::Kind::Pseudo: out += "[" + s.value + "]"; break;
        }
    }
    return out;
}

/// Concatenates adjacent text segments and drops empty ones.
inline std::vector<Segment> normalize(std::vector<Segment> segs) {
    std::vector<Segment> out;
    for (auto& s : segs) {
        if (s.kind == Segment::Kind::Text) {
            if (s.value.empty()) continue;
            if (!out.empty() && out.back().kind == Segment::Kind::Text) {
                out.back().value += s.value;
                continue;
            }
        }
        out.push_back(std::move(s));
    }
    return out;
}

/// A sentence with no mask (rendered premise).
using Sentence = std::vector<Segment>;

/// Prompt with exactly one mask slot expanded to `mask_count()` tokens.
struct ClozePrompt {
    std::vector<Segment> segments;

    std::size_t mask_count() const {
        for (const auto& s : segments)
            if (s.kind == Segment::Kind::Mask) return s.count;
        return 0;
    }

    ClozePrompt with_mask_count(std::size_t n) const {
        if (n < 1) throw ValidationError("mask count must be >= 1");
        ClozePrompt p = *this;
        for (auto& s : p.segments)
            if (s.kind == Segment::Kind::Mask) s.count = n;
        return p;
    }

    std::string text() const { return segments_text(segments); }

    friend bool operator==(const ClozePrompt&, const ClozePrompt&) = default;
};

inline void check_cloze(const ClozePrompt& p) {
    std::size_t masks = 0;
    for (const auto& s : p.segments)
        if (s.kind == Segment::Kind::Mask) {
            ++masks;
            if (s.count < 1) throw ValidationError("mask slot with zero masks");
        }
    if (masks != 1) throw ValidationError("cloze prompt must have exactly one mask slot");
}

/// Identity of a prompt as seen by a backend: its canonical text, which
/// includes the number of masks.
inline std::string prompt_fingerprint(const ClozePrompt& p) { return fingerprint(p.text()); }

inline json to_json(const Segment& s) {
    switch (s.kind) {
    case Segment::Kind::Text: return json{{"text", s.value}};
    case Segment::Kind::Mask: return json{{"mask", s.count}};
    case Segment::Kind::Soft: return json{{"soft", s.value}};
    case Segment::Kind::Pseudo: return json{{"pseudo", s.value}};
    }
    return {};
}

inline Segment segment_from_json(const json& j) {
    if (j.contains("text")) return Segment::text(j["text"].get<std::string>());
    if (j.contains("mask")) return Segment::mask(j["mask"].get<std::size_t>());
    if (j.contains("soft")) return Segment::soft(j["soft"].get<std::string>());
    if (j.contains("pseudo")) return Segment::pseudo(j["pseudo"].get<std::string>());
    throw ValidationError("malformed prompt segment: " + j.dump());
}

inline json to_json(const std::vector<Segment>& segs) {
    json arr = json::array();
    for (const auto& s : segs) arr.push_back(to_json(s));
    return arr;
}

inline std::vector<Segment> segments_from_json(const json& j) {
    std::vector<Segment> out;
    for (const auto& e : j) out.push_back(segment_from_json(e));
    return out;
}

enum class TemplateKind { Manual, Soft };

inline const char* to_string(TemplateKind k) { return k == TemplateKind::Manual ? "manual" : "soft"; }

inline TemplateKind parse_template_kind(std::string_view s) {
    if (s == "manual") return TemplateKind::Manual;
    if (s == "soft") return TemplateKind::Soft;
    throw ValidationError("template kind must be manual or soft: " + std::string(s));
}

/// A verbalization of one ontological relation. The body mixes literal text
/// with markers: {subj} (subject label), {phrase} (domain/range verb phrase),
/// {mask}, and soft tokens {s1}..{s9}.
struct Template {
    std::string relation;
    TemplateKind kind = TemplateKind::Manual;
    std::string body;

    struct Part {
        enum class Kind { Text, Subject, Phrase, Mask, Soft } kind;
        std::string value;
    };

    std::vector<Part> parts() const {
        std::vector<Part> out;
        std::string lit;
        std::size_t i = 0;
        while (i < body.size()) {
            if (body[i] == '{') {
                auto close = body.find('}', i);
                if (close == std::string::npos) throw ValidationError("unterminated marker in template: " + body);
                std::string marker = body.substr(i + 1, close - i - 1);
                Part p{Part::Kind::Text, {}};
                if (marker == "subj") p.kind = Part::Kind::Subject;
                else if (marker == "phrase") p.kind = Part::Kind::Phrase;
                else if (marker == "mask") p.kind = Part::Kind::Mask;
                else if (marker.size() == 2 && marker[0] == 's' && std::isdigit(static_cast<unsigned char>(marker[1]))) {
                    p.kind = Part::Kind::Soft;
                    p.value = marker;
                } else {
                    throw ValidationError("unknown template marker {" + marker + "}");
                }
                if (!lit.empty()) out.push_back({Part::Kind::Text, std::exchange(lit, {})});
                out.push_back(std::move(p));
                i = close + 1;
            } else {
                lit += body[i++];
            }
        }
        if (!lit.empty()) out.push_back({Part::Kind::Text, std::move(lit)});
        return out;
    }

    void validate() const {
        auto ps = parts();
        auto masks = std::count_if(ps.begin(), ps.end(), [](const Part& p) { return p.kind == Part::Kind::Mask; });
        if (masks != 1) throw ValidationError("template must contain exactly one {mask}: " + body);
        if (kind == TemplateKind::Soft) {
            for (std::size_t i = 0; i < ps.size(); ++i) {
                const auto& p = ps[i];
                if (p.kind == Part::Kind::Phrase)
                    throw ValidationError("soft template may not contain {phrase}: " + body);
                if (p.kind == Part::Kind::Text) {
                    auto t = trim(p.value);
                    bool terminal = i + 1 == ps.size() && (t.empty() || t == ".");
                    if (!t.empty() && !terminal)
                        throw ValidationError("soft template may only contain placeholders and a terminal period: " + body);
                }
            }
        }
    }

    friend bool operator==(const Template&, const Template&) = default;
};

/// Templates by relation and kind; variants are numbered from 1 in
/// registration order.
class TemplateBook {
public:
    static TemplateBook builtin() {
        TemplateBook b;
        auto manual = [&](const char* rel, const char* body) { b.add({rel, TemplateKind::Manual, body}); };
        manual("type", "{subj} is a {mask} .");
        manual("type", "{subj} has class {mask} .");
        manual("type", "{subj} is a particular {mask} .");
        manual("subclass_of", "{subj} is a {mask} .");
        manual("subclass_of", "{subj} has superclass {mask} .");
        manual("subclass_of", "{subj} is a particular {mask} .");
        manual("subproperty_of", "{subj} implies {mask} .");
        manual("domain", "One has to be a particular {mask} to {phrase} .");
        manual("range", "One has to be a particular {mask} to {phrase} .");
        for (const char* rel : {"type", "subclass_of", "subproperty_of", "domain", "range"})
            b.add({rel, TemplateKind::Soft, "{subj} {s1} {s2} {s3} {mask} ."});
        return b;
    }

    void add(Template t) {
        t.validate();
        book_[{t.relation, t.kind}].push_back(std::move(t));
    }

    /// Appends templates from a `relation<TAB>kind<TAB>body` file.
    void load(std::string_view text, const std::string& source = "<templates>") {
        std::size_t line_no = 0;
        for (const auto& raw : split(text, '\n')) {
            ++line_no;
            std::string_view line = raw;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (trim(line).empty() || trim(line).front() == '#') continue;
            auto f = split(line, '\t');
            if (f.size() != 3) throw ParseError(source, line_no, "expected relation<TAB>kind<TAB>body");
            try {
                add({std::string(trim(f[0])), parse_template_kind(trim(f[1])), std::string(trim(f[2]))});
            } catch (const ValidationError& e) {
                throw ParseError(source, line_no, e.what());
            }
        }
    }

    std::size_t variants(const std::string& relation, TemplateKind kind) const {
        auto it = book_.find({relation, kind});
        return it == book_.end() ? 0 : it->second.size();
    }

    /// The requested variant, or variant 1 when the relation has fewer.
    const Template& get(const std::string& relation, TemplateKind kind, std::size_t variant = 1) const {
        auto it = book_.find({relation, kind});
        if (it == book_.end() || it->second.empty())
            throw ValidationError(std::string("no ") + to_string(kind) + " template for relation " + relation);
        if (variant < 1) throw ValidationError("template variants are numbered from 1");
        return variant <= it->second.size() ? it->second[variant - 1] : it->second.front();
    }

private:
    std::map<std::pair<std::string, TemplateKind>, std::vector<Template>> book_;
};

/// Run parameter selecting the template family: "manual1".."manualN" or "soft".
struct TemplateChoice {
    TemplateKind kind = TemplateKind::Manual;
    std::size_t variant = 3;

    std::string name() const {
        return kind == TemplateKind::Soft ? "soft" : "manual" + std::to_string(variant);
    }

    static TemplateChoice parse(std::string_view s) {
        if (s == "soft") return {TemplateKind::Soft, 1};
        if (s.substr(0, 6) == "manual" && s.size() > 6) {
            std::size_t v = 0;
            for (char c : s.substr(6)) {
                if (!std::isdigit(static_cast<unsigned char>(c))) throw ValidationError("bad template choice: " + std::string(s));
                v = v * 10 + static_cast<std::size_t>(c - '0');
            }
            if (v >= 1) return {TemplateKind::Manual, v};
        }
        throw ValidationError("template choice must be manualN or soft: " + std::string(s));
    }
};

struct RenderOptions {
    bool uncased = false;
};

namespace detail {

inline bool starts_with_vowel(std::string_view s) {
    return !s.empty() && std::strchr("aeiouAEIOU", s.front()) != nullptr;
}

inline void capitalize_first(std::vector<Segment>& segs) {
    if (!segs.empty() && segs.front().kind == Segment::Kind::Text && !segs.front().value.empty())
        segs.front().value[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(segs.front().value[0])));
}

inline void lower_all(std::vector<Segment>& segs) {
    for (auto& s : segs)
        if (s.kind == Segment::Kind::Text) s.value = to_lower(s.value);
}

/// Expands a template. `subject` fills {subj}; `object` fills {mask} when
/// present, otherwise {mask} stays a mask slot of `mask_count` tokens.
inline std::vector<Segment> expand(const Template& t, const Segment& subject, const std::string& phrase,
                                   const std::optional<std::string>& object, std::size_t mask_count) {
    std::vector<Segment> out;
    for (const auto& p : t.parts()) {
        switch (p.kind) {
        case Template::Part::Kind::Text: out.push_back(Segment::text(p.value)); break;
        case Template::Part::Kind::Subject: out.push_back(subject); break;
        case Template::Part::Kind::Phrase: out.push_back(Segment::text(phrase)); break;
        case Template::Part::Kind::Soft: out.push_back(Segment::soft(p.value)); break;
        case Template::Part::Kind::Mask:
            if (object) {
                // "is a animal" -> "is an animal"
                if (!out.empty() && out.back().kind == Segment::Kind::Text && starts_with_vowel(*object)) {
                    auto& v = out.back().value;
                    if (v.size() >= 3 && v.compare(v.size() - 3, 3, " a ") == 0) v.insert(v.size() - 1, "n");
                    else if (v == "a ") v = "an ";
                }
                out.push_back(Segment::text(*object));
            } else {
                out.push_back(Segment::mask(mask_count));
            }
            break;
        }
    }
    return out;
}

} // namespace detail

/// Cloze prompt for a memorizing sample; the subject label (or the DM/RG
/// verb phrase) is substituted and the mask slot gets `mask_count` masks.
inline ClozePrompt render_memorizing(const MemorizingSample& s, const Template& t, std::size_t mask_count = 1,
                                     const RenderOptions& opt = {}) {
    if (t.relation != relation_of(s.subtask))
        throw ValidationError(std::string("template relation '") + t.relation + "' does not match subtask " +
                              to_string(s.subtask));
    if (mask_count < 1) throw ValidationError("mask count must be >= 1");
    std::string phrase = s.subject_phrase.empty() ? s.subject_label : s.subject_phrase;
    ClozePrompt p{normalize(detail::expand(t, Segment::text(s.subject_label), phrase, std::nullopt, mask_count))};
    detail::capitalize_first(p.segments);
    if (opt.uncased) detail::lower_all(p.segments);
    return p;
}

/// Template with the object filled in: a plain statement such as
/// "Person is an animal." Used for explicit premises.
inline Sentence render_statement(const Template& t, const Segment& subject, const std::string& phrase,
                                 const std::string& object, const RenderOptions& opt = {}) {
    auto segs = normalize(detail::expand(t, subject, phrase, object, 1));
    if (!segs.empty() && segs.back().kind == Segment::Kind::Text) {
        auto& v = segs.back().value;
        if (v.size() >= 2 && v.compare(v.size() - 2, 2, " .") == 0) v.erase(v.size() - 2, 1);
    }
    detail::capitalize_first(segs);
    if (opt.uncased) detail::lower_all(segs);
    return segs;
}

/// Binds a property pattern ("[X] is a player at [Y]") to two subjects.
/// With `masked` set, the text between the slots becomes the mask slot.
inline std::vector<Segment> render_pattern(const std::string& pattern, const Segment& x, const Segment& y,
                                           bool masked, std::size_t mask_count = 1) {
    auto px = pattern.find("[X]");
    auto py = pattern.find("[Y]");
    if (px == std::string::npos || py == std::string::npos) throw ValidationError("malformed pattern: " + pattern);
    std::vector<Segment> out;
    auto first = std::min(px, py), second = std::max(px, py);
    out.push_back(Segment::text(pattern.substr(0, first)));
    out.push_back(px < py ? x : y);
    if (masked) {
        out.push_back(Segment::text(" "));
        out.push_back(Segment::mask(mask_count));
        out.push_back(Segment::text(" "));
    } else {
        out.push_back(Segment::text(pattern.substr(first + 3, second - first - 3)));
    }
    out.push_back(px < py ? y : x);
    out.push_back(Segment::text(pattern.substr(second + 3)));
    return normalize(std::move(out));
}

/// Text between the [X] and [Y] slots of an X-first pattern with nothing
/// outside the slots but an optional final period; nullopt otherwise.
inline std::optional<std::string> pattern_region(const std::string& pattern) {
    auto px = pattern.find("[X]");
    auto py = pattern.find("[Y]");
    if (px != 0 || py == std::string::npos || py < px) return std::nullopt;
    auto tail = trim(std::string_view(pattern).substr(py + 3));
    if (!tail.empty() && tail != ".") return std::nullopt;
    auto mid = trim(std::string_view(pattern).substr(3, py - 3));
    if (mid.empty()) return std::nullopt;
    return std::string(mid);
}

enum class PremiseMode { EX, IM, NO };

inline const char* to_string(PremiseMode m) {
    switch (m) {
    case PremiseMode::EX: return "EX";
    case PremiseMode::IM: return "IM";
    case PremiseMode::NO: return "NO";
    }
    return "?";
}

inline PremiseMode parse_premise_mode(std::string_view s) {
    if (s == "EX") return PremiseMode::EX;
    if (s == "IM") return PremiseMode::IM;
    if (s == "NO") return PremiseMode::NO;
    throw ValidationError("premise mode must be EX, IM or NO: " + std::string(s));
}

struct Conjunction {
    TemplateKind kind = TemplateKind::Manual;
    std::string text = "Therefore,";

    static Conjunction manual() { return {TemplateKind::Manual, "Therefore,"}; }
    static Conjunction soft() { return {TemplateKind::Soft, {}}; }
};

/// Premise as it enters a reasoning prompt. `rendered` is present iff the
/// premise is explicitly given.
struct RenderedPremise {
    PremiseMode mode = PremiseMode::NO;
    std::optional<Sentence> rendered;
};

/// Joins explicit premises and the hypothesis. Premises are given in reading
/// order. A manual conjunction precedes the hypothesis even when no premise
/// is explicit; a soft conjunction puts <s4> between two explicit premises
/// and <s5> before the hypothesis.
inline ClozePrompt render_reasoning(const std::vector<RenderedPremise>& premises, const ClozePrompt& hypothesis,
                                    const Conjunction& conj, std::size_t mask_count = 1,
                                    const RenderOptions& opt = {}) {
    std::vector<Segment> out;
    std::size_t given = 0;
    for (const auto& p : premises) {
        if (p.mode != PremiseMode::EX) continue;
        if (!p.rendered) throw ValidationError("explicit premise without text");
        if (given > 0) {
            if (conj.kind == TemplateKind::Soft) {
                out.push_back(Segment::text(" "));
                out.push_back(Segment::soft("s4"));
            }
            out.push_back(Segment::text(" "));
        }
        out.insert(out.end(), p.rendered->begin(), p.rendered->end());
        ++given;
    }
    if (given > 0) out.push_back(Segment::text(" "));
    if (conj.kind == TemplateKind::Soft) {
        out.push_back(Segment::soft("s5"));
        out.push_back(Segment::text(" "));
    } else {
        out.push_back(Segment::text(conj.text + " "));
    }
    auto h = hypothesis.with_mask_count(mask_count);
    out.insert(out.end(), h.segments.begin(), h.segments.end());
    ClozePrompt prompt{normalize(std::move(out))};
    if (opt.uncased) detail::lower_all(prompt.segments);
    return prompt;
}

/// A rendered cloze question ready for scoring: prompt, golds, candidates,
/// and (for reasoning inputs) the rule and pseudoword pair to bind.
struct ProbeItem {
    std::string id;
    ClozePrompt prompt;
    std::vector<std::string> golds;
    std::vector<std::string> candidates;
    std::string rule;
    std::optional<std::size_t> pair;
};

inline json to_json(const ProbeItem& it) {
    json j{{"id", it.id}, {"prompt", to_json(it.prompt.segments)}, {"golds", it.golds}, {"candidates", it.candidates}};
    if (!it.rule.empty()) j["rule"] = it.rule;
    if (it.pair) j["pair"] = *it.pair;
    return j;
}

inline ProbeItem probe_item_from_json(const json& j) {
    try {
        ProbeItem it;
        it.id = j.at("id").get<std::string>();
        it.prompt.segments = segments_from_json(j.at("prompt"));
        it.golds = j.at("golds").get<std::vector<std::string>>();
        it.candidates = j.at("candidates").get<std::vector<std::string>>();
        it.rule = j.value("rule", std::string{});
        if (j.contains("pair")) it.pair = j["pair"].get<std::size_t>();
        check_cloze(it.prompt);
        return it;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed probe record: ") + e.what());
    }
}

/// Memorizing sample as a probe item under the given template.
inline ProbeItem probe_item(const MemorizingSample& s, const Template& t, const RenderOptions& opt = {}) {
    ProbeItem it{s.id, render_memorizing(s, t, 1, opt), s.golds, s.candidates, {}, std::nullopt};
    if (opt.uncased) {
        for (auto& g : it.golds) g = to_lower(g);
        for (auto& c : it.candidates) c = to_lower(c);
    }
    return it;
}

} // namespace ontoprobe
