#pragma once

#include <algorithm>
#include <cstdio>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "backend.hpp"
#include "error.hpp"
#include "prompting.hpp"
#include "records.hpp"
#include "util.hpp"

namespace ontoprobe {

enum class Pooling { Mean, Max, First };

inline const char* to_string(MaskMode m) { return m == MaskMode::Multiple ? "multiple" : "single"; }
inline const char* to_string(Pooling p) {
    switch (p) {
    case Pooling::Mean: return "mean";
    case Pooling::Max: return "max";
    case Pooling::First: return "first";
    }
    return "?";
}

inline MaskMode parse_mask_mode(std::string_view s) {
    if (s == "multiple") return MaskMode::Multiple;
    if (s == "single") return MaskMode::Single;
    throw ValidationError("mask mode must be multiple or single: " + std::string(s));
}

inline Pooling parse_pooling(std::string_view s) {
    if (s == "mean") return Pooling::Mean;
    if (s == "max") return Pooling::Max;
    if (s == "first") return Pooling::First;
    throw ValidationError("pooling must be mean, max or first: " + std::string(s));
}

struct ScoringConfig {
    MaskMode mask_mode = MaskMode::Multiple;
    Pooling pooling = Pooling::Mean;

    /// "multiple-mean" etc.
    std::string name() const { return std::string(to_string(mask_mode)) + "-" + to_string(pooling); }

    static ScoringConfig parse(std::string_view s) {
        auto dash = s.find('-');
        if (dash == std::string_view::npos) throw ValidationError("scoring config looks like multiple-mean: " + std::string(s));
        return {parse_mask_mode(s.substr(0, dash)), parse_pooling(s.substr(dash + 1))};
    }

    friend bool operator==(const ScoringConfig&, const ScoringConfig&) = default;
};

inline std::vector<ScoringConfig> all_scoring_configs() {
    std::vector<ScoringConfig> out;
    for (auto m : {MaskMode::Multiple, MaskMode::Single})
        for (auto p : {Pooling::Mean, Pooling::Max, Pooling::First}) out.push_back({m, p});
    return out;
}

inline double pool(const std::vector<double>& s, Pooling p) {
    if (s.empty()) throw ValidationError("cannot pool an empty log-prob list");
    switch (p) {
    case Pooling::Mean: {
        double sum = 0;
        for (double x : s) sum += x;
        return sum / static_cast<double>(s.size());
    }
    case Pooling::Max: return *std::max_element(s.begin(), s.end());
    case Pooling::First: return s.front();
    }
    return 0;
}

struct TokenizedCandidate {
    std::string surface;
    std::vector<std::string> tokens;

    std::size_t n() const { return tokens.size(); }
};

struct ScoredCandidate {
    TokenizedCandidate candidate;
    std::vector<double> per_token;
    double score = 0;
    std::size_t rank = 0;
};

/// Surface -> tokens memo, filled in batches.
class TokenCache {
public:
    void fill(Backend& backend, const std::vector<std::string>& surfaces) {
        std::vector<std::string> missing;
        std::set<std::string> seen;
        for (const auto& s : surfaces)
            if (!cache_.count(s) && seen.insert(s).second) missing.push_back(s);
        if (missing.empty()) return;
        for (const auto& s : missing)
            if (trim(s).empty()) throw ValidationError("candidate tokenizes to 0 tokens: '" + s + "'");
        auto toks = backend.tokenize(missing);
        if (toks.size() != missing.size()) throw BackendError("tokenize returned the wrong number of results");
        for (std::size_t i = 0; i < missing.size(); ++i) {
            if (toks[i].empty()) throw ValidationError("candidate tokenizes to 0 tokens: '" + missing[i] + "'");
            cache_.emplace(missing[i], std::move(toks[i]));
        }
    }

    const std::vector<std::string>& at(const std::string& surface) const {
        auto it = cache_.find(surface);
        if (it == cache_.end()) throw std::logic_error("surface not tokenized: " + surface);
        return it->second;
    }

    std::size_t size() const { return cache_.size(); }

private:
    std::map<std::string, std::vector<std::string>> cache_;
};

/// Backend requests for one prompt. In multiple mode there is one request
/// per distinct candidate length n, with n masks; in single mode a single
/// one-mask request covers every token of every candidate.
struct ScoringPlan {
    std::vector<TokenizedCandidate> candidates;
    std::vector<std::size_t> lengths;
    std::vector<LogprobRequest> requests;
};

inline ScoringPlan plan_scoring(const ClozePrompt& prompt, std::vector<TokenizedCandidate> candidates,
                                const ScoringConfig& cfg, const std::map<std::string, Vector>& pseudowords = {},
                                const std::map<std::string, Vector>& soft = {}) {
    if (candidates.empty()) throw ValidationError("no candidates to score");
    check_cloze(prompt);
    ScoringPlan plan;
    for (const auto& c : candidates)
        if (c.tokens.empty()) throw ValidationError("candidate tokenizes to 0 tokens: '" + c.surface + "'");
    auto bind = [&](LogprobRequest& r) {
        for (const auto& s : r.prompt.segments) {
            if (s.kind == Segment::Kind::Pseudo)
                if (auto it = pseudowords.find(s.value); it != pseudowords.end()) r.pseudowords.insert(*it);
            if (s.kind == Segment::Kind::Soft)
                if (auto it = soft.find(s.value); it != soft.end()) r.soft.insert(*it);
        }
    };
    if (cfg.mask_mode == MaskMode::Multiple) {
        std::set<std::size_t> ns;
        for (const auto& c : candidates) ns.insert(c.n());
        for (auto n : ns) {
            LogprobRequest r;
            r.prompt = prompt.with_mask_count(n);
            std::vector<std::set<std::string>> q(n);
            for (const auto& c : candidates)
                if (c.n() == n)
                    for (std::size_t i = 0; i < n; ++i) q[i].insert(c.tokens[i]);
            for (auto& s : q) r.queries.emplace_back(s.begin(), s.end());
            bind(r);
            plan.lengths.push_back(n);
            plan.requests.push_back(std::move(r));
        }
    } else {
        LogprobRequest r;
        r.prompt = prompt.with_mask_count(1);
        std::set<std::string> q;
        for (const auto& c : candidates) q.insert(c.tokens.begin(), c.tokens.end());
        r.queries.emplace_back(q.begin(), q.end());
        bind(r);
        plan.lengths.push_back(1);
        plan.requests.push_back(std::move(r));
    }
    plan.candidates = std::move(candidates);
    return plan;
}

/// Reads per-token log-probs from the replies, pools them and ranks the
/// candidates by descending score; equal scores keep input order.
inline std::vector<ScoredCandidate> assemble_scores(const ScoringPlan& plan, const std::vector<LogprobReply>& replies,
                                                    const ScoringConfig& cfg) {
    if (replies.size() != plan.requests.size()) throw BackendError("reply count does not match request count");
    for (const auto& r : replies)
        if (!r.ok()) throw BackendError(*r.error, r.request_id, r.retryable);
    auto lookup = [&](std::size_t req, std::size_t pos, const std::string& tok) {
        const auto& vals = replies[req].values;
        if (pos >= vals.size()) throw BackendError("reply is missing mask position " + std::to_string(pos), replies[req].request_id);
        auto it = vals[pos].find(tok);
        if (it == vals[pos].end()) throw BackendError("reply is missing token '" + tok + "'", replies[req].request_id);
        if (!(it->second <= 0)) throw BackendError("log-prob > 0 for token '" + tok + "'", replies[req].request_id);
        return it->second;
    };
    std::vector<ScoredCandidate> out;
    for (const auto& c : plan.candidates) {
        ScoredCandidate s{c, {}, 0, 0};
        if (cfg.mask_mode == MaskMode::Multiple) {
            auto req = static_cast<std::size_t>(std::find(plan.lengths.begin(), plan.lengths.end(), c.n()) - plan.lengths.begin());
            for (std::size_t i = 0; i < c.n(); ++i) s.per_token.push_back(lookup(req, i, c.tokens[i]));
        } else {
            for (const auto& t : c.tokens) s.per_token.push_back(lookup(0, 0, t));
        }
        s.score = pool(s.per_token, cfg.pooling);
        out.push_back(std::move(s));
    }
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
    for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = i + 1;
    return out;
}

inline std::vector<ScoredCandidate> score_candidates(const ClozePrompt& prompt, const std::vector<std::string>& candidates,
                                                     const ScoringConfig& cfg, Backend& backend,
                                                     const std::map<std::string, Vector>& pseudowords = {},
                                                     TokenCache* cache = nullptr) {
    TokenCache local;
    TokenCache& tc = cache ? *cache : local;
    tc.fill(backend, candidates);
    std::vector<TokenizedCandidate> toks;
    for (const auto& c : candidates) toks.push_back({c, tc.at(c)});
    auto plan = plan_scoring(prompt, std::move(toks), cfg, pseudowords);
    return assemble_scores(plan, backend.logprobs_batch(plan.requests), cfg);
}

/// Scored output for one probe item. Failed items keep their id and carry
/// the error instead of a ranking.
struct ProbeResult {
    std::string id;
    std::string config;
    std::vector<ScoredCandidate> ranked;
    std::vector<std::string> golds;
    std::vector<std::size_t> gold_ranks;
    std::optional<std::string> error;
    std::string request_id;

    bool ok() const { return !error.has_value(); }
};

inline std::vector<std::size_t> gold_ranks(const std::vector<ScoredCandidate>& ranked, const std::vector<std::string>& golds) {
    std::vector<std::size_t> out;
    for (const auto& g : golds) {
        auto it = std::find_if(ranked.begin(), ranked.end(), [&](const auto& s) { return s.candidate.surface == g; });
        if (it == ranked.end()) throw ValidationError("gold '" + g + "' is not among the candidates");
        out.push_back(it->rank);
    }
    return out;
}

inline json to_json(const ProbeResult& r) {
    json j{{"id", r.id}, {"config", r.config}, {"golds", r.golds}};
    if (r.error) {
        j["error"] = *r.error;
        if (!r.request_id.empty()) j["request_id"] = r.request_id;
        return j;
    }
    json ranked = json::array();
    for (const auto& s : r.ranked)
        ranked.push_back({{"surface", s.candidate.surface}, {"tokens", s.candidate.tokens},
                          {"logprobs", s.per_token}, {"score", s.score}, {"rank", s.rank}});
    j["ranked"] = std::move(ranked);
    j["gold_ranks"] = r.gold_ranks;
    return j;
}

inline ProbeResult probe_result_from_json(const json& j) {
    try {
        ProbeResult r;
        r.id = j.at("id").get<std::string>();
        r.config = j.at("config").get<std::string>();
        r.golds = j.at("golds").get<std::vector<std::string>>();
        if (j.contains("error")) {
            r.error = j["error"].get<std::string>();
            r.request_id = j.value("request_id", std::string{});
            return r;
        }
        for (const auto& s : j.at("ranked"))
            r.ranked.push_back({{s.at("surface").get<std::string>(), s.at("tokens").get<std::vector<std::string>>()},
                                s.at("logprobs").get<std::vector<double>>(), s.at("score").get<double>(),
                                s.at("rank").get<std::size_t>()});
        r.gold_ranks = j.at("gold_ranks").get<std::vector<std::size_t>>();
        return r;
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed probe result: ") + e.what());
    }
}

using PseudowordBinder = std::function<std::map<std::string, Vector>(const ProbeItem&)>;

struct ProbeOptions {
    /// Items whose requests are sent together; the client keeps its own
    /// in-flight window.
    std::size_t in_flight = 16;
    /// Extra attempts for retryable backend errors.
    std::size_t retries = 2;
    /// Progress journal; empty disables resume.
    std::string journal;
    PseudowordBinder pseudowords;
    std::map<std::string, Vector> soft;
};

namespace detail {

/// Completed records in a journal. A torn last line is dropped and the file
/// rewritten without it; failed records are dropped so they get retried.
inline std::map<std::string, ProbeResult> replay_journal(const std::string& path, const std::string& config) {
    std::map<std::string, ProbeResult> done;
    std::ifstream in(path);
    if (!in) return done;
    std::string line, kept;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error&) {
            break;
        }
        auto r = probe_result_from_json(j);
        if (r.config != config)
            throw ValidationError("journal " + path + " was written under config " + r.config + ", not " + config);
        if (!r.ok()) continue;
        kept += line + '\n';
        done[r.id] = std::move(r);
    }
    in.close();
    write_file(path, kept);
    return done;
}

} // namespace detail

/// Scores every item and returns one result per item, sorted by id. With a
/// journal, items already recorded there are not sent again.
inline std::vector<ProbeResult> batch_probe(const std::vector<ProbeItem>& items, const ScoringConfig& cfg, Backend& backend,
                                            const ProbeOptions& opt = {}, TokenCache* cache = nullptr) {
    const std::string cfg_name = cfg.name();
    {
        std::set<std::string> ids;
        for (const auto& it : items)
            if (!ids.insert(it.id).second) throw ValidationError("duplicate input id: " + it.id);
    }
    std::map<std::string, ProbeResult> done;
    if (!opt.journal.empty()) done = detail::replay_journal(opt.journal, cfg_name);
    std::FILE* journal = opt.journal.empty() ? nullptr : std::fopen(opt.journal.c_str(), "ab");
    if (!opt.journal.empty() && !journal) throw ValidationError("cannot open journal " + opt.journal);
    struct Closer {
        std::FILE* f;
        ~Closer() {
            if (f) std::fclose(f);
        }
    } closer{journal};

    std::vector<const ProbeItem*> pending;
    for (const auto& it : items)
        if (!done.count(it.id)) pending.push_back(&it);

    TokenCache local;
    TokenCache& tc = cache ? *cache : local;
    {
        std::vector<std::string> surfaces;
        for (const auto* it : pending) surfaces.insert(surfaces.end(), it->candidates.begin(), it->candidates.end());
        tc.fill(backend, surfaces);
    }

    auto record = [&](ProbeResult r) {
        if (journal) {
            std::string line = to_json(r).dump() + '\n';
            std::fwrite(line.data(), 1, line.size(), journal);
            std::fflush(journal);
        }
        done[r.id] = std::move(r);
    };

    const std::size_t chunk = std::max<std::size_t>(1, opt.in_flight);
    for (std::size_t start = 0; start < pending.size(); start += chunk) {
        std::vector<const ProbeItem*> batch(pending.begin() + static_cast<std::ptrdiff_t>(start),
                                            pending.begin() + static_cast<std::ptrdiff_t>(std::min(pending.size(), start + chunk)));
        std::vector<ScoringPlan> plans;
        for (const auto* it : batch) {
            std::vector<TokenizedCandidate> toks;
            for (const auto& c : it->candidates) toks.push_back({c, tc.at(c)});
            auto pw = opt.pseudowords ? opt.pseudowords(*it) : std::map<std::string, Vector>{};
            plans.push_back(plan_scoring(it->prompt, std::move(toks), cfg, pw, opt.soft));
        }
        std::vector<bool> finished(batch.size(), false);
        std::vector<std::vector<LogprobReply>> last(batch.size());
        for (std::size_t attempt = 0; attempt <= opt.retries; ++attempt) {
            std::vector<LogprobRequest> reqs;
            std::vector<std::pair<std::size_t, std::size_t>> where; // (item, count)
            for (std::size_t i = 0; i < batch.size(); ++i) {
                if (finished[i]) continue;
                where.emplace_back(i, plans[i].requests.size());
                reqs.insert(reqs.end(), plans[i].requests.begin(), plans[i].requests.end());
            }
            if (reqs.empty()) break;
            auto replies = backend.logprobs_batch(reqs);
            std::size_t off = 0;
            for (auto [i, count] : where) {
                std::vector<LogprobReply> mine(replies.begin() + static_cast<std::ptrdiff_t>(off),
                                               replies.begin() + static_cast<std::ptrdiff_t>(off + count));
                off += count;
                bool retry = std::any_of(mine.begin(), mine.end(), [](const auto& r) { return !r.ok() && r.retryable; });
                bool failed = std::any_of(mine.begin(), mine.end(), [](const auto& r) { return !r.ok(); });
                last[i] = std::move(mine);
                if (!failed || !retry) finished[i] = true;
            }
        }
        for (std::size_t i = 0; i < batch.size(); ++i) {
            const auto& it = *batch[i];
            ProbeResult r;
            r.id = it.id;
            r.config = cfg_name;
            r.golds = it.golds;
            try {
                r.ranked = assemble_scores(plans[i], last[i], cfg);
                r.gold_ranks = gold_ranks(r.ranked, it.golds);
            } catch (const BackendError& e) {
                r.ranked.clear();
                r.error = e.what();
                r.request_id = e.request_id();
            }
            record(std::move(r));
        }
    }

    std::vector<ProbeResult> out;
    for (const auto& it : items) out.push_back(done.at(it.id));
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    return out;
}

} // namespace ontoprobe
