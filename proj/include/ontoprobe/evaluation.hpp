#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "error.hpp"
#include "memorize.hpp"
#include "reasoning.hpp"
#include "scoring.hpp"
#include "util.hpp"

namespace ontoprobe {

struct MetricReport {
    std::map<std::size_t, double> recall; // K -> R@K
    double mrr = 0;
    double mrr_a = 0;
    std::size_t n = 0;
    std::optional<double> accuracy;
    std::size_t unparseable = 0;
};

inline const std::vector<std::size_t>& default_ks() {
    static const std::vector<std::size_t> ks{1, 5};
    return ks;
}

/// Metrics over per-sample gold ranks (1-based). R@K counts a sample when
/// any gold is within the top K, MRR uses the best gold rank, and MRR_a the
/// reciprocal of the mean gold rank.
inline MetricReport compute_metrics(const std::vector<std::vector<std::size_t>>& gold_ranks,
                                    const std::vector<std::size_t>& ks = default_ks()) {
    if (gold_ranks.empty()) throw ValidationError("cannot compute metrics over an empty result set");
    MetricReport m;
    m.n = gold_ranks.size();
    for (auto k : ks) {
        if (k == 0) throw ValidationError("K must be >= 1");
        m.recall[k] = 0;
    }
    for (const auto& ranks : gold_ranks) {
        if (ranks.empty()) throw ValidationError("sample without a gold rank");
        std::size_t best = ranks.front();
        double sum = 0;
        for (auto r : ranks) {
            if (r == 0) throw ValidationError("ranks are 1-based");
            best = std::min(best, r);
            sum += static_cast<double>(r);
        }
        for (auto& [k, v] : m.recall)
            if (best <= k) v += 1;
        m.mrr += 1.0 / static_cast<double>(best);
        m.mrr_a += static_cast<double>(ranks.size()) / sum;
    }
    const double n = static_cast<double>(m.n);
    for (auto& [k, v] : m.recall) v /= n;
    m.mrr /= n;
    m.mrr_a /= n;
    return m;
}

/// Failed results are skipped; returns nullopt when nothing is left.
inline std::optional<MetricReport> metrics_of(const std::vector<ProbeResult>& results,
                                              const std::vector<std::size_t>& ks = default_ks()) {
    std::vector<std::vector<std::size_t>> ranks;
    for (const auto& r : results)
        if (r.ok()) ranks.push_back(r.gold_ranks);
    if (ranks.empty()) return std::nullopt;
    return compute_metrics(ranks, ks);
}

/// Mean of several reports, field by field.
inline MetricReport average_reports(const std::vector<MetricReport>& reports) {
    if (reports.empty()) throw ValidationError("nothing to average");
    MetricReport m;
    for (const auto& r : reports) {
        for (const auto& [k, v] : r.recall) m.recall[k] += v;
        m.mrr += r.mrr;
        m.mrr_a += r.mrr_a;
        m.n += r.n;
    }
    const double c = static_cast<double>(reports.size());
    for (auto& [k, v] : m.recall) v /= c;
    m.mrr /= c;
    m.mrr_a /= c;
    return m;
}

struct RankedList {
    std::string id;
    std::vector<std::string> ranking;
    std::vector<std::size_t> gold_ranks;
};

/// Train gold labels by descending frequency (ties by first occurrence),
/// then the remaining candidates in one seeded random order shared by all
/// test samples.
inline std::vector<RankedList> frequency_baseline(const std::vector<MemorizingSample>& train,
                                                  const std::vector<MemorizingSample>& test, std::uint64_t seed) {
    if (train.empty()) throw ValidationError("frequency baseline needs training samples");
    std::map<std::string, std::pair<std::size_t, std::size_t>> freq; // label -> (count, first index)
    std::size_t order = 0;
    for (const auto& s : train)
        for (const auto& g : s.golds) {
            auto [it, fresh] = freq.emplace(g, std::pair{std::size_t{0}, order});
            if (fresh) ++order;
            ++it->second.first;
        }
    std::vector<std::string> head;
    for (const auto& [label, _] : freq) head.push_back(label);
    std::sort(head.begin(), head.end(), [&](const auto& a, const auto& b) {
        const auto& fa = freq.at(a);
        const auto& fb = freq.at(b);
        return fa.first != fb.first ? fa.first > fb.first : fa.second < fb.second;
    });

    std::set<std::string> universe;
    for (const auto& s : test) universe.insert(s.candidates.begin(), s.candidates.end());
    std::vector<std::string> tail(universe.begin(), universe.end());
    Rng rng(seed);
    rng.shuffle(tail);
    std::map<std::string, std::size_t> tail_pos;
    for (std::size_t i = 0; i < tail.size(); ++i) tail_pos[tail[i]] = i;

    std::vector<RankedList> out;
    for (const auto& s : test) {
        RankedList r{s.id, {}, {}};
        std::set<std::string> cands(s.candidates.begin(), s.candidates.end());
        std::set<std::string> placed;
        for (const auto& h : head)
            if (cands.count(h) && placed.insert(h).second) r.ranking.push_back(h);
        std::vector<std::string> rest;
        for (const auto& c : cands)
            if (!placed.count(c)) rest.push_back(c);
        std::sort(rest.begin(), rest.end(), [&](const auto& a, const auto& b) { return tail_pos.at(a) < tail_pos.at(b); });
        r.ranking.insert(r.ranking.end(), rest.begin(), rest.end());
        for (const auto& g : s.golds) {
            auto it = std::find(r.ranking.begin(), r.ranking.end(), g);
            if (it == r.ranking.end()) throw ValidationError("gold '" + g + "' of " + s.id + " is not a candidate");
            r.gold_ranks.push_back(static_cast<std::size_t>(it - r.ranking.begin()) + 1);
        }
        out.push_back(std::move(r));
    }
    return out;
}

struct PremiseScore {
    std::string id;
    std::optional<double> reciprocal_rank;
};

struct PremiseVerdict {
    std::string id;
    double reciprocal_rank = 0;
    bool memorized = false;
};

/// Sorts by reciprocal rank (descending, ties by id) and marks the first
/// floor(n/2) as memorized.
inline std::vector<PremiseVerdict> classify_premises(const std::vector<PremiseScore>& premises) {
    std::vector<PremiseVerdict> out;
    std::set<std::string> seen;
    for (const auto& p : premises) {
        if (!p.reciprocal_rank) throw ValidationError("premise " + p.id + " has no reciprocal rank");
        if (!seen.insert(p.id).second) throw ValidationError("duplicate premise id " + p.id);
        out.push_back({p.id, *p.reciprocal_rank, false});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return a.reciprocal_rank != b.reciprocal_rank ? a.reciprocal_rank > b.reciprocal_rank : a.id < b.id;
    });
    for (std::size_t i = 0; i < out.size() / 2; ++i) out[i].memorized = true;
    return out;
}

/// Premise verdicts computed per premise set: one set per (rule, position).
inline std::map<std::string, bool> classify_premise_probes(const std::vector<PremiseProbe>& probes,
                                                           const std::vector<ProbeResult>& results) {
    std::map<std::string, const ProbeResult*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    std::map<std::string, std::vector<PremiseScore>> sets;
    for (const auto& p : probes) {
        PremiseScore s{p.premise_id, std::nullopt};
        if (auto it = by_id.find(p.premise_id); it != by_id.end() && it->second->ok()) {
            const auto& ranks = it->second->gold_ranks;
            s.reciprocal_rank = 1.0 / static_cast<double>(*std::min_element(ranks.begin(), ranks.end()));
        }
        sets[std::string(to_string(p.rule)) + "/" + p.position].push_back(std::move(s));
    }
    std::map<std::string, bool> verdicts;
    for (const auto& [_, set] : sets)
        for (const auto& v : classify_premises(set)) verdicts[v.id] = v.memorized;
    return verdicts;
}

/// Whether an instance belongs in its grid cell given premise verdicts: IM
/// needs a memorized premise, NO a non-memorized one, EX either.
inline bool fits_cell(const ReasoningInstance& inst, const std::map<std::string, bool>& memorized) {
    auto ok = [&](const Premise& p) {
        if (p.mode == PremiseMode::EX) return true;
        auto it = memorized.find(p.id);
        if (it == memorized.end()) throw ValidationError("no verdict for premise " + p.id);
        return p.mode == PremiseMode::IM ? it->second : !it->second;
    };
    return ok(inst.p1) && ok(inst.p2);
}

struct CellReport {
    std::string rule;
    std::string cell;
    std::size_t instances = 0;
    std::size_t pairs = 0;
    std::optional<MetricReport> metrics;
};

/// Per rule and grid cell: metrics over the instances that fit the cell,
/// computed for each pseudoword pair separately and then averaged.
inline std::vector<CellReport> assemble_cells(const std::vector<ReasoningInstance>& instances,
                                              const std::vector<ProbeResult>& results,
                                              const std::map<std::string, bool>& memorized,
                                              const std::vector<std::size_t>& ks = default_ks()) {
    std::map<std::string, const ProbeResult*> by_id;
    for (const auto& r : results) by_id[r.id] = &r;
    // (rule, cell) -> pair -> gold ranks
    std::map<std::pair<RdfsRule, std::string>, std::map<std::size_t, std::vector<std::vector<std::size_t>>>> groups;
    std::map<std::pair<RdfsRule, std::string>, std::size_t> counts;
    for (const auto& inst : instances) {
        auto key = std::pair{inst.rule, cell_name(inst.cell())};
        auto& g = groups[key];
        if (!fits_cell(inst, memorized)) continue;
        auto it = by_id.find(inst.id);
        if (it == by_id.end() || !it->second->ok()) continue;
        g[inst.pair].push_back(it->second->gold_ranks);
        ++counts[key];
    }
    std::vector<CellReport> out;
    for (const auto& [key, pairs] : groups) {
        CellReport c{to_string(key.first), key.second, counts[key], 0, std::nullopt};
        std::vector<MetricReport> per_pair;
        for (const auto& [_, ranks] : pairs)
            if (!ranks.empty()) per_pair.push_back(compute_metrics(ranks, ks));
        c.pairs = per_pair.size();
        if (!per_pair.empty()) c.metrics = average_reports(per_pair);
        out.push_back(std::move(c));
    }
    return out;
}

/// Multiple-choice accuracy. Unparseable answers count as wrong and are
/// tallied separately.
inline MetricReport mc_accuracy(const std::vector<MultipleChoiceQuestion>& questions,
                                const std::map<std::string, std::string>& answers) {
    if (questions.empty()) throw ValidationError("no questions");
    MetricReport m;
    std::size_t correct = 0;
    for (const auto& q : questions) {
        auto it = answers.find(q.id);
        std::optional<std::size_t> choice;
        if (it != answers.end()) choice = parse_choice(it->second, q.choices.size());
        if (!choice) ++m.unparseable;
        else if (*choice == q.answer_index) ++correct;
    }
    m.n = questions.size();
    m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n);
    return m;
}

inline json to_json(const MetricReport& m) {
    json j{{"n", m.n}, {"mrr", m.mrr}, {"mrr_a", m.mrr_a}};
    for (const auto& [k, v] : m.recall) j["r@" + std::to_string(k)] = v;
    if (m.accuracy) {
        j["accuracy"] = *m.accuracy;
        j["unparseable"] = m.unparseable;
    }
    return j;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

/// One report row: task x config x metrics.
struct ReportRow {
    std::string task;
    std::string config;
    MetricReport metrics;
};

/// Table with columns task, config, n, R@K..., MRR, MRR_a.
inline std::string report_tsv(const std::vector<ReportRow>& rows, const std::vector<std::size_t>& ks = default_ks()) {
    std::string out = "task\tconfig\tn";
    for (auto k : ks) out += "\tR@" + std::to_string(k);
    out += "\tMRR\tMRR_a\n";
    for (const auto& r : rows) {
        out += r.task + '\t' + r.config + '\t' + std::to_string(r.metrics.n);
        for (auto k : ks) {
            auto it = r.metrics.recall.find(k);
            out += '\t' + (it == r.metrics.recall.end() ? std::string("-") : fmt(it->second));
        }
        out += '\t' + fmt(r.metrics.mrr) + '\t' + fmt(r.metrics.mrr_a) + '\n';
    }
    return out;
}

/// Keeps, per task, the row with the highest MRR (first wins on ties) and
/// records the winning config.
inline std::vector<ReportRow> best_per_task(const std::vector<ReportRow>& rows) {
    std::map<std::string, ReportRow> best;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        auto it = best.find(r.task);
        if (it == best.end()) {
            best.emplace(r.task, r);
            order.push_back(r.task);
        } else if (r.metrics.mrr > it->second.metrics.mrr) {
            it->second = r;
        }
    }
    std::vector<ReportRow> out;
    for (const auto& t : order) out.push_back(best.at(t));
    return out;
}

/// Macro average of MRR over tasks (e.g. rules), per config.
inline std::string macro_tsv(const std::vector<ReportRow>& rows) {
    std::map<std::string, std::vector<double>> by_config;
    std::vector<std::string> order;
    for (const auto& r : rows) {
        if (!by_config.count(r.config)) order.push_back(r.config);
        by_config[r.config].push_back(r.metrics.mrr);
    }
    std::string out = "config\ttasks\tmacro_MRR\n";
    for (const auto& c : order) {
        const auto& v = by_config[c];
        double s = 0;
        for (double x : v) s += x;
        out += c + '\t' + std::to_string(v.size()) + '\t' + fmt(s / static_cast<double>(v.size())) + '\n';
    }
    return out;
}

} // namespace ontoprobe
