// ontoprobe command-line driver.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "ontoprobe/ontoprobe.hpp"

namespace fs = std::filesystem;
using namespace ontoprobe;

namespace {

void warn(const std::string& msg) { std::cerr << "warning: " << msg << '\n'; }

std::string join(const std::vector<std::string>& v, const char* sep = ",") {
    std::string out;
    for (const auto& s : v) out += (out.empty() ? "" : sep) + s;
    return out;
}

/// Input record file whose header carries the expected kind.
RecordFile read_kind(const std::string& path, std::initializer_list<const char*> kinds) {
    auto f = read_records(path);
    auto kind = f.header.value("kind", std::string{});
    for (const char* k : kinds)
        if (kind == k) return f;
    throw ValidationError(path + ": expected a " + join(std::vector<std::string>(kinds.begin(), kinds.end()), " or ") +
                          " file, got '" + kind + "'");
}

json manifest_header(RunManifest m, const std::string& kind) {
    json h = to_json(m);
    h["kind"] = kind;
    return h;
}

std::vector<std::string> grid_names(const std::vector<PremiseCell>& grid) {
    std::vector<std::string> out;
    for (const auto& c : grid) out.push_back(cell_name(c));
    return out;
}

void uncase(ProbeItem& it) {
    detail::lower_all(it.prompt.segments);
    for (auto& g : it.golds) g = to_lower(g);
    std::vector<std::string> cands;
    std::set<std::string> seen;
    for (const auto& c : it.candidates)
        if (seen.insert(to_lower(c)).second) cands.push_back(to_lower(c));
    it.candidates = std::move(cands);
}

// ---------------------------------------------------------------------------
// Probe inputs

struct ProbeInput {
    std::string kind;   // memorizing | reasoning | premises | mc
    json header;
    std::vector<ProbeItem> items;
    std::vector<MultipleChoiceQuestion> questions;
};

struct RenderChoice {
    TemplateChoice tmpl;
    Conjunction conj = Conjunction::manual();
    bool uncased = false;
    std::string split = "test";
};

ProbeInput load_probe_input(const std::string& path, const RenderChoice& rc, const TemplateBook& book) {
    auto f = read_kind(path, {"memorizing", "reasoning", "premises", "mc"});
    ProbeInput in{f.header.at("kind").get<std::string>(), f.header, {}, {}};
    if (in.kind == "memorizing") {
        for (const auto& r : f.records) {
            auto s = memorizing_from_json(r);
            if (rc.split != "all" && to_string(s.split) != rc.split) continue;
            const auto& t = book.get(relation_of(s.subtask), rc.tmpl.kind, rc.tmpl.variant);
            in.items.push_back(probe_item(s, t));
        }
    } else if (in.kind == "reasoning") {
        for (const auto& r : f.records) in.items.push_back(probe_item(reasoning_from_json(r), rc.conj));
    } else if (in.kind == "premises") {
        for (const auto& r : f.records) in.items.push_back(probe_item_from_json(r));
    } else {
        for (const auto& r : f.records) in.questions.push_back(question_from_json(r));
    }
    if (rc.uncased)
        for (auto& it : in.items) uncase(it);
    return in;
}

struct BackendChoice {
    std::string spec = "mock-oracle";
    std::size_t in_flight = 8;
    double floor = -5.0;
};

/// mock-oracle favours the golds of the items it will see; mock-oracle:<file>
/// loads a table; cmd:/tcp: connect to a wire-protocol server.
std::unique_ptr<Backend> make_backend(const BackendChoice& bc, const ProbeInput& in, MaskMode mode, std::size_t dimension,
                                      bool uncased) {
    if (bc.spec == "mock-oracle" || bc.spec.rfind("mock-oracle:", 0) == 0) {
        auto oracle = std::make_unique<MockOracle>(bc.floor, dimension, uncased);
        if (bc.spec == "mock-oracle") {
            favor_golds(*oracle, in.items, mode);
            std::map<std::string, std::string> answers;
            for (const auto& q : in.questions) answers[fingerprint(q.prompt)] = std::string("(") + q.answer_letter() + ")";
            oracle->set_complete_answers(std::move(answers));
        } else {
            auto path = bc.spec.substr(std::string("mock-oracle:").size());
            load_oracle_spec(*oracle, read_file(path), path);
        }
        return oracle;
    }
    return connect_backend(bc.spec, bc.in_flight);
}

struct ProbeRun {
    RecordFile out;
    std::vector<ProbeResult> results;
};

/// Scores `in` under one config and builds the result file.
ProbeRun run_probe(const ProbeInput& in, Backend& backend, const ScoringConfig& cfg, const RenderChoice& rc,
                   const ProbeOptions& opt, const std::string& input_path, const std::uint64_t seed) {
    auto hs = backend.handshake();
    RunManifest m;
    m.command = "probe";
    m.graph_hash = in.header.value("graph_hash", std::string{});
    m.seeds = {{"probe", seed}};
    m.template_variant = in.kind == "memorizing" ? rc.tmpl.name() : in.header.value("template", std::string{});
    m.scoring = {cfg.name()};
    m.backend = to_json(hs);
    m.extra = {{"input", input_path}, {"source_kind", in.kind}};
    if (in.header.contains("subtask")) m.extra["subtask"] = in.header["subtask"];
    if (in.kind == "reasoning") m.extra["conjunction"] = to_string(rc.conj.kind);
    if (in.kind == "memorizing") m.extra["split"] = rc.split;
    if (rc.uncased) m.extra["uncased"] = true;

    ProbeRun run;
    if (in.kind == "mc") {
        run.out.header = manifest_header(m, "answers");
        std::vector<MultipleChoiceQuestion> qs = in.questions;
        std::sort(qs.begin(), qs.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
        for (const auto& q : qs) {
            json r = to_json(q);
            r["response"] = backend.complete(q.prompt);
            run.out.records.push_back(std::move(r));
        }
        return run;
    }
    run.out.header = manifest_header(m, "results");
    run.results = batch_probe(in.items, cfg, backend, opt);
    std::size_t failed = 0;
    for (const auto& r : run.results) {
        if (!r.ok()) ++failed;
        run.out.records.push_back(to_json(r));
    }
    if (failed) warn(std::to_string(failed) + " of " + std::to_string(run.results.size()) + " items failed; see error fields");
    return run;
}

// ---------------------------------------------------------------------------
// Evaluation

std::vector<ReportRow> eval_results(const RecordFile& f, const std::string& source, const std::vector<std::size_t>& ks,
                                    const std::string& instances_path, const std::string& premises_path,
                                    const std::string& premise_results_path) {
    const auto kind = f.header.value("kind", std::string{});
    if (kind == "answers") {
        std::vector<MultipleChoiceQuestion> qs;
        std::map<std::string, std::string> answers;
        for (const auto& r : f.records) {
            qs.push_back(question_from_json(r));
            answers[qs.back().id] = r.value("response", std::string{});
        }
        std::string task = f.header.value("subtask", std::string("mc"));
        return {{task + "/mc", "complete", mc_accuracy(qs, answers)}};
    }
    if (kind != "results") throw ValidationError(source + ": expected a results or answers file");
    std::vector<ProbeResult> results;
    for (const auto& r : f.records) results.push_back(probe_result_from_json(r));
    std::string config = f.header.at("scoring").at(0).get<std::string>();
    if (f.header.contains("template")) config = f.header["template"].get<std::string>() + "/" + config;
    const auto source_kind = f.header.value("source_kind", std::string{});
    std::vector<ReportRow> rows;
    if (source_kind == "reasoning") {
        if (instances_path.empty() || premises_path.empty() || premise_results_path.empty())
            throw ValidationError("reasoning results need --instances, --premises and --premise-results");
        auto inst_file = read_kind(instances_path, {"reasoning"});
        auto prem_file = read_kind(premises_path, {"premises"});
        auto pres_file = read_kind(premise_results_path, {"results"});
        const auto hash = f.header.value("graph_hash", std::string{});
        check_graph_hash(inst_file.header, hash, instances_path);
        check_graph_hash(prem_file.header, hash, premises_path);
        check_graph_hash(pres_file.header, hash, premise_results_path);
        std::vector<ReasoningInstance> instances;
        for (const auto& r : inst_file.records) instances.push_back(reasoning_from_json(r));
        std::vector<PremiseProbe> probes;
        for (const auto& r : prem_file.records) {
            auto item = probe_item_from_json(r);
            probes.push_back({item.id, parse_rule(item.rule), r.at("position").get<std::string>(), item.pair, item});
        }
        std::vector<ProbeResult> presults;
        for (const auto& r : pres_file.records) presults.push_back(probe_result_from_json(r));
        auto verdicts = classify_premise_probes(probes, presults);
        for (const auto& c : assemble_cells(instances, results, verdicts, ks)) {
            if (!c.metrics) {
                warn(c.rule + " " + c.cell + ": no instances fit the cell");
                continue;
            }
            rows.push_back({c.rule + "/" + c.cell, config, *c.metrics});
        }
        return rows;
    }
    std::string task = f.header.value("subtask", source_kind);
    if (auto m = metrics_of(results, ks)) rows.push_back({task, config, *m});
    else warn(source + ": no successful results");
    return rows;
}

RecordFile metrics_file(const std::vector<ReportRow>& rows, json header) {
    header["kind"] = "metrics";
    RecordFile f{std::move(header), {}};
    for (const auto& r : rows) f.records.push_back({{"task", r.task}, {"config", r.config}, {"metrics", to_json(r.metrics)}});
    return f;
}

std::vector<ReportRow> rows_from_metrics(const RecordFile& f) {
    std::vector<ReportRow> rows;
    for (const auto& r : f.records) {
        ReportRow row{r.at("task").get<std::string>(), r.at("config").get<std::string>(), {}};
        const auto& m = r.at("metrics");
        row.metrics.n = m.at("n").get<std::size_t>();
        row.metrics.mrr = m.at("mrr").get<double>();
        row.metrics.mrr_a = m.at("mrr_a").get<double>();
        for (const auto& [k, v] : m.items())
            if (k.rfind("r@", 0) == 0) row.metrics.recall[std::stoul(k.substr(2))] = v.get<double>();
        if (m.contains("accuracy")) {
            row.metrics.accuracy = m["accuracy"].get<double>();
            row.metrics.unparseable = m.value("unparseable", std::size_t{0});
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::vector<std::size_t> parse_ks(const std::string& s) {
    std::vector<std::size_t> ks;
    for (const auto& p : split(s, ',')) {
        try {
            ks.push_back(std::stoul(std::string(trim(p))));
        } catch (const std::exception&) {
            throw ValidationError("bad K list: " + s);
        }
    }
    return ks;
}

std::string accuracy_tsv(const std::vector<ReportRow>& rows) {
    std::string out = "task\tconfig\tn\taccuracy\tunparseable\n";
    for (const auto& r : rows)
        if (r.metrics.accuracy)
            out += r.task + '\t' + r.config + '\t' + std::to_string(r.metrics.n) + '\t' + fmt(*r.metrics.accuracy) + '\t' +
                   std::to_string(r.metrics.unparseable) + '\n';
    return out;
}

std::string rows_tsv(const std::vector<ReportRow>& rows, const std::vector<std::size_t>& ks) {
    std::vector<ReportRow> ranked, mc;
    for (const auto& r : rows) (r.metrics.accuracy ? mc : ranked).push_back(r);
    std::string out;
    if (!ranked.empty()) out += report_tsv(ranked, ks);
    if (!mc.empty()) out += accuracy_tsv(mc);
    return out;
}

/// Splices `--config FILE` entries in front of the subcommand's own flags.
/// Keys already given on the command line are skipped, so the command line
/// wins. Keys may sit at top level or under a [subcommand] section.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    if (args.size() < 2) return args;
    const std::string sub = args[1];
    std::string file;
    for (std::size_t i = 2; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            file = args[i + 1];
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
            args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
            break;
        }
    }
    if (file.empty()) return args;
    auto given = [&](const std::string& flag) {
        return std::any_of(args.begin() + 2, args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> extra;
    for (const auto& item : CLI::ConfigINI().from_file(file)) {
        if (item.name == "++" || item.name == "--") continue; // section markers
        if (!item.parents.empty() && !(item.parents.size() == 1 && item.parents[0] == sub)) continue;
        const std::string flag = "--" + item.name;
        if (given(flag)) continue;
        if (item.inputs.size() == 1) {
            extra.push_back(flag + "=" + item.inputs[0]);
        } else {
            extra.push_back(flag);
            extra.insert(extra.end(), item.inputs.begin(), item.inputs.end());
        }
    }
    args.insert(args.begin() + 2, extra.begin(), extra.end());
    return args;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ontoprobe: ontology knowledge probes for masked language models"};
    app.require_subcommand(1);
    std::function<void()> run;

    auto with_config = [](CLI::App* sub) {
        sub->set_config("--config", "", "key=value file; flags given on the command line win");
    };

    // ingest -----------------------------------------------------------------
    struct {
        std::string dump, patch, out, report;
        std::size_t k = 10;
        std::uint64_t seed = 0;
    } ig;
    auto* ingest_cmd = app.add_subcommand("ingest", "Build an ontology graph from an offline dump");
    with_config(ingest_cmd);
    ingest_cmd->add_option("--dump", ig.dump, "Dump TSV (graph predicates plus `equivalent`)")->required();
    ingest_cmd->add_option("--k", ig.k, "Instances sampled per class")->capture_default_str();
    ingest_cmd->add_option("--seed", ig.seed, "Sampling seed")->required();
    ingest_cmd->add_option("--patch", ig.patch, "Manual constraint patch TSV");
    ingest_cmd->add_option("--out", ig.out, "Output graph TSV")->required();
    ingest_cmd->add_option("--report", ig.report, "Cleansing report TSV");
    ingest_cmd->callback([&] {
        run = [&] {
            auto dump = parse_dump(read_file(ig.dump), ig.dump);
            std::vector<ConstraintPatch> patches;
            if (!ig.patch.empty()) patches = parse_patch(read_file(ig.patch), ig.patch);
            auto res = ingest(dump, ig.k, ig.seed, patches);
            write_graph(res.graph, ig.out);
            if (!ig.report.empty()) write_file(ig.report, res.report.to_tsv());
            std::cout << "graph\t" << ig.out << "\t" << graph_hash(res.graph) << "\n"
                      << "classes\t" << res.graph.classes().size() << "\nproperties\t" << res.graph.properties().size()
                      << "\ninstances\t" << res.graph.instances().size() << "\n";
        };
    });

    // build-graph --------------------------------------------------------------
    struct {
        std::string input, out, provenance;
    } bg;
    auto* build_cmd = app.add_subcommand("build-graph", "Validate a graph, write it canonically, materialize entailments");
    with_config(build_cmd);
    build_cmd->add_option("--graph", bg.input, "Graph TSV")->required();
    build_cmd->add_option("--out", bg.out, "Canonical graph TSV");
    build_cmd->add_option("--provenance", bg.provenance, "Write derived triples with provenance");
    build_cmd->callback([&] {
        run = [&] {
            auto g = load_graph(bg.input);
            if (!bg.out.empty()) write_graph(g, bg.out);
            auto closure = materialize_closure(g);
            if (!bg.provenance.empty()) {
                auto f = provenance_records(closure);
                f.header["graph_hash"] = graph_hash(g);
                write_records(bg.provenance, f);
            }
            std::cout << "graph_hash\t" << graph_hash(g) << "\nbase_triples\t" << closure.base.size()
                      << "\nderived_triples\t" << closure.derived.size() << "\n";
        };
    });

    // gen-mem ----------------------------------------------------------------
    struct {
        std::string graph, out_dir;
        std::uint64_t seed = 0;
        bool direct_types = false;
        std::size_t mc = 0;
        std::size_t train = 10, dev = 10;
    } gm;
    auto* mem_cmd = app.add_subcommand("gen-mem", "Generate the memorizing subtasks");
    with_config(mem_cmd);
    mem_cmd->add_option("--graph", gm.graph, "Graph TSV")->required();
    mem_cmd->add_option("--seed", gm.seed, "Split seed")->required();
    mem_cmd->add_option("--out-dir", gm.out_dir, "Output directory")->required();
    mem_cmd->add_flag("--direct-types", gm.direct_types, "TP golds are the asserted types only");
    mem_cmd->add_option("--train", gm.train, "Training subjects per subtask")->capture_default_str();
    mem_cmd->add_option("--dev", gm.dev, "Development subjects per subtask")->capture_default_str();
    mem_cmd->add_option("--mc", gm.mc, "Also write multiple-choice questions with this many choices");
    mem_cmd->callback([&] {
        run = [&] {
            auto g = load_graph(gm.graph);
            MemorizingOptions opt;
            opt.transitive_types = !gm.direct_types;
            opt.train = gm.train;
            opt.dev = gm.dev;
            auto tasks = generate_memorizing(g, gm.seed, opt);
            fs::create_directories(gm.out_dir);
            for (const auto& [task, set] : tasks) {
                for (const auto& w : set.warnings) warn(w);
                RunManifest m;
                m.command = "gen-mem";
                m.graph_hash = graph_hash(g);
                m.seeds = {{"split", gm.seed}};
                m.candidate_policy = "full_vocabulary";
                m.extra = {{"subtask", to_string(task)},
                           {"transitive_types", opt.transitive_types},
                           {"counts", {{"train", set.train}, {"dev", set.dev}, {"test", set.test}}}};
                RecordFile f{manifest_header(m, "memorizing"), {}};
                for (const auto& s : set.samples) f.records.push_back(to_json(s));
                auto path = (fs::path(gm.out_dir) / (std::string(to_string(task)) + ".jsonl")).string();
                write_records(path, f);
                std::cout << to_string(task) << "\t" << set.samples.size() << "\t" << path << "\n";
                if (gm.mc) {
                    m.extra["choices"] = gm.mc;
                    m.seeds["mc"] = gm.seed;
                    RecordFile q{manifest_header(m, "mc"), {}};
                    std::size_t skipped = 0;
                    for (const auto& s : set.samples) {
                        if (s.split != Split::Test) continue;
                        try {
                            q.records.push_back(to_json(to_multiple_choice(s, gm.mc, gm.seed)));
                        } catch (const ValidationError& e) {
                            ++skipped;
                        }
                    }
                    if (skipped) warn(std::string(to_string(task)) + ": " + std::to_string(skipped) + " samples have too few candidates for " + std::to_string(gm.mc) + " choices");
                    write_records((fs::path(gm.out_dir) / (std::string(to_string(task)) + ".mc.jsonl")).string(), q);
                }
            }
        };
    });

    // gen-reason -------------------------------------------------------------
    struct {
        std::string graph, out, premises, grid = "all", candidates = "full", tmpl = "manual";
        std::uint64_t seed = 0;
        std::size_t pairs = 10, budget = 0;
        bool uncased = false;
    } gr;
    auto* reason_cmd = app.add_subcommand("gen-reason", "Generate reasoning instances over the premise grid");
    with_config(reason_cmd);
    reason_cmd->add_option("--graph", gr.graph, "Graph TSV")->required();
    reason_cmd->add_option("--seed", gr.seed, "Seed for budget sampling")->required();
    reason_cmd->add_option("--out", gr.out, "Reasoning instances output")->required();
    reason_cmd->add_option("--premises", gr.premises, "Premise probe output")->required();
    reason_cmd->add_option("--grid", gr.grid, "all, or cells like EX-EX,NO-NO")->capture_default_str();
    reason_cmd->add_option("--pairs", gr.pairs, "Pseudoword pairs per rule")->capture_default_str();
    reason_cmd->add_option("--budget", gr.budget, "Cap on premise pairs per rule (0: none)")->capture_default_str();
    reason_cmd->add_option("--candidates", gr.candidates, "full or neighborhood")->capture_default_str();
    reason_cmd->add_option("--template", gr.tmpl, "manual or soft")->capture_default_str();
    reason_cmd->add_flag("--uncased", gr.uncased, "Lowercase literal text and candidates");
    reason_cmd->callback([&] {
        run = [&] {
            auto g = load_graph(gr.graph);
            ReasoningOptions opt;
            opt.grid = parse_grid(gr.grid);
            opt.pairs = gr.pairs;
            opt.budget = gr.budget;
            opt.candidates = parse_candidate_policy(gr.candidates);
            opt.template_kind = parse_template_kind(gr.tmpl);
            opt.render.uncased = gr.uncased;
            auto set = generate_reasoning(g, gr.seed, opt);
            for (const auto& w : set.warnings) warn(w);
            RunManifest m;
            m.command = "gen-reason";
            m.graph_hash = graph_hash(g);
            m.seeds = {{"budget", gr.seed}};
            m.template_variant = gr.tmpl;
            m.grid = grid_names(opt.grid);
            m.candidate_policy = to_string(opt.candidates);
            m.extra = {{"pairs", gr.pairs}, {"budget", gr.budget}, {"uncased", gr.uncased}, {"warnings", set.warnings}};
            RecordFile f{manifest_header(m, "reasoning"), {}};
            for (const auto& inst : set.instances) f.records.push_back(to_json(inst));
            write_records(gr.out, f);
            RecordFile p{manifest_header(m, "premises"), {}};
            for (const auto& pr : set.probes) p.records.push_back(to_json(pr));
            write_records(gr.premises, p);
            std::cout << "instances\t" << set.instances.size() << "\npremise_probes\t" << set.probes.size() << "\n";
        };
    });

    // make-table -------------------------------------------------------------
    struct {
        std::string out;
        std::size_t vocab = 1000, dim = 64, mask_id = 0;
        std::uint64_t seed = 0;
    } mt;
    auto* table_cmd = app.add_subcommand("make-table", "Write a random embedding table for desk runs");
    with_config(table_cmd);
    table_cmd->add_option("--vocab", mt.vocab, "Rows")->capture_default_str();
    table_cmd->add_option("--dim", mt.dim, "Dimension")->capture_default_str();
    table_cmd->add_option("--mask-id", mt.mask_id, "Row of [MASK]")->capture_default_str();
    table_cmd->add_option("--seed", mt.seed, "Seed")->required();
    table_cmd->add_option("--out", mt.out, "Output file")->required();
    table_cmd->callback([&] {
        run = [&] { write_table(mt.out, random_table(mt.vocab, mt.dim, mt.seed, mt.mask_id)); };
    });

    // pseudowords ------------------------------------------------------------
    struct {
        std::string table, out;
        std::size_t mask_id = 0, pairs = 10, budget = 10000;
        double alpha = 0.5;
        std::uint64_t seed = 0;
        bool ball = false;
    } pw;
    auto* pw_cmd = app.add_subcommand("pseudowords", "Sample pseudoword pairs near [MASK] for every rule");
    with_config(pw_cmd);
    pw_cmd->add_option("--table", pw.table, "Embedding table file")->required();
    pw_cmd->add_option("--mask-id", pw.mask_id, "Row of [MASK] in the table")->required();
    pw_cmd->add_option("--alpha", pw.alpha, "Distance coefficient")->capture_default_str();
    pw_cmd->add_option("--pairs", pw.pairs, "Pairs per rule")->capture_default_str();
    pw_cmd->add_option("--budget", pw.budget, "Rejected draws allowed per vector")->capture_default_str();
    pw_cmd->add_flag("--max-distance", pw.ball, "Sample within distance d instead of exactly at d");
    pw_cmd->add_option("--seed", pw.seed, "Sampling seed")->required();
    pw_cmd->add_option("--out", pw.out, "Output file")->required();
    pw_cmd->callback([&] {
        run = [&] {
            auto table = read_table(pw.table, pw.mask_id);
            PseudowordOptions opt{pw.alpha, pw.ball, pw.budget};
            auto bank = sample_bank(table, pw.pairs, pw.seed, opt);
            RunManifest m;
            m.command = "pseudowords";
            m.seeds = {{"pseudowords", pw.seed}};
            m.alpha = pw.alpha;
            m.extra = {{"table", pw.table}, {"mask_id", pw.mask_id}, {"pairs", pw.pairs}};
            write_records(pw.out, bank_records(bank, manifest_header(m, "pseudowords")));
            std::cout << "d\t" << bank.d << "\nrules\t" << bank.rules.size() << "\n";
        };
    });

    // probe ------------------------------------------------------------------
    struct {
        std::string input, out, graph, journal, pseudowords, soft, scoring = "multiple-mean", tmpl = "manual3",
                                                                    conj = "manual", split = "test";
        BackendChoice backend;
        std::size_t retries = 2, dimension = 8;
        std::uint64_t seed = 0;
        bool uncased = false;
    } pr;
    auto* probe_cmd = app.add_subcommand("probe", "Score probe inputs against a backend");
    with_config(probe_cmd);
    probe_cmd->add_option("--input", pr.input, "memorizing, reasoning, premises or mc file")->required();
    probe_cmd->add_option("--out", pr.out, "Results file")->required();
    probe_cmd->add_option("--seed", pr.seed, "Run seed (recorded)")->required();
    probe_cmd->add_option("--graph", pr.graph, "Graph TSV; checked against the input's graph hash");
    probe_cmd->add_option("--backend", pr.backend.spec, "mock-oracle, mock-oracle:<table>, cmd:<command> or tcp:<host>:<port>")
        ->capture_default_str();
    probe_cmd->add_option("--scoring", pr.scoring, "Mask mode and pooling, e.g. single-max")->capture_default_str();
    probe_cmd->add_option("--template", pr.tmpl, "manualN or soft (memorizing inputs)")->capture_default_str();
    probe_cmd->add_option("--conjunction", pr.conj, "manual or soft (reasoning inputs)")->capture_default_str();
    probe_cmd->add_option("--split", pr.split, "train, dev, test or all (memorizing inputs)")->capture_default_str();
    probe_cmd->add_option("--journal", pr.journal, "Progress journal for resuming");
    probe_cmd->add_option("--in-flight", pr.backend.in_flight, "Requests in flight")->capture_default_str();
    probe_cmd->add_option("--retries", pr.retries, "Retries for retryable errors")->capture_default_str();
    probe_cmd->add_option("--pseudowords", pr.pseudowords, "Pseudoword file (reasoning inputs)");
    probe_cmd->add_option("--soft", pr.soft, "Soft-token checkpoint sent inline with requests");
    probe_cmd->add_option("--mock-dim", pr.dimension, "Embedding dimension of the mock oracle")->capture_default_str();
    probe_cmd->add_flag("--uncased", pr.uncased, "Lowercase prompts, golds and candidates");

    // shared by probe and sweep
    auto load_bank = [](const std::string& path) -> std::optional<PseudowordBank> {
        if (path.empty()) return std::nullopt;
        return bank_from_records(read_kind(path, {"pseudowords"}));
    };
    auto binder_for = [](const std::optional<PseudowordBank>& bank) -> PseudowordBinder {
        if (!bank) return {};
        return [&b = *bank](const ProbeItem& it) -> std::map<std::string, Vector> {
            if (!it.pair || it.rule.empty()) return {};
            return b.bind(it.rule, *it.pair);
        };
    };

    probe_cmd->callback([&] {
        run = [&] {
            RenderChoice rc{TemplateChoice::parse(pr.tmpl),
                            parse_template_kind(pr.conj) == TemplateKind::Soft ? Conjunction::soft() : Conjunction::manual(),
                            pr.uncased, pr.split};
            if (pr.split != "all") parse_split(pr.split);
            auto cfg = ScoringConfig::parse(pr.scoring);
            auto in = load_probe_input(pr.input, rc, TemplateBook::builtin());
            if (!pr.graph.empty()) check_graph_hash(in.header, graph_hash(load_graph(pr.graph)), pr.input);
            auto bank = load_bank(pr.pseudowords);
            std::size_t dim = bank ? bank->dimension : pr.dimension;
            auto backend = make_backend(pr.backend, in, cfg.mask_mode, dim, pr.uncased);
            auto hs = backend->handshake();
            if (hs.uncased && !pr.uncased) warn("backend is uncased but --uncased was not given");
            ProbeOptions opt;
            opt.in_flight = pr.backend.in_flight;
            opt.retries = pr.retries;
            opt.journal = pr.journal;
            opt.pseudowords = binder_for(bank);
            if (!pr.soft.empty()) opt.soft = read_soft(pr.soft).as_doubles();
            auto res = run_probe(in, *backend, cfg, rc, opt, pr.input, pr.seed);
            if (!pr.pseudowords.empty()) res.out.header["pseudowords"] = pr.pseudowords;
            write_records(pr.out, res.out);
            std::cout << "records\t" << res.out.records.size() << "\t" << pr.out << "\n";
        };
    });

    // oracle-spec / serve-oracle ---------------------------------------------
    struct {
        std::string input, out, scoring = "multiple-mean", tmpl = "manual3", conj = "manual", split = "test";
        bool uncased = false;
    } os;
    auto* spec_cmd = app.add_subcommand("oracle-spec", "Write a gold-favouring oracle table for a probe input");
    with_config(spec_cmd);
    spec_cmd->add_option("--input", os.input, "Probe input file")->required();
    spec_cmd->add_option("--out", os.out, "Oracle table TSV")->required();
    spec_cmd->add_option("--scoring", os.scoring, "Scoring config the table is for")->capture_default_str();
    spec_cmd->add_option("--template", os.tmpl, "manualN or soft")->capture_default_str();
    spec_cmd->add_option("--conjunction", os.conj, "manual or soft")->capture_default_str();
    spec_cmd->add_option("--split", os.split, "Split for memorizing inputs")->capture_default_str();
    spec_cmd->add_flag("--uncased", os.uncased, "Lowercase prompts, golds and candidates");
    spec_cmd->callback([&] {
        run = [&] {
            RenderChoice rc{TemplateChoice::parse(os.tmpl),
                            parse_template_kind(os.conj) == TemplateKind::Soft ? Conjunction::soft() : Conjunction::manual(),
                            os.uncased, os.split};
            auto in = load_probe_input(os.input, rc, TemplateBook::builtin());
            auto mode = ScoringConfig::parse(os.scoring).mask_mode;
            std::vector<std::tuple<std::string, int, std::string, double>> rows;
            MockOracle tok(-5.0, 8, os.uncased);
            std::set<std::tuple<std::string, int, std::string>> seen;
            for (const auto& it : in.items)
                for (const auto& gold : it.golds) {
                    auto toks = tok.tokenize({gold}).front();
                    auto add = [&](const ClozePrompt& p, int pos, const std::string& t) {
                        auto fp = prompt_fingerprint(p);
                        if (seen.emplace(fp, pos, t).second) rows.emplace_back(fp, pos, t, -0.1);
                    };
                    if (mode == MaskMode::Multiple)
                        for (std::size_t i = 0; i < toks.size(); ++i) add(it.prompt.with_mask_count(toks.size()), static_cast<int>(i), toks[i]);
                    else
                        for (const auto& t : toks) add(it.prompt.with_mask_count(1), 0, t);
                }
            write_file(os.out, dump_oracle_spec(rows));
        };
    });

    struct {
        std::string spec;
        int port = -1;
        std::size_t dimension = 8;
        double floor = -5.0;
        bool uncased = false;
    } so;
    auto* serve_cmd = app.add_subcommand("serve-oracle", "Serve a mock oracle over the wire protocol (stdio or TCP)");
    with_config(serve_cmd);
    serve_cmd->add_option("--spec", so.spec, "Oracle table TSV");
    serve_cmd->add_option("--tcp", so.port, "Listen on this localhost port instead of stdio");
    serve_cmd->add_option("--dim", so.dimension, "Embedding dimension")->capture_default_str();
    serve_cmd->add_option("--floor", so.floor, "Log-prob of unlisted tokens")->capture_default_str();
    serve_cmd->add_flag("--uncased", so.uncased, "Advertise an uncased vocabulary");
    serve_cmd->callback([&] {
        run = [&] {
            MockOracle oracle(so.floor, so.dimension, so.uncased);
            if (!so.spec.empty()) load_oracle_spec(oracle, read_file(so.spec), so.spec);
            if (so.port < 0) {
                FdChannel ch(0, 1);
                serve_session(oracle, ch);
                return;
            }
            TcpListener listener(so.port);
            std::cerr << "listening on 127.0.0.1:" << listener.port() << std::endl;
            for (;;) {
                auto ch = listener.accept();
                serve_session(oracle, *ch);
            }
        };
    });

    // eval -------------------------------------------------------------------
    struct {
        std::vector<std::string> results;
        std::string out, ks = "1,5", instances, premises, premise_results, baseline;
        std::uint64_t seed = 0;
    } ev;
    auto* eval_cmd = app.add_subcommand("eval", "Compute metrics from results, answers or a frequency baseline");
    with_config(eval_cmd);
    eval_cmd->add_option("--results", ev.results, "Results or answers files");
    eval_cmd->add_option("--baseline", ev.baseline, "Memorizing file to run the frequency baseline on");
    eval_cmd->add_option("--seed", ev.seed, "Seed for the baseline's random tail")->required();
    eval_cmd->add_option("--ks", ev.ks, "K values for R@K")->capture_default_str();
    eval_cmd->add_option("--instances", ev.instances, "Reasoning instances (reasoning results)");
    eval_cmd->add_option("--premises", ev.premises, "Premise probes (reasoning results)");
    eval_cmd->add_option("--premise-results", ev.premise_results, "Results of the premise probes");
    eval_cmd->add_option("--out", ev.out, "Metrics file");
    eval_cmd->callback([&] {
        run = [&] {
            auto ks = parse_ks(ev.ks);
            std::vector<ReportRow> rows;
            std::string hash;
            for (const auto& path : ev.results) {
                auto f = read_records(path);
                auto h = f.header.value("graph_hash", std::string{});
                if (!hash.empty() && !h.empty() && h != hash)
                    throw ValidationError("manifest mismatch: " + path + " was produced from graph " + h + ", expected " + hash);
                if (hash.empty()) hash = h;
                auto r = eval_results(f, path, ks, ev.instances, ev.premises, ev.premise_results);
                rows.insert(rows.end(), r.begin(), r.end());
            }
            if (!ev.baseline.empty()) {
                auto f = read_kind(ev.baseline, {"memorizing"});
                std::vector<MemorizingSample> train, test;
                for (const auto& r : f.records) {
                    auto s = memorizing_from_json(r);
                    (s.split == Split::Train ? train : test).push_back(s);
                }
                std::vector<MemorizingSample> test_only;
                for (auto& s : test)
                    if (s.split == Split::Test) test_only.push_back(std::move(s));
                std::vector<std::vector<std::size_t>> ranks;
                for (const auto& r : frequency_baseline(train, test_only, ev.seed)) ranks.push_back(r.gold_ranks);
                if (ranks.empty()) throw ValidationError(ev.baseline + ": no test samples");
                rows.push_back({f.header.value("subtask", std::string("memorizing")), "frequency", compute_metrics(ranks, ks)});
                if (hash.empty()) hash = f.header.value("graph_hash", std::string{});
            }
            if (rows.empty()) throw ValidationError("nothing to evaluate: give --results or --baseline");
            std::cout << rows_tsv(rows, ks);
            if (!ev.out.empty()) {
                RunManifest m;
                m.command = "eval";
                m.graph_hash = hash;
                m.seeds = {{"baseline", ev.seed}};
                m.extra = {{"ks", ks}};
                write_records(ev.out, metrics_file(rows, to_json(m)));
            }
        };
    });

    // report -----------------------------------------------------------------
    struct {
        std::vector<std::string> metrics;
        std::string out, macro, ks = "1,5";
        bool best = false;
    } rp;
    auto* report_cmd = app.add_subcommand("report", "Assemble metrics files into report tables");
    with_config(report_cmd);
    report_cmd->add_option("--metrics", rp.metrics, "Metrics files")->required();
    report_cmd->add_option("--out", rp.out, "Task x config table TSV");
    report_cmd->add_option("--macro", rp.macro, "Macro-averaged MRR per config TSV");
    report_cmd->add_option("--ks", rp.ks, "K columns")->capture_default_str();
    report_cmd->add_flag("--best", rp.best, "Keep only the best config per task");
    report_cmd->callback([&] {
        run = [&] {
            auto ks = parse_ks(rp.ks);
            std::vector<ReportRow> rows;
            for (const auto& p : rp.metrics) {
                auto r = rows_from_metrics(read_kind(p, {"metrics"}));
                rows.insert(rows.end(), r.begin(), r.end());
            }
            std::vector<ReportRow> ranked;
            for (const auto& r : rows)
                if (!r.metrics.accuracy) ranked.push_back(r);
            auto table = rows_tsv(rp.best ? best_per_task(ranked) : rows, ks);
            if (rp.out.empty()) std::cout << table;
            else write_file(rp.out, table);
            if (!rp.macro.empty()) write_file(rp.macro, macro_tsv(ranked));
        };
    });

    // sweep ------------------------------------------------------------------
    struct {
        std::vector<std::string> inputs;
        std::string out_dir, templates = "manual1,manual2,manual3", configs = "all", ks = "1,5", split = "test";
        BackendChoice backend;
        std::uint64_t seed = 0;
        bool uncased = false;
    } sw;
    auto* sweep_cmd = app.add_subcommand("sweep", "Probe memorizing inputs over templates x mask modes x poolings");
    with_config(sweep_cmd);
    sweep_cmd->add_option("--input", sw.inputs, "Memorizing files")->required();
    sweep_cmd->add_option("--out-dir", sw.out_dir, "Output directory")->required();
    sweep_cmd->add_option("--seed", sw.seed, "Run seed (recorded)")->required();
    sweep_cmd->add_option("--backend", sw.backend.spec, "Backend spec as for probe")->capture_default_str();
    sweep_cmd->add_option("--in-flight", sw.backend.in_flight, "Requests in flight")->capture_default_str();
    sweep_cmd->add_option("--templates", sw.templates, "Template choices")->capture_default_str();
    sweep_cmd->add_option("--configs", sw.configs, "all, or scoring configs like multiple-mean,single-max")->capture_default_str();
    sweep_cmd->add_option("--split", sw.split, "Split to probe")->capture_default_str();
    sweep_cmd->add_option("--ks", sw.ks, "K values")->capture_default_str();
    sweep_cmd->add_flag("--uncased", sw.uncased, "Lowercase prompts, golds and candidates");
    sweep_cmd->callback([&] {
        run = [&] {
            auto ks = parse_ks(sw.ks);
            std::vector<ScoringConfig> configs;
            if (sw.configs == "all") configs = all_scoring_configs();
            else
                for (const auto& c : split(sw.configs, ',')) configs.push_back(ScoringConfig::parse(trim(c)));
            std::vector<TemplateChoice> templates;
            for (const auto& t : split(sw.templates, ',')) templates.push_back(TemplateChoice::parse(trim(t)));
            fs::create_directories(sw.out_dir);
            std::vector<ReportRow> rows;
            std::unique_ptr<Backend> remote;
            std::string hash;
            for (const auto& path : sw.inputs) {
                for (const auto& t : templates) {
                    RenderChoice rc{t, Conjunction::manual(), sw.uncased, sw.split};
                    auto in = load_probe_input(path, rc, TemplateBook::builtin());
                    if (in.kind != "memorizing") throw ValidationError(path + ": sweep takes memorizing files");
                    auto h = in.header.value("graph_hash", std::string{});
                    if (!hash.empty() && h != hash)
                        throw ValidationError("manifest mismatch: " + path + " was produced from graph " + h + ", expected " + hash);
                    hash = h;
                    for (const auto& cfg : configs) {
                        std::unique_ptr<Backend> local;
                        Backend* b = nullptr;
                        if (sw.backend.spec.rfind("mock-oracle", 0) == 0) {
                            local = make_backend(sw.backend, in, cfg.mask_mode, 8, sw.uncased);
                            b = local.get();
                        } else {
                            if (!remote) remote = make_backend(sw.backend, in, cfg.mask_mode, 0, sw.uncased);
                            b = remote.get();
                        }
                        auto res = run_probe(in, *b, cfg, rc, {}, path, sw.seed);
                        std::string task = in.header.value("subtask", std::string("memorizing"));
                        auto out = (fs::path(sw.out_dir) / (task + "." + t.name() + "." + cfg.name() + ".jsonl")).string();
                        write_records(out, res.out);
                        if (auto m = metrics_of(res.results, ks)) rows.push_back({task, t.name() + "/" + cfg.name(), *m});
                    }
                }
            }
            RunManifest m;
            m.command = "sweep";
            m.graph_hash = hash;
            m.seeds = {{"probe", sw.seed}};
            for (const auto& c : configs) m.scoring.push_back(c.name());
            m.extra = {{"templates", sw.templates}};
            write_records((fs::path(sw.out_dir) / "metrics.jsonl").string(), metrics_file(rows, to_json(m)));
            write_file((fs::path(sw.out_dir) / "sweep.tsv").string(), report_tsv(rows, ks));
            auto best = best_per_task(rows);
            write_file((fs::path(sw.out_dir) / "best.tsv").string(), report_tsv(best, ks));
            std::cout << report_tsv(best, ks);
        };
    });

    try {
        auto args = expand_config(std::vector<std::string>(argv, argv + argc));
        std::reverse(args.begin(), args.end());
        args.pop_back();
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    try {
        run();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const BackendError& e) {
        std::cerr << "backend error: " << e.what() << '\n';
        return 3;
    } catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 0;
}
