#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "sgtrans/analyze.hpp"
#include "sgtrans/checkpoint.hpp"
#include "sgtrans/dataset.hpp"
#include "sgtrans/metrics.hpp"
#include "sgtrans/model.hpp"
#include "sgtrans/training.hpp"

namespace fs = std::filesystem;
using sgtrans::json;

namespace {

std::string error_name(const std::exception& e) {
    if (dynamic_cast<const sgtrans::shape_mismatch*>(&e)) return "shape_mismatch";
    if (dynamic_cast<const sgtrans::unterminated_literal*>(&e)) return "unterminated_literal";
    if (dynamic_cast<const sgtrans::invalid_schedule*>(&e)) return "invalid_schedule";
    if (dynamic_cast<const sgtrans::non_finite_loss*>(&e)) return "non_finite_loss";
    if (dynamic_cast<const sgtrans::empty_input*>(&e)) return "empty_input";
    if (dynamic_cast<const sgtrans::config_error*>(&e)) return "config_error";
    if (dynamic_cast<const sgtrans::io_error*>(&e)) return "io_error";
    if (dynamic_cast<const sgtrans::error*>(&e)) return "error";
    return "internal_error";
}

[[noreturn]] void die(const std::string& name, const std::string& message) {
    json err;
    err["error"] = name;
    err["message"] = message;
    std::cerr << err.dump() << "\n";
    std::exit(1);
}

// index-sliced worker pool; each index writes only its own slot, so results
// are deterministic regardless of job count.
template <typename F>
void parallel_for(size_t n, int jobs, F&& f) {
    if (jobs < 1) jobs = 1;
    if (jobs == 1 || n <= 1) {
        for (size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<size_t> next{0};
    auto worker = [&] {
        while (true) {
            size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                f(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

std::uint64_t env_seed_override(std::uint64_t fallback) {
    const char* s = std::getenv("SGTRANS_SEED");
    if (!s || !*s) return fallback;
    try {
        return std::stoull(s);
    } catch (const std::exception&) {
        throw sgtrans::config_error("SGTRANS_SEED is not a valid integer: " +
                                    std::string(s));
    }
}

// summarize/analyze inputs: summary is optional there.
std::vector<sgtrans::raw_record> read_snippets(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw sgtrans::io_error("cannot open input file " + path);
    std::vector<sgtrans::raw_record> out;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = path + " line " + std::to_string(lineno);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object())
            throw sgtrans::io_error(where + ": not a JSON object");
        sgtrans::raw_record r;
        if (!j.contains("id") || !j["id"].is_string())
            throw sgtrans::io_error(where + ": missing string field 'id'");
        r.id = j["id"].get<std::string>();
        if (!j.contains("language") || !j["language"].is_string())
            throw sgtrans::io_error(where + ": missing string field 'language'");
        r.lang = sgtrans::language_from_string(j["language"].get<std::string>());
        if (!j.contains("code") || !j["code"].is_string())
            throw sgtrans::io_error(where + ": missing string field 'code'");
        r.code = j["code"].get<std::string>();
        if (r.code.empty()) throw sgtrans::io_error(where + ": empty code");
        if (j.contains("summary") && j["summary"].is_string())
            r.summary = j["summary"].get<std::string>();
        out.push_back(std::move(r));
    }
    if (out.empty()) throw sgtrans::empty_input("input file " + path + " has no records");
    return out;
}

sgtrans::example snippet_example(const sgtrans::raw_record& r) {
    sgtrans::example ex;
    ex.id = r.id;
    ex.sc = sgtrans::parse(r.code, r.lang);
    ex.summary = sgtrans::tokenize_summary(r.summary);
    return ex;
}

std::string join_tokens(const std::vector<std::string>& toks) {
    std::string out;
    for (size_t i = 0; i < toks.size(); ++i) {
        if (i) out += ' ';
        out += toks[i];
    }
    return out;
}

struct extract_opts {
    std::string input, output, dump_masks;
    int jobs = 1;
};

void cmd_extract(const extract_opts& o) {
    auto records = sgtrans::read_dataset(o.input);
    std::vector<sgtrans::structured_record> out(records.size());
    parallel_for(records.size(), o.jobs, [&](size_t i) {
        out[i].id = records[i].id;
        out[i].sc = sgtrans::parse(records[i].code, records[i].lang);
    });
    sgtrans::write_structured(o.output, out);
    if (!o.dump_masks.empty()) {
        fs::create_directories(o.dump_masks);
        for (const auto& r : out)
            sgtrans::dump_masks(sgtrans::build_masks<float>(r.sc), o.dump_masks, r.id);
    }
    std::cerr << "extracted " << out.size() << " records to " << o.output << "\n";
}

struct train_opts {
    std::string train_path, valid_path, out_dir, config_path;
    std::vector<std::string> overrides;
    int repeat = 0;  // 0: take from config
};

void cmd_train(const train_opts& o) {
    sgtrans::run_config rc;
    if (!o.config_path.empty()) rc = sgtrans::run_config::parse_file(o.config_path);
    for (const auto& kv : o.overrides) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw sgtrans::config_error("--set expects key=value, got '" + kv + "'");
        rc.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.repeat > 0) rc.train.repeat = o.repeat;
    rc.train.seed = env_seed_override(rc.train.seed);
    rc.train.validate();

    auto train_set = sgtrans::load_examples(o.train_path);
    auto valid_set = sgtrans::load_examples(o.valid_path);

    std::vector<std::vector<std::string>> seqs;
    for (const auto& ex : train_set) {
        seqs.push_back(ex.sc.sub_tokens);
        seqs.push_back(ex.summary);
    }
    auto vb = sgtrans::vocab::build(
        seqs, rc.model.vocab_size > 0 ? static_cast<size_t>(rc.model.vocab_size) : 0);

    fs::create_directories(o.out_dir);
    {
        std::ofstream echo(o.out_dir + "/config.txt", std::ios::binary);
        echo << rc.source_text;
    }

    json runs = json::array();
    double bleu_sum = 0.0;
    double best_overall = -1.0;
    std::string best_checkpoint;
    const int repeat = rc.train.repeat;
    for (int run = 0; run < repeat; ++run) {
        std::string run_dir =
            repeat == 1 ? o.out_dir : o.out_dir + "/run" + std::to_string(run);
        fs::create_directories(run_dir);
        sgtrans::train_config tc = rc.train;
        tc.seed = rc.train.seed + static_cast<std::uint64_t>(run);
        sgtrans::rng gen(tc.seed);
        auto m = sgtrans::model<float>::create(rc.model, vb, gen);
        auto result = sgtrans::train(m, train_set, valid_set, tc, run_dir, gen, &std::cerr);
        bleu_sum += result.best_val_bleu4;
        if (result.best_val_bleu4 > best_overall) {
            best_overall = result.best_val_bleu4;
            best_checkpoint = result.best_checkpoint;
        }
        json jr;
        jr["seed"] = tc.seed;
        jr["epochs"] = result.history.size();
        jr["best_epoch"] = result.best_epoch;
        jr["best_val_bleu4"] = result.best_val_bleu4;
        jr["best_checkpoint"] = result.best_checkpoint;
        runs.push_back(jr);
    }

    json report;
    report["runs"] = runs;
    report["mean_best_val_bleu4"] = bleu_sum / static_cast<double>(repeat);
    report["best_checkpoint"] = best_checkpoint;
    std::cout << report.dump() << "\n";
}

struct summarize_opts {
    std::string checkpoint, input, code, lang_name, output;
    int beam = 1;
};

std::vector<sgtrans::raw_record> gather_snippets(const std::string& input,
                                                 const std::string& code,
                                                 const std::string& lang_name) {
    if (!input.empty() && !code.empty())
        throw sgtrans::config_error("give either --input or --code, not both");
    if (!input.empty()) return read_snippets(input);
    if (code.empty()) throw sgtrans::config_error("one of --input or --code is required");
    if (lang_name.empty())
        throw sgtrans::config_error("--code requires --language java|python");
    sgtrans::raw_record r;
    r.id = "snippet";
    r.lang = sgtrans::language_from_string(lang_name);
    r.code = code;
    return {r};
}

void cmd_summarize(const summarize_opts& o) {
    auto m = sgtrans::load_checkpoint<float>(o.checkpoint);
    auto records = gather_snippets(o.input, o.code, o.lang_name);

    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!o.output.empty()) {
        file.open(o.output, std::ios::binary);
        if (!file) throw sgtrans::io_error("cannot write output file " + o.output);
        out = &file;
    }
    for (const auto& r : records) {
        auto p = sgtrans::prepare<float>(m.vb, m.cfg, snippet_example(r));
        auto g = sgtrans::generate(m, p, o.beam);
        json j;
        j["id"] = r.id;
        j["summary"] = join_tokens(g.tokens);
        j["p_gen_mean"] = g.p_gen_mean;
        (*out) << j.dump() << "\n";
    }
}

struct eval_opts {
    std::string predictions, references, output, per_example;
    int jobs = 1;
};

void cmd_eval(const eval_opts& o) {
    auto preds = sgtrans::read_predictions(o.predictions);
    auto refs = sgtrans::read_references(o.references);
    std::map<std::string, std::string> ref_by_id;
    for (const auto& [id, summary] : refs) ref_by_id.emplace(id, summary);

    std::vector<sgtrans::token_seq> cand_toks(preds.size()), ref_toks(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) {
        auto it = ref_by_id.find(preds[i].id);
        if (it == ref_by_id.end())
            throw sgtrans::io_error("prediction id '" + preds[i].id +
                                    "' has no reference");
        cand_toks[i] = sgtrans::tokenize_summary(preds[i].summary);
        ref_toks[i] = sgtrans::tokenize_summary(it->second);
    }

    std::vector<double> s_bleu(preds.size()), s_meteor(preds.size()), s_rouge(preds.size());
    parallel_for(preds.size(), o.jobs, [&](size_t i) {
        s_bleu[i] = sgtrans::sentence_bleu4(cand_toks[i], ref_toks[i]);
        s_meteor[i] = sgtrans::sentence_meteor(cand_toks[i], ref_toks[i]);
        s_rouge[i] = sgtrans::sentence_rouge_l(cand_toks[i], ref_toks[i]);
    });

    json report;
    report["count"] = preds.size();
    report["bleu4"] = sgtrans::corpus_bleu4(cand_toks, ref_toks);
    report["meteor"] = sgtrans::corpus_meteor(cand_toks, ref_toks);
    report["rouge_l"] = sgtrans::corpus_rouge_l(cand_toks, ref_toks);

    if (!o.per_example.empty()) {
        std::ofstream csv(o.per_example, std::ios::binary);
        if (!csv) throw sgtrans::io_error("cannot write per-example csv " + o.per_example);
        csv << "id,bleu4,meteor,rouge_l\n";
        for (size_t i = 0; i < preds.size(); ++i)
            csv << preds[i].id << "," << s_bleu[i] << "," << s_meteor[i] << ","
                << s_rouge[i] << "\n";
    }

    if (!o.output.empty()) {
        std::ofstream out(o.output, std::ios::binary);
        if (!out) throw sgtrans::io_error("cannot write report " + o.output);
        out << report.dump() << "\n";
    } else {
        std::cout << report.dump() << "\n";
    }
}

struct analyze_opts {
    std::string checkpoint, input, code, lang_name, out_dir;
};

void cmd_analyze(const analyze_opts& o) {
    auto m = sgtrans::load_checkpoint<float>(o.checkpoint);
    auto records = gather_snippets(o.input, o.code, o.lang_name);
    fs::create_directories(o.out_dir);
    // the first record is the subject of the dump
    auto p = sgtrans::prepare<float>(m.vb, m.cfg, snippet_example(records.front()));
    sgtrans::analyze_snippet(m, p, o.out_dir);
    std::cerr << "analysis written to " << o.out_dir << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"structure-guided transformer for source code summarization"};
    app.set_version_flag("--version", "SGTRANS1");
    app.require_subcommand(1);

    extract_opts xo;
    auto* extract = app.add_subcommand("extract", "parse raw code into structured JSONL");
    extract->add_option("--input", xo.input, "raw dataset JSONL")->required();
    extract->add_option("--output", xo.output, "structured JSONL destination")->required();
    extract->add_option("--dump-masks", xo.dump_masks, "directory for mask CSV dumps");
    extract->add_option("--jobs", xo.jobs, "worker threads");

    train_opts to;
    auto* train = app.add_subcommand("train", "train a summarization model");
    train->add_option("--train", to.train_path, "training dataset JSONL")->required();
    train->add_option("--valid", to.valid_path, "validation dataset JSONL")->required();
    train->add_option("--out", to.out_dir, "output directory")->required();
    train->add_option("--config", to.config_path, "key=value run configuration file");
    train->add_option("--set", to.overrides, "config override key=value (repeatable)");
    train->add_option("--repeat", to.repeat, "independent runs to aggregate");

    summarize_opts so;
    auto* summarize = app.add_subcommand("summarize", "generate summaries");
    summarize->add_option("--checkpoint", so.checkpoint, "model checkpoint")->required();
    summarize->add_option("--input", so.input, "dataset JSONL (summary optional)");
    summarize->add_option("--code", so.code, "single code snippet");
    summarize->add_option("--language", so.lang_name, "language of --code");
    summarize->add_option("--beam", so.beam, "beam width (1 = greedy)");
    summarize->add_option("--output", so.output, "predictions JSONL (default stdout)");

    eval_opts eo;
    auto* eval = app.add_subcommand("eval", "score predictions against references");
    eval->add_option("--predictions", eo.predictions, "predictions JSONL")->required();
    eval->add_option("--references", eo.references, "references JSONL")->required();
    eval->add_option("--out", eo.output, "report JSON destination (default stdout)");
    eval->add_option("--per-example", eo.per_example, "per-example scores CSV");
    eval->add_option("--jobs", eo.jobs, "worker threads");

    analyze_opts ao;
    auto* analyze = app.add_subcommand("analyze", "dump attention maps and locality");
    analyze->add_option("--checkpoint", ao.checkpoint, "model checkpoint")->required();
    analyze->add_option("--input", ao.input, "dataset JSONL; the first record is used");
    analyze->add_option("--code", ao.code, "single code snippet");
    analyze->add_option("--language", ao.lang_name, "language of --code");
    analyze->add_option("--out", ao.out_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        die("cli_error", e.what());
    }

    try {
        if (app.got_subcommand(extract)) cmd_extract(xo);
        else if (app.got_subcommand(train)) cmd_train(to);
        else if (app.got_subcommand(summarize)) cmd_summarize(so);
        else if (app.got_subcommand(eval)) cmd_eval(eo);
        else if (app.got_subcommand(analyze)) cmd_analyze(ao);
    } catch (const std::exception& e) {
        die(error_name(e), e.what());
    }
    return 0;
}
