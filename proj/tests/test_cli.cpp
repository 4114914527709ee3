#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "json.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

struct run_result {
    int exit_code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

run_result run_cli(const std::string& args, const std::string& env = "") {
    static int counter = 0;
    fs::path out = fs::path("cli_tmp") / ("out" + std::to_string(counter));
    fs::path err = fs::path("cli_tmp") / ("err" + std::to_string(counter));
    ++counter;
    fs::create_directories("cli_tmp");
    std::string cmd = env + (env.empty() ? "" : " ") + SGTRANS_CLI_PATH + " " + args +
                      " >" + out.string() + " 2>" + err.string();
    int status = std::system(cmd.c_str());
    run_result r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write_file(const fs::path& p, const std::string& content) {
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out << content;
}

const char* micro_dataset =
    R"({"id":"m1","language":"java","code":"int a = b + 1;","summary":"adds one to b"}
{"id":"m2","language":"java","code":"int c = a * 2;","summary":"doubles the value"}
{"id":"m3","language":"python","code":"total = total + n","summary":"adds n to total"}
)";

}  // namespace

TEST_CASE("cli version string") {
    auto r = run_cli("--version");
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out == "SGTRANS1\n");
}

TEST_CASE("cli failures emit one machine-parsable error line") {
    auto r = run_cli("extract --input missing_file.jsonl --output x.jsonl");
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.out.empty());
    REQUIRE(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    auto j = ordered_json::parse(r.err);
    REQUIRE(j["error"] == "io_error");
    REQUIRE(j["message"].get<std::string>().find("missing_file.jsonl") !=
            std::string::npos);

    auto r2 = run_cli("extract --no-such-flag");
    REQUIRE(r2.exit_code == 1);
    auto j2 = ordered_json::parse(r2.err);
    REQUIRE(j2["error"] == "cli_error");

    write_file("cli_tmp/bad.jsonl", "{\"id\":\"x\",\"language\":\"cobol\","
                                    "\"code\":\"a\",\"summary\":\"b\"}\n");
    auto r3 = run_cli("extract --input cli_tmp/bad.jsonl --output cli_tmp/bad_out.jsonl");
    REQUIRE(r3.exit_code == 1);
    auto j3 = ordered_json::parse(r3.err);
    REQUIRE(j3.contains("error"));
    REQUIRE(j3.contains("message"));
}

TEST_CASE("extract writes structured records and exact mask dumps") {
    write_file("cli_tmp/data.jsonl", micro_dataset);
    auto r = run_cli("extract --input cli_tmp/data.jsonl --output cli_tmp/structured.jsonl"
                     " --dump-masks cli_tmp/masks");
    REQUIRE(r.exit_code == 0);

    std::ifstream in("cli_tmp/structured.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        auto j = ordered_json::parse(line);
        REQUIRE(j.contains("id"));
        REQUIRE(j.contains("language"));
        REQUIRE(j["sub_tokens"].is_array());
        REQUIRE(j["token_of"].size() == j["sub_tokens"].size());
        REQUIRE(j["statement_of"].size() == j["sub_tokens"].size());
        for (const auto& e : j["dfg_edges"]) {
            REQUIRE(e.size() == 5);
            REQUIRE(e[4].is_string());
        }
        ++lines;
    }
    REQUIRE(lines == 3);

    auto mask = slurp("cli_tmp/masks/m1_token_mask.csv");
    REQUIRE(mask.find("-inf") != std::string::npos);
    REQUIRE(mask.find("0") != std::string::npos);
    auto flow = slurp("cli_tmp/masks/m1_flow.csv");
    REQUIRE(flow.find("1") != std::string::npos);
    REQUIRE(flow.find("-inf") == std::string::npos);

    // parallel extraction yields byte-identical output
    auto r2 = run_cli("extract --input cli_tmp/data.jsonl --output cli_tmp/structured2.jsonl"
                      " --jobs 3");
    REQUIRE(r2.exit_code == 0);
    REQUIRE(slurp("cli_tmp/structured.jsonl") == slurp("cli_tmp/structured2.jsonl"));
}

TEST_CASE("train, summarize, and eval round-trip on a micro corpus") {
    write_file("cli_tmp/train.jsonl", micro_dataset);
    write_file("cli_tmp/toy.cfg",
               "l_enc=1\nl_dec=1\nh=2\nd_model=16\nd_ff=32\nk=1\ndropout_p=0\n"
               "lr=0.002\nbatch_size=3\nmax_epochs=2\npatience=5\nseed=9\n");

    auto r = run_cli("train --train cli_tmp/train.jsonl --valid cli_tmp/train.jsonl"
                     " --config cli_tmp/toy.cfg --out cli_tmp/run");
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    auto report = ordered_json::parse(r.out);
    REQUIRE(report.contains("mean_best_val_bleu4"));
    REQUIRE(report["runs"].size() == 1);
    REQUIRE(fs::exists("cli_tmp/run/metrics.csv"));
    REQUIRE(fs::exists("cli_tmp/run/best"));
    REQUIRE(slurp("cli_tmp/run/config.txt") == slurp("cli_tmp/toy.cfg"));

    std::string ckpt = report["best_checkpoint"].get<std::string>();
    REQUIRE(fs::exists(ckpt));

    // summarize the training inputs
    auto s = run_cli("summarize --checkpoint " + ckpt +
                     " --input cli_tmp/train.jsonl --output cli_tmp/preds.jsonl");
    INFO(s.err);
    REQUIRE(s.exit_code == 0);
    std::ifstream preds("cli_tmp/preds.jsonl");
    std::string line;
    int count = 0;
    while (std::getline(preds, line)) {
        auto j = ordered_json::parse(line);
        REQUIRE(j.contains("id"));
        REQUIRE(j.contains("summary"));
        REQUIRE(j.contains("p_gen_mean"));
        REQUIRE(j["summary"].get<std::string>().find("<unk>") == std::string::npos);
        ++count;
    }
    REQUIRE(count == 3);

    // summarize is deterministic
    auto s2 = run_cli("summarize --checkpoint " + ckpt +
                      " --input cli_tmp/train.jsonl --output cli_tmp/preds2.jsonl");
    REQUIRE(s2.exit_code == 0);
    REQUIRE(slurp("cli_tmp/preds.jsonl") == slurp("cli_tmp/preds2.jsonl"));

    // single-snippet form writes to stdout
    auto s3 = run_cli("summarize --checkpoint " + ckpt +
                      " --code \"int q = p + 1;\" --language java --beam 2");
    REQUIRE(s3.exit_code == 0);
    auto j3 = ordered_json::parse(s3.out);
    REQUIRE(j3["id"] == "snippet");

    // eval the predictions against the references
    auto e = run_cli("eval --predictions cli_tmp/preds.jsonl --references"
                     " cli_tmp/train.jsonl --per-example cli_tmp/per.csv");
    INFO(e.err);
    REQUIRE(e.exit_code == 0);
    auto rep = ordered_json::parse(e.out);
    REQUIRE(rep["count"] == 3);
    REQUIRE(rep["bleu4"].is_number());
    REQUIRE(rep["meteor"].is_number());
    REQUIRE(rep["rouge_l"].is_number());
    auto per = slurp("cli_tmp/per.csv");
    REQUIRE(per.rfind("id,bleu4,meteor,rouge_l\n", 0) == 0);
    REQUIRE(std::count(per.begin(), per.end(), '\n') == 4);

    // perfect predictions score 100 across the board
    std::ostringstream perfect;
    perfect << R"({"id":"m1","summary":"adds one to b"})" << "\n"
            << R"({"id":"m2","summary":"doubles the value"})" << "\n"
            << R"({"id":"m3","summary":"adds n to total"})" << "\n";
    write_file("cli_tmp/perfect.jsonl", perfect.str());
    auto e2 = run_cli("eval --predictions cli_tmp/perfect.jsonl --references"
                      " cli_tmp/train.jsonl --jobs 2");
    REQUIRE(e2.exit_code == 0);
    auto rep2 = ordered_json::parse(e2.out);
    REQUIRE(rep2["bleu4"].get<double>() == Catch::Approx(100.0));
    // identical sentences still pay the fragmentation penalty: one chunk of
    // m tokens costs 0.5 * (1/m)^3
    double meteor_expected =
        ((1 - 0.5 / 64.0) + (1 - 0.5 / 27.0) + (1 - 0.5 / 64.0)) / 3.0;
    REQUIRE(rep2["meteor"].get<double>() == Catch::Approx(meteor_expected).margin(1e-9));
    REQUIRE(rep2["rouge_l"].get<double>() == Catch::Approx(1.0));

    // analyze dumps per-head attention and the locality profile
    auto a = run_cli("analyze --checkpoint " + ckpt +
                     " --input cli_tmp/train.jsonl --out cli_tmp/analysis");
    INFO(a.err);
    REQUIRE(a.exit_code == 0);
    REQUIRE(fs::exists("cli_tmp/analysis/locality.csv"));
    int pgm = 0, csvn = 0;
    for (const auto& f : fs::directory_iterator("cli_tmp/analysis")) {
        auto name = f.path().filename().string();
        if (name.rfind("layer", 0) == 0 && name.find(".pgm") != std::string::npos) ++pgm;
        if (name.rfind("layer", 0) == 0 && name.find(".csv") != std::string::npos) ++csvn;
    }
    REQUIRE(pgm == 2);  // 1 layer x 2 heads
    REQUIRE(csvn == 2);
    auto loc = slurp("cli_tmp/analysis/locality.csv");
    REQUIRE(loc.rfind("layer,distance,mass\n", 0) == 0);
    auto pgm_head = slurp("cli_tmp/analysis/layer1_head0_flow.pgm");
    REQUIRE(pgm_head.rfind("P2\n", 0) == 0);
}

TEST_CASE("unknown config keys are rejected with config_error") {
    write_file("cli_tmp/train2.jsonl", micro_dataset);
    auto r = run_cli("train --train cli_tmp/train2.jsonl --valid cli_tmp/train2.jsonl"
                     " --out cli_tmp/run2 --set learning_rate=0.1");
    REQUIRE(r.exit_code == 1);
    auto j = ordered_json::parse(r.err);
    REQUIRE(j["error"] == "config_error");
    REQUIRE(j["message"].get<std::string>().find("learning_rate") != std::string::npos);
}

TEST_CASE("environment seed override must be a valid integer") {
    write_file("cli_tmp/train3.jsonl", micro_dataset);
    auto r = run_cli("train --train cli_tmp/train3.jsonl --valid cli_tmp/train3.jsonl"
                     " --out cli_tmp/run3 --set max_epochs=1 --set d_model=8"
                     " --set h=2 --set d_ff=8 --set l_enc=1 --set l_dec=1 --set k=1",
                     "SGTRANS_SEED=notanumber");
    REQUIRE(r.exit_code == 1);
    auto j = ordered_json::parse(r.err);
    REQUIRE(j["error"] == "config_error");

    auto r2 = run_cli("train --train cli_tmp/train3.jsonl --valid cli_tmp/train3.jsonl"
                      " --out cli_tmp/run3 --set max_epochs=1 --set d_model=8"
                      " --set h=2 --set d_ff=8 --set l_enc=1 --set l_dec=1 --set k=1"
                      " --set dropout_p=0",
                      "SGTRANS_SEED=123");
    INFO(r2.err);
    REQUIRE(r2.exit_code == 0);
    auto rep = ordered_json::parse(r2.out);
    REQUIRE(rep["runs"][0]["seed"] == 123);
}

TEST_CASE("training twice with one seed is byte-identical") {
    write_file("cli_tmp/train4.jsonl", micro_dataset);
    std::string common =
        " --set max_epochs=2 --set d_model=8 --set h=2 --set d_ff=8 --set l_enc=1"
        " --set l_dec=1 --set k=1 --set dropout_p=0.1 --set seed=77 --set batch_size=2";
    auto r1 = run_cli("train --train cli_tmp/train4.jsonl --valid cli_tmp/train4.jsonl"
                      " --out cli_tmp/det_a" + common);
    auto r2 = run_cli("train --train cli_tmp/train4.jsonl --valid cli_tmp/train4.jsonl"
                      " --out cli_tmp/det_b" + common);
    INFO(r1.err);
    REQUIRE(r1.exit_code == 0);
    REQUIRE(r2.exit_code == 0);

    auto strip_seconds = [](const std::string& csv) {
        std::istringstream in(csv);
        std::string line, out;
        while (std::getline(in, line)) {
            auto last = line.rfind(',');
            out += line.substr(0, last) + "\n";
        }
        return out;
    };
    REQUIRE(strip_seconds(slurp("cli_tmp/det_a/metrics.csv")) ==
            strip_seconds(slurp("cli_tmp/det_b/metrics.csv")));

    std::ifstream best("cli_tmp/det_a/best");
    std::string name;
    std::getline(best, name);
    REQUIRE(slurp("cli_tmp/det_a/" + name) == slurp("cli_tmp/det_b/" + name));
}

TEST_CASE("repeat flag aggregates runs by mean") {
    write_file("cli_tmp/train5.jsonl", micro_dataset);
    auto r = run_cli("train --train cli_tmp/train5.jsonl --valid cli_tmp/train5.jsonl"
                     " --out cli_tmp/rep --repeat 2 --set max_epochs=1 --set d_model=8"
                     " --set h=2 --set d_ff=8 --set l_enc=1 --set l_dec=1 --set k=1"
                     " --set dropout_p=0 --set seed=5");
    INFO(r.err);
    REQUIRE(r.exit_code == 0);
    auto rep = ordered_json::parse(r.out);
    REQUIRE(rep["runs"].size() == 2);
    REQUIRE(rep["runs"][0]["seed"] == 5);
    REQUIRE(rep["runs"][1]["seed"] == 6);
    double mean = (rep["runs"][0]["best_val_bleu4"].get<double>() +
                   rep["runs"][1]["best_val_bleu4"].get<double>()) /
                  2.0;
    REQUIRE(rep["mean_best_val_bleu4"].get<double>() == Catch::Approx(mean));
    REQUIRE(fs::exists("cli_tmp/rep/run0/metrics.csv"));
    REQUIRE(fs::exists("cli_tmp/rep/run1/metrics.csv"));
}
