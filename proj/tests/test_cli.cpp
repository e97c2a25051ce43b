#include <doctest.h>

#include "gradsam/cli.hpp"
#include "gradsam/io.hpp"
#include "gradsam/tape.hpp"
#include "gradsam/trainer.hpp"
#include "support/test_util.hpp"

using namespace gradsam;
using gradsam::testing::tmp_dir;

namespace {

void write_demo_spec(const std::string& path) {
    write_text_file(path, R"({
  "name": "demo",
  "distractors": ["the", "a", "seems", "quite", "today", "mostly", "rather", "thing"],
  "class_triggers": [["awful", "dreadful"], ["great", "superb"]],
  "min_words": 4,
  "max_words": 7
})");
}

void write_demo_config(const std::string& path) {
    write_text_file(path, R"({
  "model": {"L": 1, "M": 2, "d": 16, "N": 10, "n": 2, "precision": "f64"},
  "epochs": 10,
  "batch_size": 8,
  "learning_rate": 0.005,
  "seed": 3
})");
}

// gen-data + train in `dir`; returns the weights path.
std::string pipeline_setup(const std::string& dir) {
    const std::string spec = dir + "/spec.json";
    const std::string config = dir + "/config.json";
    const std::string data = dir + "/data.jsonl";
    const std::string weights = dir + "/model.sgw";
    write_demo_spec(spec);
    write_demo_config(config);
    REQUIRE(run_cli({"gen-data", "--spec", spec, "--count", "80", "--seed", "13",
                     "--out", data}) == 0);
    REQUIRE(run_cli({"train", "--data", data, "--config", config, "--out-weights",
                     weights}) == 0);
    return weights;
}

}  // namespace

TEST_CASE("help exits zero, usage errors exit two") {
    CHECK(run_cli({"--help"}) == 0);
    CHECK(run_cli({"train", "--help"}) == 0);
    CHECK(run_cli({}) == 2);                          // a subcommand is required
    CHECK(run_cli({"frobnicate"}) == 2);              // unknown subcommand
    CHECK(run_cli({"train"}) == 2);                   // missing required flags
    CHECK(run_cli({"train", "--bogus", "x"}) == 2);   // unknown flag
}

TEST_CASE("config errors exit two, runtime errors exit one") {
    const std::string dir = tmp_dir("cli_err");
    CHECK(run_cli({"gen-data", "--spec", dir + "/missing.json", "--count", "5",
                   "--seed", "1", "--out", dir + "/d.jsonl"}) == 2);

    const std::string bad_spec = dir + "/bad.json";
    write_text_file(bad_spec, "{\"distractors\": [\"a\"]}");  // no class_triggers
    CHECK(run_cli({"gen-data", "--spec", bad_spec, "--count", "5", "--seed", "1",
                   "--out", dir + "/d.jsonl"}) == 2);

    const std::string invalid_json = dir + "/nonjson.json";
    write_text_file(invalid_json, "not json");
    CHECK(run_cli({"gen-data", "--spec", invalid_json, "--count", "5", "--seed", "1",
                   "--out", dir + "/d.jsonl"}) == 2);

    // A corrupted weights file is a runtime integrity failure, not usage.
    const std::string fake = dir + "/fake.sgw";
    write_text_file(fake, "SGW1 but not really a weights file");
    CHECK(run_cli({"explain", "--weights", fake, "--text", "hi", "--method",
                   "grad-sam", "--out", dir + "/a.json"}) == 1);
}

TEST_CASE("full pipeline: gen-data, train, explain, evaluate, report") {
    const std::string dir = tmp_dir("cli_pipe");
    const std::string weights = pipeline_setup(dir);
    const std::string data = dir + "/data.jsonl";

    // The trained bundle reloads and the sidecar manifest exists.
    const ModelBundle bundle = load_model(weights);
    CHECK(bundle.cfg.n == 2);
    CHECK(read_text_file(weights + ".manifest.json").find("\"command\"") !=
          std::string::npos);

    // explain on raw text.
    const std::string attr1 = dir + "/attr_text.json";
    CHECK(run_cli({"explain", "--weights", weights, "--text", "a great thing today",
                   "--method", "grad-sam", "--out", attr1}) == 0);
    const AttributionDoc doc1 = load_attribution_doc(attr1);
    CHECK(doc1.method == "grad-sam");
    REQUIRE(doc1.items.size() == 1);
    CHECK(doc1.items[0].tokens.size() == 10);
    CHECK(!doc1.items[0].ranking.empty());

    // explain over a dataset split.
    const std::string attr2 = dir + "/attr_test.json";
    CHECK(run_cli({"explain", "--weights", weights, "--data", data, "--split", "test",
                   "--method", "att", "--out", attr2}) == 0);
    const AttributionDoc doc2 = load_attribution_doc(attr2);
    CHECK(doc2.method == "att");
    CHECK(doc2.items.size() == 8);  // 10% of 80

    // evaluate with baselines and a CSV projection.
    const std::string report = dir + "/report.json";
    const std::string csv = dir + "/report.csv";
    CHECK(run_cli({"evaluate", "--weights", weights, "--data", data, "--methods",
                   "grad-sam,att", "--k", "0.2,0.5", "--direction", "keep-top",
                   "--split", "test", "--random-baseline", "1", "--oracle",
                   "--out", report, "--csv", csv}) == 0);
    const EvalReport rep = load_report_json(report);
    CHECK(rep.entries.size() == 8);  // 4 rankers x 2 ks
    CHECK(read_text_file(csv).find("method,k,direction,metric,value") == 0);

    // report renders the attribution docs to HTML.
    const std::string html = dir + "/view.html";
    CHECK(run_cli({"report", "--attributions", attr1, attr2, "--out", html}) == 0);
    const std::string page = read_text_file(html);
    CHECK(page.find("<h3>grad-sam") != std::string::npos);
    CHECK(page.find("<h3>att") != std::string::npos);
}

TEST_CASE("explain with a non-gradient method never runs backward") {
    const std::string dir = tmp_dir("cli_nograd");
    const std::string weights = pipeline_setup(dir);
    reset_tape_backward_count();
    CHECK(run_cli({"explain", "--weights", weights, "--text", "a great thing",
                   "--method", "att", "--out", dir + "/a.json"}) == 0);
    CHECK(tape_backward_count() == 0);
    CHECK(run_cli({"explain", "--weights", weights, "--text", "a great thing",
                   "--method", "grad-sam", "--out", dir + "/b.json"}) == 0);
    CHECK(tape_backward_count() == 1);
}

TEST_CASE("unknown method and bad k are usage errors") {
    const std::string dir = tmp_dir("cli_badmethod");
    const std::string weights = pipeline_setup(dir);
    CHECK(run_cli({"explain", "--weights", weights, "--text", "hi", "--method",
                   "made-up", "--out", dir + "/a.json"}) == 2);
    CHECK(run_cli({"evaluate", "--weights", weights, "--data", dir + "/data.jsonl",
                   "--methods", "att", "--k", "1.5", "--out", dir + "/r.json"}) == 2);
    CHECK(run_cli({"evaluate", "--weights", weights, "--data", dir + "/data.jsonl",
                   "--methods", "att", "--k", "0.2", "--direction", "diagonal",
                   "--out", dir + "/r.json"}) == 2);
}

TEST_CASE("fixed seeds reproduce every artifact byte for byte") {
    const std::string dir_a = tmp_dir("cli_rep_a");
    const std::string dir_b = tmp_dir("cli_rep_b");
    for (const std::string& dir : {dir_a, dir_b}) {
        const std::string weights = pipeline_setup(dir);
        REQUIRE(run_cli({"evaluate", "--weights", weights, "--data", dir + "/data.jsonl",
                         "--methods", "grad-sam", "--k", "0.2", "--direction",
                         "mask-top", "--random-baseline", "1", "--split", "test",
                         "--out", dir + "/report.json"}) == 0);
    }
    CHECK(read_text_file(dir_a + "/data.jsonl") == read_text_file(dir_b + "/data.jsonl"));
    CHECK(read_text_file(dir_a + "/model.sgw") == read_text_file(dir_b + "/model.sgw"));
    CHECK(read_text_file(dir_a + "/report.json") == read_text_file(dir_b + "/report.json"));
}
