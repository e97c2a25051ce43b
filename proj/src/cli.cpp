#include "gradsam/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gradsam/attribution.hpp"
#include "gradsam/errors.hpp"
#include "gradsam/eval.hpp"
#include "gradsam/html_report.hpp"
#include "gradsam/io.hpp"
#include "gradsam/model.hpp"
#include "gradsam/sha256.hpp"
#include "gradsam/tokenizer.hpp"
#include "gradsam/trainer.hpp"
#include "gradsam/version.hpp"

namespace gradsam {

namespace {

using nlohmann::json;

std::string iso_utc_now() {
    const std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

json load_json_file(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
    return j;
}

std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ','))
        if (!part.empty()) out.push_back(part);
    return out;
}

double parse_double(const std::string& s, const char* what) {
    size_t pos = 0;
    double v = 0;
    try {
        v = std::stod(s, &pos);
    } catch (const std::exception&) {
        throw ConfigError(std::string("bad ") + what + " \"" + s + "\"");
    }
    if (pos != s.size()) throw ConfigError(std::string("bad ") + what + " \"" + s + "\"");
    return v;
}

std::string fixed4(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

SyntheticTaskSpec spec_from_json(const json& j, const std::string& path) {
    SyntheticTaskSpec spec;
    try {
        spec.name = j.value("name", spec.name);
        spec.distractors = j.at("distractors").get<std::vector<std::string>>();
        spec.class_triggers = j.at("class_triggers").get<std::vector<std::vector<std::string>>>();
        spec.negation_token = j.value("negation_token", std::string());
        spec.negation_prob = j.value("negation_prob", 0.0);
        spec.min_words = j.value("min_words", spec.min_words);
        spec.max_words = j.value("max_words", spec.max_words);
        spec.class_prior = j.value("class_prior", std::vector<double>{});
        spec.train_frac = j.value("train_frac", spec.train_frac);
        spec.val_frac = j.value("val_frac", spec.val_frac);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": bad task spec: " + e.what());
    }
    spec.validate();
    return spec;
}

ModelConfig model_config_from_json(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": \"model\" must be an object");
    ModelConfig cfg;
    try {
        cfg.L = j.at("L").get<size_t>();
        cfg.M = j.at("M").get<size_t>();
        cfg.d = j.at("d").get<size_t>();
        cfg.d_a = j.value("d_a", cfg.d / std::max<size_t>(cfg.M, 1));
        cfg.N = j.at("N").get<size_t>();
        cfg.n = j.at("n").get<size_t>();
        cfg.max_positions = j.value("max_positions", size_t{0});
        cfg.precision = parse_precision(j.value("precision", "f32"));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": bad model config: " + e.what());
    }
    return cfg;
}

TrainConfig train_config_from_json(const json& j, const std::string& path) {
    TrainConfig tc;
    try {
        tc.epochs = j.value("epochs", tc.epochs);
        tc.batch_size = j.value("batch_size", tc.batch_size);
        tc.learning_rate = j.value("learning_rate", tc.learning_rate);
        if (j.contains("optimizer")) tc.optimizer = parse_optimizer(j["optimizer"].get<std::string>());
        tc.seed = j.value("seed", tc.seed);
    } catch (const json::exception& e) {
        throw ConfigError(path + ": bad train config: " + e.what());
    }
    return tc;
}

// Fallback when no vocab file is given: reserved tokens plus every
// whitespace word of the dataset, lowercased and sorted. Hand-built corpora
// with punctuation should pass an explicit vocabulary instead.
Vocab vocab_from_dataset(const Dataset& data) {
    std::set<std::string> words;
    for (const DataRecord& rec : data.records) {
        std::stringstream ss(rec.text);
        std::string w;
        while (ss >> w) {
            for (char& c : w)
                if (c >= 'A' && c <= 'Z') c = char(c - 'A' + 'a');
            words.insert(w);
        }
    }
    std::vector<std::string> lines = {Vocab::kPadToken, Vocab::kUnkToken, Vocab::kClsToken,
                                      Vocab::kSepToken, Vocab::kMaskToken};
    lines.insert(lines.end(), words.begin(), words.end());
    return Vocab::from_lines(lines);
}

void write_manifest(const std::string& command, const std::vector<std::string>& args,
                    std::optional<uint64_t> seed,
                    const std::vector<std::string>& input_files,
                    const std::vector<std::string>& output_files,
                    const std::string& primary_output) {
    RunManifest m;
    m.command = command;
    m.args = args;
    m.seed = seed;
    for (const std::string& f : input_files) m.input_hashes.emplace_back(f, sha256_file_hex(f));
    for (const std::string& f : output_files)
        m.output_hashes.emplace_back(f, sha256_file_hex(f));
    m.timestamp = iso_utc_now();
    save_run_manifest(m, primary_output + ".manifest.json");
}

// ---------------------------------------------------------------------------
// Subcommand payloads.
// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string spec_path, out_path, out_vocab;
    size_t count = 0;
    uint64_t seed = 1;
};

struct TrainArgs {
    std::string data_path, config_path, weights_out, vocab_path;
    int64_t seed = -1;  // <0: use the config's seed
};

struct ExplainArgs {
    std::string weights, text, data_path, method, out_path;
    std::string split = "test";
    std::string agg = "row", gradient_variant = "norm";
    int64_t class_id = -1;
    size_t limit = 0;
};

struct EvaluateArgs {
    std::string weights, data_path, out_path, csv_path;
    std::string methods = "all";
    std::string k_list = "0.2";
    std::string direction = "keep-top";
    std::string split = "test";
    std::string mask_policy = "mask";
    std::string aopc_metric = "f1";
    std::string agg = "row", gradient_variant = "norm";
    size_t random_baseline = 0;
    bool oracle = false;
};

struct ReportArgs {
    std::vector<std::string> attribution_paths;
    std::string out_path;
};

int cmd_gen_data(const GenDataArgs& a, const std::vector<std::string>& raw) {
    const SyntheticTaskSpec spec = spec_from_json(load_json_file(a.spec_path), a.spec_path);
    if (a.count == 0) throw ConfigError("gen-data: --count must be at least 1");
    const Dataset data = generate_corpus(spec, a.count, a.seed);
    save_dataset(data, a.out_path);
    std::vector<std::string> outputs = {a.out_path};
    if (!a.out_vocab.empty()) {
        build_vocab(spec).save(a.out_vocab);
        outputs.push_back(a.out_vocab);
    }
    write_manifest("gen-data", raw, a.seed, {a.spec_path}, outputs, a.out_path);
    size_t n_train = 0, n_val = 0, n_test = 0;
    for (const DataRecord& r : data.records) {
        if (r.split == "train") ++n_train;
        else if (r.split == "val") ++n_val;
        else ++n_test;
    }
    std::cout << "wrote " << data.size() << " records (" << n_train << " train, " << n_val
              << " val, " << n_test << " test) to " << a.out_path << "\n";
    return 0;
}

template <typename T>
void run_training(const ModelConfig& cfg, const Vocab& vocab, const Dataset& data,
                  const TrainConfig& tc, ModelBundle& bundle) {
    TrainResult<T> result = train<T>(cfg, vocab, data, tc);
    for (size_t e = 0; e < result.epoch_losses.size(); ++e)
        std::cout << "epoch " << (e + 1) << ": loss " << fixed4(result.epoch_losses[e]) << "\n";
    std::cout << "train accuracy " << fixed4(result.final_train_accuracy) << ", val accuracy "
              << fixed4(result.final_val_accuracy) << "\n";
    bundle.weights = std::move(result.weights);
}

int cmd_train(const TrainArgs& a, const std::vector<std::string>& raw) {
    std::vector<std::string> warnings;
    const Dataset data = load_dataset(a.data_path, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";

    const json cj = load_json_file(a.config_path);
    if (!cj.contains("model")) throw ConfigError(a.config_path + ": missing \"model\" section");
    ModelConfig cfg = model_config_from_json(cj["model"], a.config_path);
    TrainConfig tc = train_config_from_json(cj, a.config_path);
    if (a.seed >= 0) tc.seed = static_cast<uint64_t>(a.seed);

    ModelBundle bundle;
    bundle.vocab = a.vocab_path.empty() ? vocab_from_dataset(data) : Vocab::load(a.vocab_path);
    cfg.vocab_size = bundle.vocab.size();
    cfg.validate();
    bundle.cfg = cfg;

    if (cfg.precision == Precision::f32)
        run_training<float>(cfg, bundle.vocab, data, tc, bundle);
    else
        run_training<double>(cfg, bundle.vocab, data, tc, bundle);

    save_model(bundle, a.weights_out);
    std::cout << "wrote " << a.weights_out << "\n";

    std::vector<std::string> inputs = {a.data_path, a.config_path};
    if (!a.vocab_path.empty()) inputs.push_back(a.vocab_path);
    write_manifest("train", raw, tc.seed, inputs, {a.weights_out}, a.weights_out);
    return 0;
}

template <typename T>
AttributionDoc explain_records(const ModelBundle& bundle, const std::vector<const DataRecord*>& recs,
                               MethodKind method, std::optional<size_t> class_id,
                               const ExplainOptions& opt) {
    const EncoderWeights<T>& w = bundle.get<T>();
    AttributionDoc doc;
    doc.method = method_name(method);
    doc.aggregation = aggregation_name(opt.aggregation);
    for (const DataRecord* rec : recs) {
        const TokenSequence seq = encode(bundle.vocab, rec->text, bundle.cfg.N);
        AttributionResult res = explain_sequence(seq, w, bundle.cfg, method, class_id, opt);
        AttributionItem item;
        item.record_id = rec->id;
        item.text = rec->text;
        item.class_id = res.class_id;
        item.tokens = res.tokens;
        item.scores = res.r;
        item.ranking = res.ranking;
        doc.items.push_back(std::move(item));
    }
    return doc;
}

int cmd_explain(const ExplainArgs& a, const std::vector<std::string>& raw) {
    if (a.text.empty() == a.data_path.empty())
        throw ConfigError("explain: pass exactly one of --text and --data");
    const std::optional<MethodKind> method = parse_method(a.method);
    if (!method) throw ConfigError("explain: unknown method \"" + a.method + "\"");

    ExplainOptions opt;
    opt.aggregation = parse_aggregation(a.agg);
    opt.gradient_variant = parse_gradient_variant(a.gradient_variant);
    std::optional<size_t> class_id;
    if (a.class_id >= 0) class_id = static_cast<size_t>(a.class_id);

    const ModelBundle bundle = load_model(a.weights);

    DataRecord text_rec;
    std::vector<const DataRecord*> recs;
    Dataset data;
    if (!a.text.empty()) {
        text_rec.text = a.text;
        recs.push_back(&text_rec);
    } else {
        data = load_dataset(a.data_path);
        recs = a.split == "all" ? [&] {
            std::vector<const DataRecord*> all;
            for (const DataRecord& r : data.records) all.push_back(&r);
            return all;
        }()
                                : data.split(a.split);
        if (recs.empty())
            throw ConfigError("explain: no records with split \"" + a.split + "\"");
        if (a.limit > 0 && recs.size() > a.limit) recs.resize(a.limit);
    }

    AttributionDoc doc = bundle.cfg.precision == Precision::f32
                             ? explain_records<float>(bundle, recs, *method, class_id, opt)
                             : explain_records<double>(bundle, recs, *method, class_id, opt);
    save_attribution_doc(doc, a.out_path);
    std::cout << "wrote " << doc.items.size() << " attribution(s) to " << a.out_path << "\n";

    std::vector<std::string> inputs = {a.weights};
    if (!a.data_path.empty()) inputs.push_back(a.data_path);
    write_manifest("explain", raw, std::nullopt, inputs, {a.out_path}, a.out_path);
    return 0;
}

template <typename T>
EvalReport run_evaluation(const ModelBundle& bundle, const Dataset& data,
                          const EvaluateArgs& a, const std::vector<Ranker>& rankers,
                          const std::vector<double>& ks) {
    EvalContext<T> ctx;
    ctx.cfg = bundle.cfg;
    ctx.vocab = &bundle.vocab;
    ctx.weights = &bundle.get<T>();
    ctx.corpus_id = sha256_file_hex(a.data_path);
    ctx.model_hash = sha256_file_hex(a.weights);
    ctx.aggregation = parse_aggregation(a.agg);
    ctx.gradient_variant = parse_gradient_variant(a.gradient_variant);
    ctx.aopc_metric = parse_aopc_metric(a.aopc_metric);
    return evaluate(ctx, data, a.split, rankers, ks, parse_direction(a.direction),
                    parse_mask_policy(a.mask_policy));
}

int cmd_evaluate(const EvaluateArgs& a, const std::vector<std::string>& raw) {
    std::vector<Ranker> rankers;
    for (const std::string& name :
         a.methods == "all" ? [] {
             std::vector<std::string> names;
             for (MethodKind m : all_methods()) names.push_back(method_name(m));
             return names;
         }()
                            : split_commas(a.methods)) {
        const std::optional<MethodKind> m = parse_method(name);
        if (!m) throw ConfigError("evaluate: unknown method \"" + name + "\"");
        Ranker r;
        r.kind = RankerKind::Method;
        r.method = *m;
        rankers.push_back(r);
    }
    for (size_t s = 0; s < a.random_baseline; ++s) {
        Ranker r;
        r.kind = RankerKind::Random;
        r.seed = s;
        rankers.push_back(r);
    }
    if (a.oracle) {
        Ranker r;
        r.kind = RankerKind::Oracle;
        rankers.push_back(r);
    }

    std::vector<double> ks;
    for (const std::string& part : split_commas(a.k_list))
        ks.push_back(parse_double(part, "k"));
    if (ks.empty()) throw ConfigError("evaluate: --k needs at least one value");

    const ModelBundle bundle = load_model(a.weights);
    std::vector<std::string> warnings;
    const Dataset data = load_dataset(a.data_path, &warnings);
    for (const std::string& w : warnings) std::cerr << "warning: " << w << "\n";
    if (a.oracle && !data.has_rationales())
        std::cerr << "warning: --oracle on a dataset without rationales\n";

    const EvalReport report = bundle.cfg.precision == Precision::f32
                                  ? run_evaluation<float>(bundle, data, a, rankers, ks)
                                  : run_evaluation<double>(bundle, data, a, rankers, ks);

    save_report_json(report, a.out_path);
    std::vector<std::string> outputs = {a.out_path};
    if (!a.csv_path.empty()) {
        save_report_csv(report, a.csv_path);
        outputs.push_back(a.csv_path);
    }
    write_manifest("evaluate", raw, std::nullopt, {a.weights, a.data_path}, outputs, a.out_path);

    std::cout << "full: macro-F1 " << fixed4(report.full_macro_f1) << ", accuracy "
              << fixed4(report.full_accuracy) << "\n";
    for (const EvalEntry& e : report.entries) {
        std::cout << e.method << " k=" << fixed4(e.k) << " " << e.direction << ": macro-F1 "
                  << fixed4(e.masked_macro_f1) << ", accuracy " << fixed4(e.masked_accuracy);
        if (e.aopc) std::cout << ", aopc " << fixed4(*e.aopc);
        if (e.rationale_top1) std::cout << ", rationale-top1 " << fixed4(*e.rationale_top1);
        std::cout << "\n";
    }
    std::cout << "wrote " << a.out_path << "\n";
    return 0;
}

int cmd_report(const ReportArgs& a, const std::vector<std::string>& raw) {
    std::vector<AttributionDoc> docs;
    for (const std::string& path : a.attribution_paths)
        docs.push_back(load_attribution_doc(path));
    save_html_report(docs, a.out_path);
    std::cout << "wrote " << a.out_path << "\n";
    write_manifest("report", raw, std::nullopt, a.attribution_paths, {a.out_path}, a.out_path);
    return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args) {
    CLI::App app{std::string(kToolName) + " " + kToolVersion +
                 ": gradient-weighted self-attention token attribution"};
    app.require_subcommand(1);

    GenDataArgs gd;
    CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic labeled corpus");
    gen->add_option("--spec", gd.spec_path, "Task spec JSON")->required();
    gen->add_option("--count", gd.count, "Number of sentences")->required();
    gen->add_option("--seed", gd.seed, "Corpus seed");
    gen->add_option("--out", gd.out_path, "Output dataset (.jsonl or .csv)")->required();
    gen->add_option("--out-vocab", gd.out_vocab, "Also write the task vocabulary");

    TrainArgs tr;
    CLI::App* trn = app.add_subcommand("train", "Finetune a classifier on a dataset");
    trn->add_option("--data", tr.data_path, "Dataset file")->required();
    trn->add_option("--config", tr.config_path, "Train config JSON")->required();
    trn->add_option("--out-weights", tr.weights_out, "Output model bundle")->required();
    trn->add_option("--seed", tr.seed, "Override the config seed");
    trn->add_option("--vocab", tr.vocab_path, "Vocabulary file (derived from data if absent)");

    ExplainArgs ex;
    CLI::App* exp = app.add_subcommand("explain", "Score token importance for sentences");
    exp->add_option("--weights", ex.weights, "Model bundle")->required();
    exp->add_option("--text", ex.text, "One sentence to explain");
    exp->add_option("--data", ex.data_path, "Dataset file to explain");
    exp->add_option("--split", ex.split, "Dataset split (train|val|test|all)");
    exp->add_option("--limit", ex.limit, "Explain at most this many records (0 = all)");
    exp->add_option("--method", ex.method, "Attribution method")->required();
    exp->add_option("--class", ex.class_id, "Class whose score is explained");
    exp->add_option("--agg", ex.agg, "Attention aggregation (row|col)");
    exp->add_option("--gradient-variant", ex.gradient_variant,
                    "Input-gradient variant (norm|dot)");
    exp->add_option("--out", ex.out_path, "Output attribution JSON")->required();

    EvaluateArgs ev;
    CLI::App* evl = app.add_subcommand("evaluate", "Faithfulness evaluation over a dataset");
    evl->add_option("--weights", ev.weights, "Model bundle")->required();
    evl->add_option("--data", ev.data_path, "Dataset file")->required();
    evl->add_option("--methods", ev.methods, "Comma list of methods, or \"all\"");
    evl->add_option("--k", ev.k_list, "Comma list of fractions in (0,1]");
    evl->add_option("--direction", ev.direction, "keep-top or mask-top");
    evl->add_option("--split", ev.split, "Dataset split to evaluate");
    evl->add_option("--mask-policy", ev.mask_policy, "mask or delete");
    evl->add_option("--aopc-metric", ev.aopc_metric, "f1 or accuracy");
    evl->add_option("--agg", ev.agg, "Attention aggregation (row|col)");
    evl->add_option("--gradient-variant", ev.gradient_variant,
                    "Input-gradient variant (norm|dot)");
    evl->add_option("--random-baseline", ev.random_baseline,
                    "Number of random-ranking baselines");
    evl->add_flag("--oracle", ev.oracle, "Add the rationale-oracle ranking");
    evl->add_option("--out", ev.out_path, "Output report JSON")->required();
    evl->add_option("--csv", ev.csv_path, "Also write a flat CSV");

    ReportArgs rp;
    CLI::App* rep = app.add_subcommand("report", "Render attribution JSONs to static HTML");
    rep->add_option("--attributions", rp.attribution_paths, "Attribution JSON files")
        ->required()
        ->expected(-1);
    rep->add_option("--out", rp.out_path, "Output HTML file")->required();

    // CLI11 wants argc/argv; rebuild them from the vector.
    std::vector<const char*> argv;
    argv.push_back("gradsam");
    for (const std::string& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(gd, args);
        if (trn->parsed()) return cmd_train(tr, args);
        if (exp->parsed()) return cmd_explain(ex, args);
        if (evl->parsed()) return cmd_evaluate(ev, args);
        if (rep->parsed()) return cmd_report(rp, args);
        std::cerr << "no subcommand given\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

int run_cli(int argc, char** argv) {
    std::vector<std::string> args;
    for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
    return run_cli(args);
}

}  // namespace gradsam
