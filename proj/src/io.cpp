#include "gradsam/io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

#include "gradsam/errors.hpp"
#include "gradsam/sha256.hpp"
#include "gradsam/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "tensor blobs are written by memcpy and assume a little-endian host");

namespace gradsam {

using nlohmann::json;

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    out << content;
    if (!out) throw ConfigError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Datasets.
// ---------------------------------------------------------------------------

namespace {

const char* kSplits[] = {"train", "val", "test"};

void check_split(const std::string& split, const std::string& where) {
    for (const char* s : kSplits)
        if (split == s) return;
    throw ConfigError(where + ": unknown split \"" + split + "\" (expected train|val|test)");
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

DataRecord record_from_json(const json& j, const std::string& where, size_t fallback_id) {
    if (!j.is_object()) throw ConfigError(where + ": record is not a JSON object");
    DataRecord rec;
    rec.id = fallback_id;
    if (j.contains("id")) {
        if (!j["id"].is_number_unsigned()) throw ConfigError(where + ": id must be a nonnegative integer");
        rec.id = j["id"].get<size_t>();
    }
    if (!j.contains("text") || !j["text"].is_string())
        throw ConfigError(where + ": missing or non-string field \"text\"");
    rec.text = j["text"].get<std::string>();
    if (!j.contains("label") || !j["label"].is_number_unsigned())
        throw ConfigError(where + ": missing or non-integer field \"label\"");
    rec.label = j["label"].get<size_t>();
    if (j.contains("rationale")) {
        if (!j["rationale"].is_array())
            throw ConfigError(where + ": \"rationale\" must be an array of word indices");
        for (const json& v : j["rationale"]) {
            if (!v.is_number_unsigned())
                throw ConfigError(where + ": rationale entries must be nonnegative integers");
            rec.rationale.push_back(v.get<size_t>());
        }
    }
    if (j.contains("split")) {
        if (!j["split"].is_string()) throw ConfigError(where + ": \"split\" must be a string");
        rec.split = j["split"].get<std::string>();
    }
    check_split(rec.split, where);
    return rec;
}

// Minimal RFC 4180: fields with commas, quotes, or newlines are quoted,
// quotes doubled.
std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

// When `open` is non-null an unterminated quote sets *open instead of
// throwing, so the caller can join the next physical line (quoted fields may
// contain newlines) and parse again.
std::vector<std::string> csv_parse_line(const std::string& line, const std::string& where,
                                        bool* open = nullptr) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    size_t i = 0;
    while (i < line.size()) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur += '"';
                    i += 2;
                } else {
                    quoted = false;
                    ++i;
                }
            } else {
                cur += c;
                ++i;
            }
        } else if (c == '"' && cur.empty()) {
            quoted = true;
            ++i;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
            ++i;
        } else {
            cur += c;
            ++i;
        }
    }
    if (quoted) {
        if (!open) throw ConfigError(where + ": unterminated quoted field");
        *open = true;
        return fields;
    }
    fields.push_back(std::move(cur));
    return fields;
}

size_t parse_size(const std::string& s, const std::string& where, const char* field) {
    if (s.empty()) throw ConfigError(where + ": empty " + field);
    size_t pos = 0;
    unsigned long long v = 0;
    try {
        v = std::stoull(s, &pos);
    } catch (const std::exception&) {
        throw ConfigError(where + ": bad " + field + " \"" + s + "\"");
    }
    if (pos != s.size() || s[0] == '-')
        throw ConfigError(where + ": bad " + field + " \"" + s + "\"");
    return static_cast<size_t>(v);
}

Dataset load_dataset_csv(const std::string& path, std::istream& in) {
    Dataset data;
    std::string line;
    size_t line_no = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        if (!saw_header) {
            if (line != "id,text,label,rationale,split")
                throw ConfigError(where + ": expected header id,text,label,rationale,split");
            saw_header = true;
            continue;
        }
        bool open = false;
        std::vector<std::string> f = csv_parse_line(line, where, &open);
        while (open) {
            std::string next;
            if (!std::getline(in, next))
                throw ConfigError(where + ": unterminated quoted field");
            ++line_no;
            if (!next.empty() && next.back() == '\r') next.pop_back();
            line += '\n';
            line += next;
            open = false;
            f = csv_parse_line(line, where, &open);
        }
        if (f.size() != 5)
            throw ConfigError(where + ": expected 5 fields, got " + std::to_string(f.size()));
        DataRecord rec;
        rec.id = parse_size(f[0], where, "id");
        rec.text = f[1];
        rec.label = parse_size(f[2], where, "label");
        if (!f[3].empty()) {
            std::stringstream rs(f[3]);
            std::string part;
            while (std::getline(rs, part, ';'))
                rec.rationale.push_back(parse_size(part, where, "rationale index"));
        }
        rec.split = f[4];
        check_split(rec.split, where);
        data.records.push_back(std::move(rec));
    }
    return data;
}

Dataset load_dataset_jsonl(const std::string& path, std::istream& in) {
    Dataset data;
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        const std::string where = path + ":" + std::to_string(line_no);
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw ConfigError(where + ": invalid JSON");
        data.records.push_back(record_from_json(j, where, data.records.size()));
    }
    return data;
}

}  // namespace

Dataset load_dataset(const std::string& path, std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open dataset: " + path);
    Dataset data = ends_with(path, ".csv") ? load_dataset_csv(path, in)
                                           : load_dataset_jsonl(path, in);
    if (data.empty() && warnings)
        warnings->push_back("dataset is empty: " + path);
    return data;
}

void save_dataset(const Dataset& data, const std::string& path) {
    std::ostringstream out;
    if (ends_with(path, ".csv")) {
        out << "id,text,label,rationale,split\n";
        for (const DataRecord& rec : data.records) {
            std::string rat;
            for (size_t i = 0; i < rec.rationale.size(); ++i) {
                if (i) rat += ';';
                rat += std::to_string(rec.rationale[i]);
            }
            out << rec.id << ',' << csv_escape(rec.text) << ',' << rec.label << ',' << rat
                << ',' << rec.split << '\n';
        }
    } else {
        for (const DataRecord& rec : data.records) {
            json j;
            j["id"] = rec.id;
            j["text"] = rec.text;
            j["label"] = rec.label;
            j["rationale"] = rec.rationale;
            j["split"] = rec.split;
            out << j.dump() << '\n';
        }
    }
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Model bundles.
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'S', 'G', 'W', '1'};

json config_to_json(const ModelConfig& cfg) {
    json j;
    j["L"] = cfg.L;
    j["M"] = cfg.M;
    j["d"] = cfg.d;
    j["d_a"] = cfg.d_a;
    j["N"] = cfg.N;
    j["n"] = cfg.n;
    j["vocab_size"] = cfg.vocab_size;
    j["max_positions"] = cfg.max_positions;
    j["precision"] = precision_name(cfg.precision);
    return j;
}

ModelConfig config_from_json(const json& j, const std::string& where) {
    ModelConfig cfg;
    try {
        cfg.L = j.at("L").get<size_t>();
        cfg.M = j.at("M").get<size_t>();
        cfg.d = j.at("d").get<size_t>();
        cfg.d_a = j.at("d_a").get<size_t>();
        cfg.N = j.at("N").get<size_t>();
        cfg.n = j.at("n").get<size_t>();
        cfg.vocab_size = j.at("vocab_size").get<size_t>();
        cfg.max_positions = j.value("max_positions", size_t{0});
        cfg.precision = parse_precision(j.at("precision").get<std::string>());
    } catch (const json::exception& e) {
        throw IntegrityError(where + ": bad config: " + e.what());
    }
    cfg.validate();
    return cfg;
}

template <typename T>
void write_bundle(const ModelConfig& cfg, const Vocab& vocab, const EncoderWeights<T>& w,
                  const std::string& path) {
    w.validate(cfg);
    if (vocab.size() != cfg.vocab_size)
        throw ContractError("save_model: vocab size " + std::to_string(vocab.size()) +
                            " != config vocab_size " + std::to_string(cfg.vocab_size));

    json table = json::array();
    std::string blob;
    w.for_each_param([&](const std::string& name, const Tensor<T>& t) {
        json entry;
        entry["name"] = name;
        entry["shape"] = {t.rows(), t.cols()};
        entry["offset"] = blob.size();
        entry["bytes"] = t.numel() * sizeof(T);
        table.push_back(std::move(entry));
        const size_t old = blob.size();
        blob.resize(old + t.numel() * sizeof(T));
        std::memcpy(blob.data() + old, t.data(), t.numel() * sizeof(T));
    });

    json manifest;
    manifest["format"] = "SGW1";
    manifest["tool_version"] = kToolVersion;
    manifest["config"] = config_to_json(cfg);
    manifest["vocab"] = vocab.tokens();
    manifest["tensors"] = std::move(table);
    manifest["blob_bytes"] = blob.size();
    manifest["blob_sha256"] = sha256_hex(blob);

    const std::string mtext = manifest.dump();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open file for writing: " + path);
    out.write(kMagic, 4);
    uint64_t mlen = mtext.size();
    char lenbuf[8];
    for (int i = 0; i < 8; ++i) lenbuf[i] = char(uint8_t(mlen >> (8 * i)));
    out.write(lenbuf, 8);
    out.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
    out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
    if (!out) throw ConfigError("write failed: " + path);
}

template <typename T>
EncoderWeights<T> weights_from_blob(const ModelConfig& cfg, const json& table,
                                    const std::string& blob, const std::string& where) {
    // Start from a throwaway init so every tensor already has its shape, then
    // overwrite from the blob in canonical order.
    EncoderWeights<T> w = EncoderWeights<T>::init(cfg, 0);
    size_t idx = 0;
    w.for_each_param([&](const std::string& name, Tensor<T>& t) {
        if (idx >= table.size())
            throw IntegrityError(where + ": tensor table too short at \"" + name + "\"");
        const json& entry = table[idx];
        const std::string got_name = entry.at("name").get<std::string>();
        if (got_name != name)
            throw IntegrityError(where + ": tensor " + std::to_string(idx) + " is \"" +
                                 got_name + "\", expected \"" + name + "\"");
        const auto shape = entry.at("shape").get<std::vector<size_t>>();
        if (shape.size() != 2 || shape[0] != t.rows() || shape[1] != t.cols())
            throw IntegrityError(where + ": tensor \"" + name + "\" has wrong shape");
        const size_t offset = entry.at("offset").get<size_t>();
        const size_t bytes = entry.at("bytes").get<size_t>();
        if (bytes != t.numel() * sizeof(T) || offset + bytes > blob.size())
            throw IntegrityError(where + ": tensor \"" + name + "\" outside blob");
        std::memcpy(t.data(), blob.data() + offset, bytes);
        ++idx;
    });
    if (idx != table.size())
        throw IntegrityError(where + ": tensor table has " + std::to_string(table.size()) +
                             " entries, expected " + std::to_string(idx));
    w.validate(cfg);
    return w;
}

}  // namespace

void save_model(const ModelBundle& bundle, const std::string& path) {
    std::visit([&](const auto& w) { write_bundle(bundle.cfg, bundle.vocab, w, path); },
               bundle.weights);
}

ModelBundle load_model(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open model: " + path);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (raw.size() < 12 || std::memcmp(raw.data(), kMagic, 4) != 0)
        throw IntegrityError(path + ": not an SGW1 model file");
    uint64_t mlen = 0;
    for (int i = 0; i < 8; ++i) mlen |= uint64_t(uint8_t(raw[size_t(4 + i)])) << (8 * i);
    if (12 + mlen > raw.size()) throw IntegrityError(path + ": truncated manifest");

    json manifest = json::parse(raw.substr(12, mlen), nullptr, false);
    if (manifest.is_discarded()) throw IntegrityError(path + ": manifest is not valid JSON");
    if (manifest.value("format", "") != "SGW1")
        throw IntegrityError(path + ": manifest format mismatch");

    const std::string blob = raw.substr(12 + mlen);
    const size_t expect_bytes = manifest.at("blob_bytes").get<size_t>();
    if (blob.size() < expect_bytes) throw IntegrityError(path + ": truncated weight blob");
    if (blob.size() > expect_bytes) throw IntegrityError(path + ": trailing bytes after blob");
    if (sha256_hex(blob) != manifest.at("blob_sha256").get<std::string>())
        throw IntegrityError(path + ": weight blob hash mismatch");

    ModelBundle bundle;
    bundle.cfg = config_from_json(manifest.at("config"), path);
    const auto tokens = manifest.at("vocab").get<std::vector<std::string>>();
    bundle.vocab = Vocab::from_lines(tokens);
    if (bundle.vocab.size() != bundle.cfg.vocab_size)
        throw IntegrityError(path + ": vocab length disagrees with config");

    const json& table = manifest.at("tensors");
    if (!table.is_array()) throw IntegrityError(path + ": tensor table is not an array");
    if (bundle.cfg.precision == Precision::f32)
        bundle.weights = weights_from_blob<float>(bundle.cfg, table, blob, path);
    else
        bundle.weights = weights_from_blob<double>(bundle.cfg, table, blob, path);
    return bundle;
}

// ---------------------------------------------------------------------------
// Attribution documents.
// ---------------------------------------------------------------------------

namespace {

json score_to_json(double s) {
    if (std::isinf(s) && s < 0) return json("-inf");
    if (!std::isfinite(s)) throw ContractError("attribution score is not finite");
    return json(s);
}

double score_from_json(const json& v, const std::string& where) {
    if (v.is_string()) {
        if (v.get<std::string>() == "-inf") return -std::numeric_limits<double>::infinity();
        throw ConfigError(where + ": bad score string \"" + v.get<std::string>() + "\"");
    }
    if (!v.is_number()) throw ConfigError(where + ": score is neither number nor \"-inf\"");
    return v.get<double>();
}

}  // namespace

json attribution_doc_to_json(const AttributionDoc& doc) {
    json j;
    j["tool_version"] = kToolVersion;
    j["method"] = doc.method;
    j["aggregation"] = doc.aggregation;
    json items = json::array();
    for (const AttributionItem& item : doc.items) {
        if (item.tokens.size() != item.scores.size())
            throw ContractError("attribution item: tokens/scores length mismatch");
        json ji;
        ji["record_id"] = item.record_id;
        ji["text"] = item.text;
        if (item.class_id) ji["class_id"] = *item.class_id;
        else ji["class_id"] = nullptr;
        json toks = json::array();
        for (size_t i = 0; i < item.tokens.size(); ++i) {
            json t;
            t["index"] = i;
            t["text"] = item.tokens[i];
            t["score"] = score_to_json(item.scores[i]);
            toks.push_back(std::move(t));
        }
        ji["tokens"] = std::move(toks);
        ji["ranking"] = item.ranking;
        items.push_back(std::move(ji));
    }
    j["items"] = std::move(items);
    return j;
}

AttributionDoc attribution_doc_from_json(const json& j) {
    AttributionDoc doc;
    try {
        doc.method = j.at("method").get<std::string>();
        doc.aggregation = j.value("aggregation", "row");
        for (const json& ji : j.at("items")) {
            AttributionItem item;
            item.record_id = ji.value("record_id", size_t{0});
            item.text = ji.value("text", "");
            if (ji.contains("class_id") && !ji["class_id"].is_null())
                item.class_id = ji["class_id"].get<size_t>();
            for (const json& t : ji.at("tokens")) {
                item.tokens.push_back(t.at("text").get<std::string>());
                item.scores.push_back(score_from_json(t.at("score"), "attribution"));
            }
            item.ranking = ji.value("ranking", std::vector<size_t>{});
            doc.items.push_back(std::move(item));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad attribution document: ") + e.what());
    }
    return doc;
}

void save_attribution_doc(const AttributionDoc& doc, const std::string& path) {
    write_text_file(path, attribution_doc_to_json(doc).dump(2) + "\n");
}

AttributionDoc load_attribution_doc(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
    try {
        return attribution_doc_from_json(j);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Evaluation reports.
// ---------------------------------------------------------------------------

json report_to_json(const EvalReport& report) {
    json j;
    j["tool_version"] = kToolVersion;
    j["corpus_id"] = report.corpus_id;
    j["model_hash"] = report.model_hash;
    j["mask_policy"] = report.mask_policy;
    j["aggregation"] = report.aggregation;
    j["split"] = report.split;
    j["full_macro_f1"] = report.full_macro_f1;
    j["full_accuracy"] = report.full_accuracy;
    json entries = json::array();
    for (const EvalEntry& e : report.entries) {
        json je;
        je["method"] = e.method;
        je["k"] = e.k;
        je["direction"] = e.direction;
        je["masked_macro_f1"] = e.masked_macro_f1;
        je["masked_accuracy"] = e.masked_accuracy;
        je["aopc"] = e.aopc ? json(*e.aopc) : json(nullptr);
        je["rationale_top1"] = e.rationale_top1 ? json(*e.rationale_top1) : json(nullptr);
        je["rationale_mrr"] = e.rationale_mrr ? json(*e.rationale_mrr) : json(nullptr);
        json sents = json::array();
        for (const SentenceEvalRecord& s : e.sentences) {
            json js;
            js["record_id"] = s.record_id;
            js["gold"] = s.gold;
            js["pred_full"] = s.pred_full;
            js["pred_masked"] = s.pred_masked;
            js["kept"] = s.kept;
            js["masked"] = s.masked;
            sents.push_back(std::move(js));
        }
        je["sentences"] = std::move(sents);
        entries.push_back(std::move(je));
    }
    j["entries"] = std::move(entries);
    return j;
}

EvalReport report_from_json(const json& j) {
    EvalReport report;
    try {
        report.corpus_id = j.value("corpus_id", "");
        report.model_hash = j.value("model_hash", "");
        report.mask_policy = j.value("mask_policy", "");
        report.aggregation = j.value("aggregation", "");
        report.split = j.value("split", "");
        report.full_macro_f1 = j.at("full_macro_f1").get<double>();
        report.full_accuracy = j.at("full_accuracy").get<double>();
        for (const json& je : j.at("entries")) {
            EvalEntry e;
            e.method = je.at("method").get<std::string>();
            e.k = je.at("k").get<double>();
            e.direction = je.at("direction").get<std::string>();
            e.masked_macro_f1 = je.at("masked_macro_f1").get<double>();
            e.masked_accuracy = je.at("masked_accuracy").get<double>();
            if (je.contains("aopc") && !je["aopc"].is_null()) e.aopc = je["aopc"].get<double>();
            if (je.contains("rationale_top1") && !je["rationale_top1"].is_null())
                e.rationale_top1 = je["rationale_top1"].get<double>();
            if (je.contains("rationale_mrr") && !je["rationale_mrr"].is_null())
                e.rationale_mrr = je["rationale_mrr"].get<double>();
            for (const json& js : je.value("sentences", json::array())) {
                SentenceEvalRecord s;
                s.record_id = js.at("record_id").get<size_t>();
                s.gold = js.at("gold").get<size_t>();
                s.pred_full = js.at("pred_full").get<size_t>();
                s.pred_masked = js.at("pred_masked").get<size_t>();
                s.kept = js.value("kept", std::vector<size_t>{});
                s.masked = js.value("masked", std::vector<size_t>{});
                e.sentences.push_back(std::move(s));
            }
            report.entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad evaluation report: ") + e.what());
    }
    return report;
}

void save_report_json(const EvalReport& report, const std::string& path) {
    write_text_file(path, report_to_json(report).dump(2) + "\n");
}

EvalReport load_report_json(const std::string& path) {
    json j = json::parse(read_text_file(path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
    return report_from_json(j);
}

void save_report_csv(const EvalReport& report, const std::string& path) {
    std::ostringstream out;
    out << "method,k,direction,metric,value\n";
    const auto num = [](double v) { return json(v).dump(); };
    out << "full,,,macro_f1," << num(report.full_macro_f1) << '\n';
    out << "full,,,accuracy," << num(report.full_accuracy) << '\n';
    for (const EvalEntry& e : report.entries) {
        const std::string prefix =
            csv_escape(e.method) + "," + num(e.k) + "," + e.direction + ",";
        out << prefix << "masked_macro_f1," << num(e.masked_macro_f1) << '\n';
        out << prefix << "masked_accuracy," << num(e.masked_accuracy) << '\n';
        if (e.aopc) out << prefix << "aopc," << num(*e.aopc) << '\n';
        if (e.rationale_top1) out << prefix << "rationale_top1," << num(*e.rationale_top1) << '\n';
        if (e.rationale_mrr) out << prefix << "rationale_mrr," << num(*e.rationale_mrr) << '\n';
    }
    write_text_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Run manifests.
// ---------------------------------------------------------------------------

void save_run_manifest(const RunManifest& manifest, const std::string& path) {
    json j;
    j["tool_version"] = kToolVersion;
    j["command"] = manifest.command;
    j["args"] = manifest.args;
    j["seed"] = manifest.seed ? json(*manifest.seed) : json(nullptr);
    json inputs = json::object();
    for (const auto& [file, hash] : manifest.input_hashes) inputs[file] = hash;
    json outputs = json::object();
    for (const auto& [file, hash] : manifest.output_hashes) outputs[file] = hash;
    j["inputs"] = std::move(inputs);
    j["outputs"] = std::move(outputs);
    if (!manifest.timestamp.empty()) j["timestamp"] = manifest.timestamp;
    write_text_file(path, j.dump(2) + "\n");
}

}  // namespace gradsam
