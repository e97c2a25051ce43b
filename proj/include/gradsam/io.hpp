#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "gradsam/dataset.hpp"
#include "gradsam/eval.hpp"
#include "gradsam/model.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam {

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// ---------------------------------------------------------------------------
// Datasets. JSONL is the canonical format (one record object per line); CSV
// with header id,text,label,rationale,split is accepted for hand-built
// fixtures, rationale as semicolon-joined word indices. Format is picked by
// extension (.csv vs anything else). An empty file loads as an empty dataset
// and pushes a note onto `warnings`.
// ---------------------------------------------------------------------------

Dataset load_dataset(const std::string& path, std::vector<std::string>* warnings = nullptr);
void save_dataset(const Dataset& data, const std::string& path);

// ---------------------------------------------------------------------------
// Model bundles. A single file carries config, vocabulary, and weights:
//
//   bytes 0..3   magic "SGW1"
//   bytes 4..11  manifest length, u64 little-endian
//   manifest     JSON: config, vocab token list, tensor table
//                (name/shape/offset/bytes), blob_bytes, blob_sha256
//   blob         tensors back to back, row-major little-endian, in the
//                canonical parameter order
//
// Loading verifies the magic, the table against the config, the blob length,
// and the blob hash; any mismatch raises IntegrityError.
// ---------------------------------------------------------------------------

struct ModelBundle {
    ModelConfig cfg;
    Vocab vocab;
    std::variant<EncoderWeights<float>, EncoderWeights<double>> weights;

    template <typename T>
    const EncoderWeights<T>& get() const {
        return std::get<EncoderWeights<T>>(weights);
    }
    template <typename T>
    EncoderWeights<T>& get() {
        return std::get<EncoderWeights<T>>(weights);
    }
};

void save_model(const ModelBundle& bundle, const std::string& path);
ModelBundle load_model(const std::string& path);

// ---------------------------------------------------------------------------
// Attribution documents: one method over one or more sentences. Scores are
// JSON numbers except -inf, which becomes the string "-inf" (JSON has no
// infinities).
// ---------------------------------------------------------------------------

struct AttributionItem {
    size_t record_id = 0;
    std::string text;
    std::optional<size_t> class_id;
    std::vector<std::string> tokens;
    std::vector<double> scores;  // length == tokens, -inf at specials
    std::vector<size_t> ranking;
};

struct AttributionDoc {
    std::string method;
    std::string aggregation = "row";
    std::vector<AttributionItem> items;
};

nlohmann::json attribution_doc_to_json(const AttributionDoc& doc);
AttributionDoc attribution_doc_from_json(const nlohmann::json& j);
void save_attribution_doc(const AttributionDoc& doc, const std::string& path);
AttributionDoc load_attribution_doc(const std::string& path);

// ---------------------------------------------------------------------------
// Evaluation reports: a JSON document with sorted keys and no timestamps (so
// fixed-seed runs are byte-identical), plus a flat CSV projection
// (method,k,direction,metric,value) for plotting.
// ---------------------------------------------------------------------------

nlohmann::json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::json& j);
void save_report_json(const EvalReport& report, const std::string& path);
EvalReport load_report_json(const std::string& path);
void save_report_csv(const EvalReport& report, const std::string& path);

// ---------------------------------------------------------------------------
// Run manifests: a sidecar written next to command outputs recording what
// produced them. Timestamps are allowed here and only here.
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::optional<uint64_t> seed;
    std::vector<std::pair<std::string, std::string>> input_hashes;   // path, sha256
    std::vector<std::pair<std::string, std::string>> output_hashes;  // path, sha256
    std::string timestamp;  // ISO 8601 UTC, empty to omit
};

void save_run_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace gradsam
