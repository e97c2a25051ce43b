#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gradsam/attribution.hpp"
#include "gradsam/dataset.hpp"
#include "gradsam/model.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam {

enum class MaskDirection { KeepTop, MaskTop };

const char* direction_name(MaskDirection d);
MaskDirection parse_direction(const std::string& name);  // ConfigError on unknown name

// How a k fraction and a direction turn a ranking into a mask.
struct MaskingSpec {
    double k = 0.2;
    MaskDirection direction = MaskDirection::KeepTop;
    MaskPolicy policy = MaskPolicy::MaskToken;

    void validate() const;  // k must be in (0, 1]
};

// ceil(k * count): the number of top-ranked content tokens a k fraction
// selects. k must be in (0, 1].
size_t ceil_fraction(double k, size_t count);

// Unweighted mean of per-class F1 over classes 0..n_classes-1. A class
// absent from both preds and golds contributes 1 (nothing to get wrong).
double macro_f1(const std::vector<size_t>& preds, const std::vector<size_t>& golds,
                size_t n_classes);

double accuracy_score(const std::vector<size_t>& preds, const std::vector<size_t>& golds);

// What produces a ranking for a sentence: an attribution method, a seeded
// random shuffle (baseline), or the gold rationale placed first (oracle).
enum class RankerKind { Method, Random, Oracle };

struct Ranker {
    RankerKind kind = RankerKind::Method;
    MethodKind method = MethodKind::GradSam;
    uint64_t seed = 0;  // Random only

    std::string label() const;  // "grad-sam", "random-s0", "oracle"
};

// Content positions whose char spans overlap a gold rationale word of the
// record (rationale holds whitespace-token indices into record.text).
std::vector<size_t> rationale_positions(const DataRecord& rec, const TokenSequence& seq);

struct SentenceEvalRecord {
    size_t record_id = 0;
    size_t gold = 0;
    size_t pred_full = 0;
    size_t pred_masked = 0;
    std::vector<size_t> kept;    // content positions left visible, ascending
    std::vector<size_t> masked;  // content positions hidden, ascending
};

struct RationaleStats {
    double top1_rate = 0.0;  // rankings whose first entry is a gold position
    double mrr = 0.0;        // mean 1/(1 + rank of the best-placed gold position)
    size_t counted = 0;      // sentences entering the two means
};

// Both metrics over sentences where counted[i] is true and gold_positions[i]
// is nonempty. ConfigError when nothing qualifies.
RationaleStats rationale_recovery(const std::vector<std::vector<size_t>>& rankings,
                                  const std::vector<std::vector<size_t>>& gold_positions,
                                  const std::vector<uint8_t>& counted);

struct EvalEntry {
    std::string method;  // ranker label
    double k = 0.0;
    std::string direction;
    double masked_macro_f1 = 0.0;
    double masked_accuracy = 0.0;
    std::optional<double> aopc;  // mask-top only
    std::optional<double> rationale_top1;
    std::optional<double> rationale_mrr;
    std::vector<SentenceEvalRecord> sentences;
};

struct EvalReport {
    std::string corpus_id;
    std::string model_hash;
    std::string mask_policy;
    std::string aggregation;
    std::string split;
    double full_macro_f1 = 0.0;
    double full_accuracy = 0.0;
    std::vector<EvalEntry> entries;
};

enum class AopcMetric { MacroF1, Accuracy };

const char* aopc_metric_name(AopcMetric m);
AopcMetric parse_aopc_metric(const std::string& name);

template <typename T>
struct EvalContext {
    ModelConfig cfg;
    const Vocab* vocab = nullptr;
    const EncoderWeights<T>* weights = nullptr;
    std::string corpus_id;
    std::string model_hash;
    Aggregation aggregation = Aggregation::Row;
    GradientVariant gradient_variant = GradientVariant::Norm;
    // AOPC's "change of accuracy" measured as macro-F1 delta by default to
    // stay commensurate with the F1 protocol; Accuracy is the strict toggle.
    AopcMetric aopc_metric = AopcMetric::MacroF1;
};

// Full protocol run over one dataset split: per sentence, one forward pass
// plus one backward from the gold-class score (single-logit models use the
// lone logit), rankings for every ranker, then a re-prediction per
// (ranker, k) with the masking the direction dictates. Aggregates land in
// one EvalEntry per (ranker, k); AOPC (full minus masked) is attached for
// the mask-top direction. Sentences run in parallel; any per-sentence
// failure aborts the run naming the record id.
template <typename T>
EvalReport evaluate(const EvalContext<T>& ctx, const Dataset& data, const std::string& split,
                    const std::vector<Ranker>& rankers, const std::vector<double>& ks,
                    MaskDirection direction, MaskPolicy policy);

// The keep-top-k macro-F1 protocol for one method and one k.
template <typename T>
EvalReport masked_eval(const EvalContext<T>& ctx, const Dataset& data,
                       const std::string& split, MethodKind method, const MaskingSpec& spec);

// The mask-top-k AOPC protocol for one method and one k.
template <typename T>
EvalReport aopc_eval(const EvalContext<T>& ctx, const Dataset& data, const std::string& split,
                     MethodKind method, const MaskingSpec& spec);

}  // namespace gradsam
