#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gradsam/model.hpp"
#include "gradsam/tensor.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam {

// The seven token-ranking methods. The first two score tokens directly; the
// other five build per-(layer, head) maps H and reduce them to one score per
// token.
enum class MethodKind {
    Gradient,
    ClsAtt,
    Att,
    AttGrad,
    AttGradR,
    AttTimesAttGrad,
    GradSam,
};

const char* method_name(MethodKind m);                       // e.g. "grad-sam"
std::optional<MethodKind> parse_method(const std::string&);  // nullopt on unknown
std::vector<MethodKind> all_methods();
bool method_needs_gradients(MethodKind m);

// Which index of H is summed for token i's score. Row means row i: the
// attention token i pays to the rest of the sentence, gradient-weighted.
// Col sums column i instead: the attention token i receives. Row is the
// default; Col exists as an experimentation toggle.
enum class Aggregation { Row, Col };

const char* aggregation_name(Aggregation a);
Aggregation parse_aggregation(const std::string& name);  // ConfigError on unknown name

// Two readings of the "Gradient" baseline: the L2 norm of the score's
// gradient with respect to the token's input embedding row, or that
// gradient's dot product with the embedding itself. Norm is the default.
enum class GradientVariant { Norm, Dot };

const char* gradient_variant_name(GradientVariant v);
GradientVariant parse_gradient_variant(const std::string& name);

// Per-(layer, head) map stack for one sentence: captured attention A,
// score gradients G, and the method's combination H. G is empty for the
// attention-only method (Att); A, G, H are all [L][M] of N x N otherwise.
template <typename T>
struct SamMaps {
    MethodKind method = MethodKind::GradSam;
    std::vector<std::vector<Tensor<T>>> A;
    std::vector<std::vector<Tensor<T>>> G;
    std::vector<std::vector<Tensor<T>>> H;
};

// Importance vector plus presentation-ready ranking for one sentence.
// Scores are kept in double regardless of model precision.
struct AttributionResult {
    MethodKind method = MethodKind::GradSam;
    std::optional<size_t> class_id;
    Aggregation aggregation = Aggregation::Row;
    std::vector<double> r;           // length N; -inf at [CLS]/[SEP]/[PAD]
    std::vector<size_t> ranking;     // content positions, descending score,
                                     // ties broken by lower index
    std::vector<std::string> tokens; // piece strings, length N
};

// Builds H per the method formula for every (layer, head). Requires a
// completed backward pass for every method except Att (ContractError
// otherwise).
template <typename T>
SamMaps<T> compute_maps(const ForwardTrace<T>& trace, MethodKind method);

// Reduces maps to r_i = (1 / (L*M*N)) * sum over (l, m) of the i-th row
// (or column) of H^{lm}, then pins special positions to -inf and ranks the
// rest descending.
template <typename T>
AttributionResult token_importance(const SamMaps<T>& maps, const TokenSequence& seq,
                                   Aggregation agg = Aggregation::Row);

// Method Gradient: per-token norm (or dot) of the score gradient with
// respect to the summed input embedding rows.
template <typename T>
AttributionResult input_gradient_importance(const ForwardTrace<T>& trace,
                                            const TokenSequence& seq,
                                            GradientVariant variant = GradientVariant::Norm);

// Method ClsAtt: head-mean of the final layer's [CLS] attention row.
// Needs no gradients.
template <typename T>
AttributionResult cls_attention_importance(const ForwardTrace<T>& trace,
                                           const TokenSequence& seq);

struct ExplainOptions {
    Aggregation aggregation = Aggregation::Row;
    GradientVariant gradient_variant = GradientVariant::Norm;
    bool use_serial_kernels = false;
};

// One-stop per-sentence pipeline: forward, backward from the target score
// when the method needs gradients (single-logit models take the lone logit;
// multi-logit models take logits[class_id], defaulting to the predicted
// class), then the method's scorer. The returned trace can be reused for
// further methods on the same sentence.
template <typename T>
AttributionResult explain_sequence(const TokenSequence& seq, const EncoderWeights<T>& w,
                                   const ModelConfig& cfg, MethodKind method,
                                   std::optional<size_t> class_id,
                                   const ExplainOptions& opt = {});

// Scorer half of explain_sequence for a trace whose backward (if any) has
// already run; lets eval reuse one trace across all methods.
template <typename T>
AttributionResult attribution_from_trace(const ForwardTrace<T>& trace, const TokenSequence& seq,
                                         MethodKind method, std::optional<size_t> class_id,
                                         const ExplainOptions& opt = {});

// Descending indices of the finite entries of r, ties broken by lower index.
std::vector<size_t> rank_descending(const std::vector<double>& r);

}  // namespace gradsam
