#include "gradsam/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gradsam/errors.hpp"

namespace gradsam {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
}

const char* method_name(MethodKind m) {
    switch (m) {
        case MethodKind::Gradient: return "gradient";
        case MethodKind::ClsAtt: return "cls-att";
        case MethodKind::Att: return "att";
        case MethodKind::AttGrad: return "att-grad";
        case MethodKind::AttGradR: return "att-grad-r";
        case MethodKind::AttTimesAttGrad: return "att-x-att-grad";
        case MethodKind::GradSam: return "grad-sam";
    }
    throw ContractError("method_name: bad enum value");
}

std::optional<MethodKind> parse_method(const std::string& name) {
    for (MethodKind m : all_methods())
        if (name == method_name(m)) return m;
    return std::nullopt;
}

std::vector<MethodKind> all_methods() {
    return {MethodKind::Gradient,  MethodKind::ClsAtt,          MethodKind::Att,
            MethodKind::AttGrad,   MethodKind::AttGradR,        MethodKind::AttTimesAttGrad,
            MethodKind::GradSam};
}

bool method_needs_gradients(MethodKind m) {
    return m != MethodKind::Att && m != MethodKind::ClsAtt;
}

const char* aggregation_name(Aggregation a) {
    return a == Aggregation::Row ? "row" : "col";
}

Aggregation parse_aggregation(const std::string& name) {
    if (name == "row") return Aggregation::Row;
    if (name == "col") return Aggregation::Col;
    throw ConfigError("unknown aggregation '" + name + "' (expected row|col)");
}

const char* gradient_variant_name(GradientVariant v) {
    return v == GradientVariant::Norm ? "norm" : "dot";
}

GradientVariant parse_gradient_variant(const std::string& name) {
    if (name == "norm") return GradientVariant::Norm;
    if (name == "dot") return GradientVariant::Dot;
    throw ConfigError("unknown gradient variant '" + name + "' (expected norm|dot)");
}

std::vector<size_t> rank_descending(const std::vector<double>& r) {
    std::vector<size_t> idx;
    for (size_t i = 0; i < r.size(); ++i)
        if (std::isfinite(r[i])) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(),
                     [&r](size_t a, size_t b) { return r[a] > r[b]; });
    return idx;
}

namespace {

// Shared tail: pin specials to -inf, attach ranking and token strings.
AttributionResult finish_result(std::vector<double> r, const TokenSequence& seq,
                                MethodKind method, Aggregation agg) {
    std::vector<size_t> content = seq.content_positions();
    std::vector<uint8_t> is_content(seq.size(), 0);
    for (size_t i : content) is_content[i] = 1;
    for (size_t i = 0; i < r.size(); ++i)
        if (!is_content[i]) r[i] = kNegInf;

    AttributionResult res;
    res.method = method;
    res.aggregation = agg;
    res.ranking = rank_descending(r);
    res.r = std::move(r);
    res.tokens = seq.pieces;
    return res;
}

}  // namespace

template <typename T>
SamMaps<T> compute_maps(const ForwardTrace<T>& trace, MethodKind method) {
    if (method == MethodKind::Gradient || method == MethodKind::ClsAtt)
        throw ContractError(std::string("compute_maps: ") + method_name(method) +
                            " is not a map-based method");
    const bool needs_grad = method_needs_gradients(method);
    if (needs_grad && !trace.tape->grads_ready())
        throw ContractError(std::string("compute_maps: ") + method_name(method) +
                            " needs gradients but backward has not run");

    SamMaps<T> maps;
    maps.method = method;
    maps.A = trace.attention;
    const size_t L = trace.attn_vars.size();
    maps.H.resize(L);
    if (needs_grad) maps.G.resize(L);

    for (size_t l = 0; l < L; ++l) {
        const size_t M = trace.attn_vars[l].size();
        for (size_t m = 0; m < M; ++m) {
            const Tensor<T>& a = maps.A[l][m];
            if (!needs_grad) {
                maps.H[l].push_back(a);  // Att: H is the attention itself
                continue;
            }
            const Tensor<T>& g = trace.tape->grad(trace.attn_vars[l][m]);
            maps.G[l].push_back(g);
            Tensor<T> h(a.shape());
            for (size_t i = 0; i < a.numel(); ++i) {
                const T av = a.data()[i];
                const T gv = g.data()[i];
                switch (method) {
                    case MethodKind::AttGrad: h.data()[i] = gv; break;
                    case MethodKind::AttGradR: h.data()[i] = gv > T(0) ? gv : T(0); break;
                    case MethodKind::AttTimesAttGrad: h.data()[i] = av * gv; break;
                    case MethodKind::GradSam:
                        h.data()[i] = av * (gv > T(0) ? gv : T(0));
                        break;
                    default: throw ContractError("compute_maps: unreachable method");
                }
            }
            maps.H[l].push_back(std::move(h));
        }
    }
    return maps;
}

template <typename T>
AttributionResult token_importance(const SamMaps<T>& maps, const TokenSequence& seq,
                                   Aggregation agg) {
    if (maps.H.empty() || maps.H[0].empty())
        throw ContractError("token_importance: no maps");
    const size_t L = maps.H.size();
    const size_t M = maps.H[0].size();
    const size_t N = maps.H[0][0].rows();
    if (seq.size() != N)
        throw DimensionError("token_importance: sequence length " + std::to_string(seq.size()) +
                             " != map size " + std::to_string(N));

    std::vector<double> r(N, 0.0);
    for (size_t l = 0; l < L; ++l) {
        if (maps.H[l].size() != M)
            throw DimensionError("token_importance: ragged head count at layer " +
                                 std::to_string(l));
        for (size_t m = 0; m < M; ++m) {
            const Tensor<T>& h = maps.H[l][m];
            if (h.rows() != N || h.cols() != N)
                throw DimensionError("token_importance: map must be N x N, got " +
                                     h.shape_str());
            for (size_t i = 0; i < N; ++i) {
                double acc = 0.0;
                for (size_t j = 0; j < N; ++j)
                    acc += static_cast<double>(agg == Aggregation::Row ? h(i, j) : h(j, i));
                r[i] += acc;
            }
        }
    }
    const double denom = static_cast<double>(L) * static_cast<double>(M) *
                         static_cast<double>(N);
    for (double& v : r) v /= denom;
    return finish_result(std::move(r), seq, maps.method, agg);
}

template <typename T>
AttributionResult input_gradient_importance(const ForwardTrace<T>& trace,
                                            const TokenSequence& seq,
                                            GradientVariant variant) {
    if (!trace.tape->grads_ready())
        throw ContractError("input_gradient_importance: backward has not run");
    const Tensor<T>& g = trace.tape->grad(trace.x0_var);
    const Tensor<T>& x0 = trace.tape->value(trace.x0_var);
    const size_t N = g.rows(), d = g.cols();
    if (seq.size() != N)
        throw DimensionError("input_gradient_importance: sequence/gradient length mismatch");

    std::vector<double> r(N, 0.0);
    for (size_t i = 0; i < N; ++i) {
        double acc = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double gv = static_cast<double>(g(i, j));
            acc += variant == GradientVariant::Norm ? gv * gv
                                                    : gv * static_cast<double>(x0(i, j));
        }
        r[i] = variant == GradientVariant::Norm ? std::sqrt(acc) : acc;
    }
    AttributionResult res = finish_result(std::move(r), seq, MethodKind::Gradient,
                                          Aggregation::Row);
    return res;
}

template <typename T>
AttributionResult cls_attention_importance(const ForwardTrace<T>& trace,
                                           const TokenSequence& seq) {
    if (trace.attention.empty() || trace.attention.back().empty())
        throw ContractError("cls_attention_importance: trace has no attention");
    const std::vector<Tensor<T>>& last = trace.attention.back();
    const size_t M = last.size();
    const size_t N = last[0].rows();
    if (seq.size() != N)
        throw DimensionError("cls_attention_importance: sequence/attention length mismatch");

    // Row 0 is [CLS]: average over heads of the attention [CLS] pays token i.
    std::vector<double> r(N, 0.0);
    for (size_t m = 0; m < M; ++m)
        for (size_t i = 0; i < N; ++i) r[i] += static_cast<double>(last[m](0, i));
    for (double& v : r) v /= static_cast<double>(M);
    return finish_result(std::move(r), seq, MethodKind::ClsAtt, Aggregation::Row);
}

template <typename T>
AttributionResult attribution_from_trace(const ForwardTrace<T>& trace, const TokenSequence& seq,
                                         MethodKind method, std::optional<size_t> class_id,
                                         const ExplainOptions& opt) {
    AttributionResult res;
    switch (method) {
        case MethodKind::Gradient:
            res = input_gradient_importance(trace, seq, opt.gradient_variant);
            break;
        case MethodKind::ClsAtt:
            res = cls_attention_importance(trace, seq);
            break;
        default:
            res = token_importance(compute_maps(trace, method), seq, opt.aggregation);
            break;
    }
    res.class_id = class_id;
    return res;
}

template <typename T>
AttributionResult explain_sequence(const TokenSequence& seq, const EncoderWeights<T>& w,
                                   const ModelConfig& cfg, MethodKind method,
                                   std::optional<size_t> class_id, const ExplainOptions& opt) {
    ForwardOptions<T> fopt;
    fopt.use_serial_kernels = opt.use_serial_kernels;
    ForwardTrace<T> trace = forward(seq, w, cfg, fopt);

    std::optional<size_t> effective_class;
    if (cfg.n > 1) {
        effective_class = class_id.has_value() ? class_id : predict_label(trace.logits);
        if (*effective_class >= cfg.n)
            throw DimensionError("explain_sequence: class id " +
                                 std::to_string(*effective_class) + " out of range");
    } else if (class_id.has_value()) {
        throw ConfigError("explain_sequence: class id given for a single-logit model");
    }

    if (method_needs_gradients(method)) {
        Var score = cfg.n > 1 ? target_score(trace, TaskKind::Multiclass, effective_class)
                              : target_score(trace, TaskKind::Binary, std::nullopt);
        trace.tape->backward(score);
    }
    return attribution_from_trace(trace, seq, method, effective_class, opt);
}

// ---------------------------------------------------------------------------
// Explicit instantiations.
// ---------------------------------------------------------------------------

#define GRADSAM_INSTANTIATE_ATTRIBUTION(T)                                                     \
    template SamMaps<T> compute_maps(const ForwardTrace<T>&, MethodKind);                      \
    template AttributionResult token_importance(const SamMaps<T>&, const TokenSequence&,       \
                                                Aggregation);                                  \
    template AttributionResult input_gradient_importance(const ForwardTrace<T>&,               \
                                                         const TokenSequence&,                 \
                                                         GradientVariant);                     \
    template AttributionResult cls_attention_importance(const ForwardTrace<T>&,                \
                                                        const TokenSequence&);                 \
    template AttributionResult attribution_from_trace(const ForwardTrace<T>&,                  \
                                                      const TokenSequence&, MethodKind,        \
                                                      std::optional<size_t>,                   \
                                                      const ExplainOptions&);                  \
    template AttributionResult explain_sequence(const TokenSequence&,                          \
                                                const EncoderWeights<T>&, const ModelConfig&,  \
                                                MethodKind, std::optional<size_t>,             \
                                                const ExplainOptions&);

GRADSAM_INSTANTIATE_ATTRIBUTION(float)
GRADSAM_INSTANTIATE_ATTRIBUTION(double)

#undef GRADSAM_INSTANTIATE_ATTRIBUTION

}  // namespace gradsam
