#include "gradsam/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <stdexcept>

#include "gradsam/errors.hpp"
#include "gradsam/rng.hpp"

namespace gradsam {

const char* direction_name(MaskDirection d) {
    return d == MaskDirection::KeepTop ? "keep-top" : "mask-top";
}

MaskDirection parse_direction(const std::string& name) {
    if (name == "keep-top" || name == "keep") return MaskDirection::KeepTop;
    if (name == "mask-top" || name == "mask") return MaskDirection::MaskTop;
    throw ConfigError("unknown direction '" + name + "' (expected keep-top|mask-top)");
}

void MaskingSpec::validate() const {
    if (!(k > 0.0) || k > 1.0)
        throw ConfigError("masking spec: k must be in (0, 1], got " + std::to_string(k));
}

size_t ceil_fraction(double k, size_t count) {
    if (!(k > 0.0) || k > 1.0)
        throw ConfigError("ceil_fraction: k must be in (0, 1], got " + std::to_string(k));
    if (count == 0) return 0;
    // The 1e-9 slack keeps exact multiples exact: 0.2 * 5 lands a hair above
    // 1.0 in binary and must still count as 1, not 2.
    const auto n = static_cast<size_t>(std::ceil(k * static_cast<double>(count) - 1e-9));
    return std::min(std::max<size_t>(n, 1), count);
}

double macro_f1(const std::vector<size_t>& preds, const std::vector<size_t>& golds,
                size_t n_classes) {
    if (preds.empty()) throw ConfigError("macro_f1: empty input");
    if (preds.size() != golds.size())
        throw DimensionError("macro_f1: preds/golds length mismatch");
    if (n_classes == 0) throw ConfigError("macro_f1: n_classes must be >= 1");
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] >= n_classes || golds[i] >= n_classes)
            throw ConfigError("macro_f1: label outside 0.." + std::to_string(n_classes - 1));

    double sum = 0;
    for (size_t c = 0; c < n_classes; ++c) {
        size_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            const bool p = preds[i] == c, g = golds[i] == c;
            if (p && g) ++tp;
            else if (p) ++fp;
            else if (g) ++fn;
        }
        // Absent class (no predictions, no golds): F1 = 1, nothing to miss.
        const double f1 = (tp + fp + fn == 0)
                              ? 1.0
                              : 2.0 * static_cast<double>(tp) /
                                    static_cast<double>(2 * tp + fp + fn);
        sum += f1;
    }
    return sum / static_cast<double>(n_classes);
}

double accuracy_score(const std::vector<size_t>& preds, const std::vector<size_t>& golds) {
    if (preds.empty()) throw ConfigError("accuracy_score: empty input");
    if (preds.size() != golds.size())
        throw DimensionError("accuracy_score: preds/golds length mismatch");
    size_t hits = 0;
    for (size_t i = 0; i < preds.size(); ++i)
        if (preds[i] == golds[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(preds.size());
}

std::string Ranker::label() const {
    switch (kind) {
        case RankerKind::Method: return method_name(method);
        case RankerKind::Random: return "random-s" + std::to_string(seed);
        case RankerKind::Oracle: return "oracle";
    }
    throw ContractError("Ranker::label: bad enum value");
}

std::vector<size_t> rationale_positions(const DataRecord& rec, const TokenSequence& seq) {
    // Whitespace tokens of the record text, with char offsets.
    std::vector<std::pair<size_t, size_t>> word_spans;
    size_t i = 0;
    const std::string& text = rec.text;
    while (i < text.size()) {
        if (std::isspace(static_cast<unsigned char>(text[i]))) {
            ++i;
            continue;
        }
        size_t start = i;
        while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        word_spans.emplace_back(start, i);
    }

    std::set<size_t> out;
    const std::vector<size_t> content = seq.content_positions();
    for (size_t wi : rec.rationale) {
        if (wi >= word_spans.size()) continue;
        const auto [b, e] = word_spans[wi];
        for (size_t pos : content) {
            const auto [pb, pe] = seq.spans[pos];
            if (pb < e && pe > b) out.insert(pos);
        }
    }
    return {out.begin(), out.end()};
}

RationaleStats rationale_recovery(const std::vector<std::vector<size_t>>& rankings,
                                  const std::vector<std::vector<size_t>>& gold_positions,
                                  const std::vector<uint8_t>& counted) {
    if (rankings.size() != gold_positions.size() || rankings.size() != counted.size())
        throw DimensionError("rationale_recovery: input length mismatch");
    RationaleStats stats;
    double top1 = 0, mrr = 0;
    for (size_t i = 0; i < rankings.size(); ++i) {
        if (!counted[i] || gold_positions[i].empty()) continue;
        ++stats.counted;
        const std::set<size_t> gold(gold_positions[i].begin(), gold_positions[i].end());
        const std::vector<size_t>& rank = rankings[i];
        if (!rank.empty() && gold.count(rank[0])) top1 += 1.0;
        for (size_t r = 0; r < rank.size(); ++r) {
            if (gold.count(rank[r])) {
                mrr += 1.0 / static_cast<double>(r + 1);
                break;
            }
        }
    }
    if (stats.counted == 0)
        throw ConfigError("rationale_recovery: no qualifying sentences");
    stats.top1_rate = top1 / static_cast<double>(stats.counted);
    stats.mrr = mrr / static_cast<double>(stats.counted);
    return stats;
}

const char* aopc_metric_name(AopcMetric m) {
    return m == AopcMetric::MacroF1 ? "f1" : "accuracy";
}

AopcMetric parse_aopc_metric(const std::string& name) {
    if (name == "f1") return AopcMetric::MacroF1;
    if (name == "accuracy") return AopcMetric::Accuracy;
    throw ConfigError("unknown aopc metric '" + name + "' (expected f1|accuracy)");
}

namespace {

// Everything evaluate() collects for one sentence before aggregation.
struct SentenceWork {
    size_t pred_full = 0;
    std::vector<size_t> content;
    std::vector<size_t> gold_positions;
    std::vector<std::vector<size_t>> rankings;         // per ranker
    std::vector<size_t> masked_pred;                   // per (ranker, k) flat
    std::vector<std::vector<size_t>> kept, masked;     // per (ranker, k) flat
};

}  // namespace

template <typename T>
EvalReport evaluate(const EvalContext<T>& ctx, const Dataset& data, const std::string& split,
                    const std::vector<Ranker>& rankers, const std::vector<double>& ks,
                    MaskDirection direction, MaskPolicy policy) {
    if (!ctx.vocab || !ctx.weights) throw ContractError("evaluate: context incomplete");
    if (rankers.empty()) throw ConfigError("evaluate: no rankers");
    if (ks.empty()) throw ConfigError("evaluate: no k values");
    for (double k : ks)
        if (!(k > 0.0) || k > 1.0)
            throw ConfigError("evaluate: k must be in (0, 1], got " + std::to_string(k));
    ctx.cfg.validate();

    std::vector<const DataRecord*> records = data.split(split);
    if (records.empty())
        throw ConfigError("evaluate: no records with split \"" + split + "\"");

    const size_t n_eval_classes = ctx.cfg.n == 1 ? 2 : ctx.cfg.n;
    for (const DataRecord* r : records)
        if (r->label >= n_eval_classes)
            throw ConfigError("evaluate: record " + std::to_string(r->id) + " label " +
                              std::to_string(r->label) + " outside model classes");

    bool needs_grad = false;
    for (const Ranker& r : rankers)
        needs_grad = needs_grad ||
                     (r.kind == RankerKind::Method && method_needs_gradients(r.method));

    const size_t n_rec = records.size();
    const size_t n_combo = rankers.size() * ks.size();
    std::vector<TokenSequence> seqs(n_rec);
    for (size_t i = 0; i < n_rec; ++i)
        seqs[i] = encode(*ctx.vocab, records[i]->text, ctx.cfg.N);

    ExplainOptions ex_opt;
    ex_opt.aggregation = ctx.aggregation;
    ex_opt.gradient_variant = ctx.gradient_variant;

    std::vector<SentenceWork> work(n_rec);
    std::vector<std::string> errors(n_rec);

    // Sentences are independent: each owns its tape and writes only its own
    // slot. Failures are carried out of the parallel region by record.
    const int64_t n_rec_i = static_cast<int64_t>(n_rec);
#pragma omp parallel for schedule(dynamic)
    for (int64_t ii = 0; ii < n_rec_i; ++ii) {
        const size_t i = static_cast<size_t>(ii);
        try {
            const DataRecord& rec = *records[i];
            const TokenSequence& seq = seqs[i];
            SentenceWork& sw = work[i];
            sw.content = seq.content_positions();
            sw.gold_positions = rationale_positions(rec, seq);

            ForwardTrace<T> trace = forward(seq, *ctx.weights, ctx.cfg);
            sw.pred_full = predict_label(trace.logits);

            // The explained score: the gold-class logit (multiclass) or the
            // lone logit (single-logit binary).
            std::optional<size_t> class_id;
            if (ctx.cfg.n > 1) class_id = rec.label;
            if (needs_grad) {
                Var score = ctx.cfg.n > 1
                                ? target_score(trace, TaskKind::Multiclass, class_id)
                                : target_score(trace, TaskKind::Binary, std::nullopt);
                trace.tape->backward(score);
            }

            sw.rankings.resize(rankers.size());
            for (size_t r = 0; r < rankers.size(); ++r) {
                const Ranker& ranker = rankers[r];
                switch (ranker.kind) {
                    case RankerKind::Method:
                        sw.rankings[r] = attribution_from_trace(trace, seq, ranker.method,
                                                                class_id, ex_opt)
                                             .ranking;
                        break;
                    case RankerKind::Random: {
                        std::vector<size_t> shuffled = sw.content;
                        Rng rng(mix_seed(ranker.seed, rec.id));
                        rng.shuffle(shuffled);
                        sw.rankings[r] = std::move(shuffled);
                        break;
                    }
                    case RankerKind::Oracle: {
                        std::vector<size_t> rank = sw.gold_positions;
                        const std::set<size_t> gold(rank.begin(), rank.end());
                        for (size_t pos : sw.content)
                            if (!gold.count(pos)) rank.push_back(pos);
                        sw.rankings[r] = std::move(rank);
                        break;
                    }
                }
            }

            sw.masked_pred.resize(n_combo);
            sw.kept.resize(n_combo);
            sw.masked.resize(n_combo);
            for (size_t r = 0; r < rankers.size(); ++r) {
                for (size_t kx = 0; kx < ks.size(); ++kx) {
                    const size_t combo = r * ks.size() + kx;
                    const size_t top_n = ceil_fraction(ks[kx], sw.content.size());
                    const std::vector<size_t>& rank = sw.rankings[r];
                    std::set<size_t> top(rank.begin(),
                                         rank.begin() + static_cast<ptrdiff_t>(
                                                            std::min(top_n, rank.size())));
                    std::vector<size_t> kept;
                    for (size_t pos : sw.content) {
                        const bool in_top = top.count(pos) != 0;
                        if (in_top == (direction == MaskDirection::KeepTop))
                            kept.push_back(pos);
                    }
                    TokenSequence masked_seq = apply_mask(seq, kept, policy);
                    ForwardTrace<T> masked_trace = forward(masked_seq, *ctx.weights, ctx.cfg);
                    sw.masked_pred[combo] = predict_label(masked_trace.logits);
                    sw.kept[combo] = std::move(kept);
                    for (size_t pos : sw.content)
                        if (!std::count(sw.kept[combo].begin(), sw.kept[combo].end(), pos))
                            sw.masked[combo].push_back(pos);
                }
            }
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    }

    for (size_t i = 0; i < n_rec; ++i)
        if (!errors[i].empty())
            throw std::runtime_error("evaluate: record " + std::to_string(records[i]->id) +
                                     ": " + errors[i]);

    EvalReport report;
    report.corpus_id = ctx.corpus_id;
    report.model_hash = ctx.model_hash;
    report.mask_policy = mask_policy_name(policy);
    report.aggregation = aggregation_name(ctx.aggregation);
    report.split = split;

    std::vector<size_t> golds(n_rec), preds_full(n_rec);
    for (size_t i = 0; i < n_rec; ++i) {
        golds[i] = records[i]->label;
        preds_full[i] = work[i].pred_full;
    }
    report.full_macro_f1 = macro_f1(preds_full, golds, n_eval_classes);
    report.full_accuracy = accuracy_score(preds_full, golds);
    const double full_aopc_ref = ctx.aopc_metric == AopcMetric::MacroF1
                                     ? report.full_macro_f1
                                     : report.full_accuracy;

    const bool any_rationale = data.has_rationales();
    std::vector<uint8_t> counted(n_rec);
    std::vector<std::vector<size_t>> gold_positions(n_rec);
    for (size_t i = 0; i < n_rec; ++i) {
        gold_positions[i] = work[i].gold_positions;
        counted[i] = preds_full[i] == golds[i] && !gold_positions[i].empty();
    }

    for (size_t r = 0; r < rankers.size(); ++r) {
        std::optional<RationaleStats> stats;
        if (any_rationale) {
            std::vector<std::vector<size_t>> rankings(n_rec);
            for (size_t i = 0; i < n_rec; ++i) rankings[i] = work[i].rankings[r];
            bool any_counted = false;
            for (size_t i = 0; i < n_rec; ++i)
                any_counted = any_counted || (counted[i] && !gold_positions[i].empty());
            if (any_counted) stats = rationale_recovery(rankings, gold_positions, counted);
        }
        for (size_t kx = 0; kx < ks.size(); ++kx) {
            const size_t combo = r * ks.size() + kx;
            EvalEntry entry;
            entry.method = rankers[r].label();
            entry.k = ks[kx];
            entry.direction = direction_name(direction);

            std::vector<size_t> preds(n_rec);
            for (size_t i = 0; i < n_rec; ++i) preds[i] = work[i].masked_pred[combo];
            entry.masked_macro_f1 = macro_f1(preds, golds, n_eval_classes);
            entry.masked_accuracy = accuracy_score(preds, golds);
            if (direction == MaskDirection::MaskTop) {
                const double masked_ref = ctx.aopc_metric == AopcMetric::MacroF1
                                              ? entry.masked_macro_f1
                                              : entry.masked_accuracy;
                entry.aopc = full_aopc_ref - masked_ref;
            }
            if (stats) {
                entry.rationale_top1 = stats->top1_rate;
                entry.rationale_mrr = stats->mrr;
            }
            entry.sentences.resize(n_rec);
            for (size_t i = 0; i < n_rec; ++i) {
                SentenceEvalRecord& sr = entry.sentences[i];
                sr.record_id = records[i]->id;
                sr.gold = golds[i];
                sr.pred_full = preds_full[i];
                sr.pred_masked = preds[i];
                sr.kept = work[i].kept[combo];
                sr.masked = work[i].masked[combo];
                std::sort(sr.kept.begin(), sr.kept.end());
                std::sort(sr.masked.begin(), sr.masked.end());
            }
            report.entries.push_back(std::move(entry));
        }
    }
    return report;
}

template <typename T>
EvalReport masked_eval(const EvalContext<T>& ctx, const Dataset& data,
                       const std::string& split, MethodKind method, const MaskingSpec& spec) {
    spec.validate();
    if (spec.direction != MaskDirection::KeepTop)
        throw ContractError("masked_eval: direction must be keep-top");
    Ranker ranker;
    ranker.kind = RankerKind::Method;
    ranker.method = method;
    return evaluate(ctx, data, split, {ranker}, {spec.k}, spec.direction, spec.policy);
}

template <typename T>
EvalReport aopc_eval(const EvalContext<T>& ctx, const Dataset& data, const std::string& split,
                     MethodKind method, const MaskingSpec& spec) {
    spec.validate();
    if (spec.direction != MaskDirection::MaskTop)
        throw ContractError("aopc_eval: direction must be mask-top");
    Ranker ranker;
    ranker.kind = RankerKind::Method;
    ranker.method = method;
    return evaluate(ctx, data, split, {ranker}, {spec.k}, spec.direction, spec.policy);
}

// ---------------------------------------------------------------------------
// Explicit instantiations.
// ---------------------------------------------------------------------------

#define GRADSAM_INSTANTIATE_EVAL(T)                                                        \
    template struct EvalContext<T>;                                                       \
    template EvalReport evaluate(const EvalContext<T>&, const Dataset&, const std::string&, \
                                 const std::vector<Ranker>&, const std::vector<double>&,    \
                                 MaskDirection, MaskPolicy);                                \
    template EvalReport masked_eval(const EvalContext<T>&, const Dataset&,                  \
                                    const std::string&, MethodKind, const MaskingSpec&);    \
    template EvalReport aopc_eval(const EvalContext<T>&, const Dataset&, const std::string&, \
                                  MethodKind, const MaskingSpec&);

GRADSAM_INSTANTIATE_EVAL(float)
GRADSAM_INSTANTIATE_EVAL(double)

#undef GRADSAM_INSTANTIATE_EVAL

}  // namespace gradsam
