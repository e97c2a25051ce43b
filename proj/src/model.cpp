#include "gradsam/model.hpp"

#include <cmath>
#include <numeric>

#include "gradsam/errors.hpp"
#include "gradsam/rng.hpp"

namespace gradsam {

namespace {
// LayerNorm epsilon used throughout the encoder.
constexpr double kLnEps = 1e-5;
}

const char* precision_name(Precision p) {
    switch (p) {
        case Precision::f32: return "f32";
        case Precision::f64: return "f64";
    }
    throw ContractError("precision_name: bad enum value");
}

Precision parse_precision(const std::string& name) {
    if (name == "f32") return Precision::f32;
    if (name == "f64") return Precision::f64;
    throw ConfigError("unknown precision '" + name + "' (expected f32|f64)");
}

void ModelConfig::validate() const {
    if (L < 1) throw ConfigError("model config: L must be >= 1");
    if (M < 1 || d_a < 1) throw ConfigError("model config: M and d_a must be >= 1");
    if (M * d_a != d)
        throw ConfigError("model config: M * d_a must equal d (" + std::to_string(M) + " * " +
                          std::to_string(d_a) + " != " + std::to_string(d) + ")");
    if (N < 3) throw ConfigError("model config: N must be >= 3");
    if (n < 1) throw ConfigError("model config: n must be >= 1");
    if (vocab_size < 5) throw ConfigError("model config: vocab_size must be >= 5");
    if (max_positions != 0 && max_positions < N)
        throw ConfigError("model config: max_positions must be 0 or >= N");
}

// ---------------------------------------------------------------------------
// EncoderWeights
// ---------------------------------------------------------------------------

template <typename T>
EncoderWeights<T> EncoderWeights<T>::init(const ModelConfig& cfg, uint64_t seed) {
    cfg.validate();
    EncoderWeights<T> w;
    w.tok_emb = Tensor<T>({cfg.vocab_size, cfg.d});
    w.pos_emb = Tensor<T>({cfg.positions(), cfg.d});
    w.seg_emb = Tensor<T>({2, cfg.d});
    w.layers.resize(cfg.L);
    for (LayerWeights<T>& layer : w.layers) {
        layer.heads.resize(cfg.M);
        for (HeadWeights<T>& h : layer.heads) {
            h.w_q = Tensor<T>({cfg.d_a, cfg.d});
            h.w_k = Tensor<T>({cfg.d_a, cfg.d});
            h.w_v = Tensor<T>({cfg.d_a, cfg.d});
        }
        layer.w_o = Tensor<T>({cfg.d, cfg.d});
        layer.b_o = Tensor<T>({1, cfg.d});
        layer.ln1_gamma = Tensor<T>({1, cfg.d});
        layer.ln1_beta = Tensor<T>({1, cfg.d});
        layer.w_ff1 = Tensor<T>({cfg.ffn_hidden(), cfg.d});
        layer.b_ff1 = Tensor<T>({1, cfg.ffn_hidden()});
        layer.w_ff2 = Tensor<T>({cfg.d, cfg.ffn_hidden()});
        layer.b_ff2 = Tensor<T>({1, cfg.d});
        layer.ln2_gamma = Tensor<T>({1, cfg.d});
        layer.ln2_beta = Tensor<T>({1, cfg.d});
    }
    w.w_pool = Tensor<T>({cfg.d, cfg.d});
    w.b_pool = Tensor<T>({1, cfg.d});
    w.w_cls = Tensor<T>({cfg.n, cfg.d});
    w.b_cls = Tensor<T>({1, cfg.n});

    // Fill in canonical order so the draw sequence is part of the format.
    // Weight matrices: uniform +- 1/sqrt(fan_in); embeddings: uniform +- 0.1;
    // biases and LN betas: 0; LN gammas: 1. Draws happen in double and are
    // cast, so f32 and f64 inits describe the same numbers.
    Rng rng(seed);
    w.for_each_param([&rng](const std::string& name, Tensor<T>& t) {
        const bool is_gamma = name.find("gamma") != std::string::npos;
        const bool is_beta = name.find("beta") != std::string::npos;
        const bool is_bias = name.find(".b_") != std::string::npos ||
                             name.rfind("b_", 0) == 0;
        const bool is_emb = name.find("emb") != std::string::npos;
        if (is_gamma) {
            t.fill(T(1));
            return;
        }
        if (is_beta || is_bias) {
            t.fill(T(0));
            return;
        }
        const double scale = is_emb ? 0.1 : 1.0 / std::sqrt(static_cast<double>(t.cols()));
        for (size_t i = 0; i < t.numel(); ++i)
            t.data()[i] = static_cast<T>((rng.uniform01() * 2.0 - 1.0) * scale);
    });
    return w;
}

template <typename T>
void EncoderWeights<T>::validate(const ModelConfig& cfg) const {
    auto expect = [](const Tensor<T>& t, size_t r, size_t c, const char* name) {
        if (!t.is_matrix() || t.rows() != r || t.cols() != c)
            throw DimensionError(std::string("weights: ") + name + " must be " +
                                 std::to_string(r) + " x " + std::to_string(c) + ", got " +
                                 t.shape_str());
        if (!t.all_finite())
            throw NumericError(std::string("weights: non-finite values in ") + name);
    };
    expect(tok_emb, cfg.vocab_size, cfg.d, "tok_emb");
    expect(pos_emb, cfg.positions(), cfg.d, "pos_emb");
    expect(seg_emb, 2, cfg.d, "seg_emb");
    if (layers.size() != cfg.L)
        throw DimensionError("weights: expected " + std::to_string(cfg.L) + " layers, got " +
                             std::to_string(layers.size()));
    for (size_t l = 0; l < layers.size(); ++l) {
        const LayerWeights<T>& layer = layers[l];
        if (layer.heads.size() != cfg.M)
            throw DimensionError("weights: layer " + std::to_string(l) + " expected " +
                                 std::to_string(cfg.M) + " heads, got " +
                                 std::to_string(layer.heads.size()));
        for (const HeadWeights<T>& h : layer.heads) {
            expect(h.w_q, cfg.d_a, cfg.d, "w_q");
            expect(h.w_k, cfg.d_a, cfg.d, "w_k");
            expect(h.w_v, cfg.d_a, cfg.d, "w_v");
        }
        expect(layer.w_o, cfg.d, cfg.d, "w_o");
        expect(layer.b_o, 1, cfg.d, "b_o");
        expect(layer.ln1_gamma, 1, cfg.d, "ln1_gamma");
        expect(layer.ln1_beta, 1, cfg.d, "ln1_beta");
        expect(layer.w_ff1, cfg.ffn_hidden(), cfg.d, "w_ff1");
        expect(layer.b_ff1, 1, cfg.ffn_hidden(), "b_ff1");
        expect(layer.w_ff2, cfg.d, cfg.ffn_hidden(), "w_ff2");
        expect(layer.b_ff2, 1, cfg.d, "b_ff2");
        expect(layer.ln2_gamma, 1, cfg.d, "ln2_gamma");
        expect(layer.ln2_beta, 1, cfg.d, "ln2_beta");
    }
    expect(w_pool, cfg.d, cfg.d, "w_pool");
    expect(b_pool, 1, cfg.d, "b_pool");
    expect(w_cls, cfg.n, cfg.d, "w_cls");
    expect(b_cls, 1, cfg.n, "b_cls");
}

template <typename T>
size_t EncoderWeights<T>::param_count() const {
    size_t total = 0;
    for_each_param([&total](const std::string&, const Tensor<T>& t) { total += t.numel(); });
    return total;
}

// ---------------------------------------------------------------------------
// forward
// ---------------------------------------------------------------------------

template <typename T>
ForwardTrace<T> forward(const TokenSequence& seq, const EncoderWeights<T>& w,
                        const ModelConfig& cfg, const ForwardOptions<T>& opt) {
    cfg.validate();
    w.validate(cfg);
    if (seq.size() != cfg.N)
        throw DimensionError("forward: sequence length " + std::to_string(seq.size()) +
                             " != config N " + std::to_string(cfg.N));
    if (opt.attention_override) {
        const auto& ov = *opt.attention_override;
        if (ov.size() != cfg.L)
            throw DimensionError("forward: attention override must cover all layers");
        for (const auto& per_layer : ov) {
            if (!per_layer.empty() && per_layer.size() != cfg.M)
                throw DimensionError(
                    "forward: attention override layer must cover all heads or none");
            for (const Tensor<T>& a : per_layer)
                if (!a.is_matrix() || a.rows() != cfg.N || a.cols() != cfg.N)
                    throw DimensionError("forward: attention override must be N x N, got " +
                                         a.shape_str());
        }
    }

    ForwardTrace<T> tr;
    tr.tape = std::make_unique<Tape<T>>(opt.use_serial_kernels);
    Tape<T>& tp = *tr.tape;
    tr.key_mask = seq.attention_mask;
    tr.n_classes = cfg.n;

    // Leaves in for_each_param order; consumed positionally below in the
    // exact same order.
    w.for_each_param([&](const std::string&, const Tensor<T>& t) {
        tr.param_vars.push_back(tp.leaf(t));
    });
    size_t pidx = 0;
    auto next_param = [&]() { return tr.param_vars[pidx++]; };

    const Var tok_emb = next_param();
    const Var pos_emb = next_param();
    const Var seg_emb = next_param();

    std::vector<int32_t> pos_ids(cfg.N);
    std::iota(pos_ids.begin(), pos_ids.end(), 0);
    std::vector<int32_t> seg_ids(cfg.N, 0);
    Var x = tp.add(tp.add(tp.embedding_rows(tok_emb, seq.ids),
                          tp.embedding_rows(pos_emb, pos_ids)),
                   tp.embedding_rows(seg_emb, seg_ids));
    tr.x0_var = x;

    const T inv_sqrt_da = T(1) / static_cast<T>(std::sqrt(static_cast<double>(cfg.d_a)));
    tr.attn_vars.resize(cfg.L);
    tr.attention.resize(cfg.L);

    for (size_t l = 0; l < cfg.L; ++l) {
        std::vector<Var> head_outs;
        for (size_t m = 0; m < cfg.M; ++m) {
            const Var w_q = next_param();
            const Var w_k = next_param();
            const Var w_v = next_param();
            Var q = tp.matmul(x, w_q, false, true);  // N x d_a
            Var k = tp.matmul(x, w_k, false, true);
            Var scores = tp.scale(tp.matmul(q, k, false, true), inv_sqrt_da);
            Var a;
            if (opt.attention_override && !(*opt.attention_override)[l].empty()) {
                a = tp.leaf((*opt.attention_override)[l][m]);
            } else {
                // [PAD] keys are excluded from the softmax, which is the
                // minus-infinity-logit masking without materializing infs.
                a = tp.softmax_rows(scores, seq.attention_mask);
            }
            tr.attn_vars[l].push_back(a);
            tr.attention[l].push_back(tp.value(a));
            Var v = tp.matmul(x, w_v, false, true);
            head_outs.push_back(tp.matmul(a, v));  // N x d_a
        }
        Var concat = cfg.M == 1 ? head_outs[0] : tp.concat_cols(head_outs);
        const Var w_o = next_param();
        const Var b_o = next_param();
        const Var ln1_gamma = next_param();
        const Var ln1_beta = next_param();
        const Var w_ff1 = next_param();
        const Var b_ff1 = next_param();
        const Var w_ff2 = next_param();
        const Var b_ff2 = next_param();
        const Var ln2_gamma = next_param();
        const Var ln2_beta = next_param();

        Var proj = tp.add_bias_row(tp.matmul(concat, w_o, false, true), b_o);
        Var y = tp.layer_norm(tp.add(x, proj), ln1_gamma, ln1_beta, T(kLnEps));
        Var ff = tp.add_bias_row(tp.matmul(y, w_ff1, false, true), b_ff1);
        Var ff2 = tp.add_bias_row(tp.matmul(tp.gelu(ff), w_ff2, false, true), b_ff2);
        x = tp.layer_norm(tp.add(y, ff2), ln2_gamma, ln2_beta, T(kLnEps));
        tr.layer_states.push_back(tp.value(x));
    }

    const Var w_pool = next_param();
    const Var b_pool = next_param();
    const Var w_cls = next_param();
    const Var b_cls = next_param();
    if (pidx != tr.param_vars.size())
        throw ContractError("forward: parameter order out of sync with for_each_param");

    Var cls_row = tp.select_row(x, 0);
    Var pooled = tp.tanh_op(tp.add_bias_row(tp.matmul(cls_row, w_pool, false, true), b_pool));
    tr.logits_var = tp.add_bias_row(tp.matmul(pooled, w_cls, false, true), b_cls);
    tr.logits = tp.value(tr.logits_var);
    return tr;
}

template <typename T>
Tensor<T> forward_with_injected_attention(
    const TokenSequence& seq, const EncoderWeights<T>& w, const ModelConfig& cfg,
    const std::vector<std::vector<Tensor<T>>>& a_override) {
    ForwardOptions<T> opt;
    opt.attention_override = &a_override;
    return forward(seq, w, cfg, opt).logits;
}

template <typename T>
Var target_score(ForwardTrace<T>& trace, TaskKind task, std::optional<size_t> class_id) {
    if (task == TaskKind::Binary) {
        if (class_id.has_value())
            throw ContractError("target_score: class_id given for a binary task");
        if (trace.n_classes != 1)
            throw ContractError("target_score: binary task requires a single-logit model");
        return trace.tape->select_element(trace.logits_var, 0, 0);
    }
    if (!class_id.has_value())
        throw ContractError("target_score: multiclass task requires class_id");
    if (*class_id >= trace.n_classes)
        throw DimensionError("target_score: class_id " + std::to_string(*class_id) +
                             " out of range for " + std::to_string(trace.n_classes) +
                             " classes");
    return trace.tape->select_element(trace.logits_var, 0, *class_id);
}

template <typename T>
size_t predict_label(const Tensor<T>& logits) {
    if (!logits.is_matrix() || logits.rows() != 1 || logits.cols() < 1)
        throw DimensionError("predict_label: logits must be 1 x n, got " + logits.shape_str());
    if (logits.cols() == 1) return logits(0, 0) > T(0) ? 1 : 0;
    size_t best = 0;
    for (size_t j = 1; j < logits.cols(); ++j)
        if (logits(0, j) > logits(0, best)) best = j;
    return best;
}

// ---------------------------------------------------------------------------
// Explicit instantiations.
// ---------------------------------------------------------------------------

template struct EncoderWeights<float>;
template struct EncoderWeights<double>;

template ForwardTrace<float> forward(const TokenSequence&, const EncoderWeights<float>&,
                                     const ModelConfig&, const ForwardOptions<float>&);
template ForwardTrace<double> forward(const TokenSequence&, const EncoderWeights<double>&,
                                      const ModelConfig&, const ForwardOptions<double>&);
template Tensor<float> forward_with_injected_attention(
    const TokenSequence&, const EncoderWeights<float>&, const ModelConfig&,
    const std::vector<std::vector<Tensor<float>>>&);
template Tensor<double> forward_with_injected_attention(
    const TokenSequence&, const EncoderWeights<double>&, const ModelConfig&,
    const std::vector<std::vector<Tensor<double>>>&);
template Var target_score(ForwardTrace<float>&, TaskKind, std::optional<size_t>);
template Var target_score(ForwardTrace<double>&, TaskKind, std::optional<size_t>);
template size_t predict_label(const Tensor<float>&);
template size_t predict_label(const Tensor<double>&);

}  // namespace gradsam
