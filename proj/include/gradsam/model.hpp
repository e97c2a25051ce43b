#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gradsam/tape.hpp"
#include "gradsam/tensor.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam {

enum class Precision { f32, f64 };

const char* precision_name(Precision p);
Precision parse_precision(const std::string& name);  // ConfigError on unknown name

// Encoder hyperparameters. M * d_a must equal d.
struct ModelConfig {
    size_t L = 1;    // encoder layers
    size_t M = 1;    // attention heads per layer
    size_t d = 8;    // hidden width
    size_t d_a = 8;  // per-head width
    size_t N = 8;    // sequence length
    size_t n = 1;    // output classes (1 = single-logit binary)
    size_t vocab_size = 5;
    size_t max_positions = 0;  // 0 means N; must be >= N otherwise
    Precision precision = Precision::f32;

    size_t ffn_hidden() const { return 4 * d; }
    size_t positions() const { return max_positions == 0 ? N : max_positions; }
    void validate() const;  // ConfigError on violation
};

template <typename T>
struct HeadWeights {
    Tensor<T> w_q, w_k, w_v;  // each d_a x d
};

template <typename T>
struct LayerWeights {
    std::vector<HeadWeights<T>> heads;
    Tensor<T> w_o, b_o;              // d x d, 1 x d
    Tensor<T> ln1_gamma, ln1_beta;   // 1 x d
    Tensor<T> w_ff1, b_ff1;          // ffn x d, 1 x ffn
    Tensor<T> w_ff2, b_ff2;          // d x ffn, 1 x d
    Tensor<T> ln2_gamma, ln2_beta;   // 1 x d
};

// All learnable tensors. for_each_param fixes the canonical parameter order
// used by the optimizer and the weight file; both visitors must stay in sync.
template <typename T>
struct EncoderWeights {
    Tensor<T> tok_emb;          // vocab_size x d
    Tensor<T> pos_emb;          // positions x d
    Tensor<T> seg_emb;          // 2 x d
    std::vector<LayerWeights<T>> layers;
    Tensor<T> w_pool, b_pool;   // d x d, 1 x d
    Tensor<T> w_cls, b_cls;     // n x d, 1 x n

    // Scaled-uniform init by fan-in, fully determined by the seed.
    static EncoderWeights init(const ModelConfig& cfg, uint64_t seed);

    void validate(const ModelConfig& cfg) const;  // shapes + finite values

    // fn(const std::string& name, Tensor& t), called once per tensor in the
    // canonical order: embeddings, then per layer (per head w_q/w_k/w_v,
    // then w_o, b_o, ln1, ffn, ln2), then pooler and classifier.
    template <typename Fn>
    void for_each_param(Fn&& fn) {
        visit_params(*this, fn);
    }
    template <typename Fn>
    void for_each_param(Fn&& fn) const {
        visit_params(*this, fn);
    }

    size_t param_count() const;

    template <typename U>
    EncoderWeights<U> cast() const {
        EncoderWeights<U> out;
        out.tok_emb = tok_emb.template cast<U>();
        out.pos_emb = pos_emb.template cast<U>();
        out.seg_emb = seg_emb.template cast<U>();
        out.layers.resize(layers.size());
        for (size_t l = 0; l < layers.size(); ++l) {
            const LayerWeights<T>& in = layers[l];
            LayerWeights<U>& dst = out.layers[l];
            dst.heads.resize(in.heads.size());
            for (size_t m = 0; m < in.heads.size(); ++m) {
                dst.heads[m].w_q = in.heads[m].w_q.template cast<U>();
                dst.heads[m].w_k = in.heads[m].w_k.template cast<U>();
                dst.heads[m].w_v = in.heads[m].w_v.template cast<U>();
            }
            dst.w_o = in.w_o.template cast<U>();
            dst.b_o = in.b_o.template cast<U>();
            dst.ln1_gamma = in.ln1_gamma.template cast<U>();
            dst.ln1_beta = in.ln1_beta.template cast<U>();
            dst.w_ff1 = in.w_ff1.template cast<U>();
            dst.b_ff1 = in.b_ff1.template cast<U>();
            dst.w_ff2 = in.w_ff2.template cast<U>();
            dst.b_ff2 = in.b_ff2.template cast<U>();
            dst.ln2_gamma = in.ln2_gamma.template cast<U>();
            dst.ln2_beta = in.ln2_beta.template cast<U>();
        }
        out.w_pool = w_pool.template cast<U>();
        out.b_pool = b_pool.template cast<U>();
        out.w_cls = w_cls.template cast<U>();
        out.b_cls = b_cls.template cast<U>();
        return out;
    }

private:
    template <typename Self, typename Fn>
    static void visit_params(Self& self, Fn& fn) {
        fn("tok_emb", self.tok_emb);
        fn("pos_emb", self.pos_emb);
        fn("seg_emb", self.seg_emb);
        for (size_t l = 0; l < self.layers.size(); ++l) {
            auto& layer = self.layers[l];
            const std::string base = "layer" + std::to_string(l) + ".";
            for (size_t m = 0; m < layer.heads.size(); ++m) {
                const std::string hb = base + "head" + std::to_string(m) + ".";
                fn(hb + "w_q", layer.heads[m].w_q);
                fn(hb + "w_k", layer.heads[m].w_k);
                fn(hb + "w_v", layer.heads[m].w_v);
            }
            fn(base + "w_o", layer.w_o);
            fn(base + "b_o", layer.b_o);
            fn(base + "ln1_gamma", layer.ln1_gamma);
            fn(base + "ln1_beta", layer.ln1_beta);
            fn(base + "w_ff1", layer.w_ff1);
            fn(base + "b_ff1", layer.b_ff1);
            fn(base + "w_ff2", layer.w_ff2);
            fn(base + "b_ff2", layer.b_ff2);
            fn(base + "ln2_gamma", layer.ln2_gamma);
            fn(base + "ln2_beta", layer.ln2_beta);
        }
        fn("w_pool", self.w_pool);
        fn("b_pool", self.b_pool);
        fn("w_cls", self.w_cls);
        fn("b_cls", self.b_cls);
    }

    template <typename U>
    friend struct EncoderWeights;
};

// Everything forward() leaves behind: the tape (kept alive for backward),
// tap handles, and value copies for inspection.
template <typename T>
struct ForwardTrace {
    std::unique_ptr<Tape<T>> tape;
    Var logits_var;                              // 1 x n
    Var x0_var;                                  // N x d summed input embeddings
    std::vector<std::vector<Var>> attn_vars;     // [L][M] attention taps, N x N
    std::vector<Var> param_vars;                 // leaves in for_each_param order

    Tensor<T> logits;                            // 1 x n copy
    std::vector<Tensor<T>> layer_states;         // U^l copy per layer, N x d
    std::vector<std::vector<Tensor<T>>> attention;  // [L][M] copies of A^{lm}
    std::vector<uint8_t> key_mask;               // 1 = real token
    size_t n_classes = 0;
};

template <typename T>
struct ForwardOptions {
    bool use_serial_kernels = false;
    // When set, replaces A^{lm} with the given [L][M] stack of N x N matrices
    // as plain leaves (no softmax behind them). A layer whose row is empty is
    // left on its organic softmax path, so perturbing one layer's attention
    // still flows through the layers above it. Rows need not be normalized;
    // this is the perturbation hook for gradient checks.
    const std::vector<std::vector<Tensor<T>>>* attention_override = nullptr;
};

template <typename T>
ForwardTrace<T> forward(const TokenSequence& seq, const EncoderWeights<T>& w,
                        const ModelConfig& cfg, const ForwardOptions<T>& opt = {});

// Convenience wrapper for the gradient oracle: forward with A replaced by
// the override, returning only the logits.
template <typename T>
Tensor<T> forward_with_injected_attention(const TokenSequence& seq, const EncoderWeights<T>& w,
                                          const ModelConfig& cfg,
                                          const std::vector<std::vector<Tensor<T>>>& a_override);

enum class TaskKind { Binary, Multiclass };

// The scalar node to differentiate: the lone logit for single-logit models,
// logits[class_id] otherwise. class_id must be present exactly when the task
// is multiclass.
template <typename T>
Var target_score(ForwardTrace<T>& trace, TaskKind task, std::optional<size_t> class_id);

// Argmax label (ties to the lower index); single-logit models predict 1 on a
// positive logit.
template <typename T>
size_t predict_label(const Tensor<T>& logits);

}  // namespace gradsam
