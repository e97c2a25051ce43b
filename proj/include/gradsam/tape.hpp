#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "gradsam/tensor.hpp"

namespace gradsam {

// Handle into a Tape. Default-constructed handles are invalid.
struct Var {
    int32_t id = -1;
    bool valid() const { return id >= 0; }
};

// Count of backward passes run across all tapes since process start (or the
// last reset). Attribution tests use this to prove that the attention-only
// methods never touch the gradient machinery.
uint64_t tape_backward_count();
void reset_tape_backward_count();

// Reverse-mode autodiff over dense tensors. Ops append one node each in
// execution order; backward() walks the list in reverse. Values are checked
// finite after every op, so NaN/Inf surfaces at the op that produced it
// rather than three layers later.
//
// The same graph code runs in float (training, runtime) and double (test
// oracles); both instantiations live in tape.cpp.
template <typename T>
class Tape {
public:
    // use_serial_kernels routes every op through the serial reference kernels
    // instead of the OpenMP ones. Results are bit-identical either way; the
    // flag exists so tests can prove that on whole graphs.
    explicit Tape(bool use_serial_kernels = false);

    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Registers an input tensor. Leaves have no backprop step; their grads
    // are where backward() deposits results.
    Var leaf(Tensor<T> value);

    const Tensor<T>& value(Var v) const;

    // Gradient of the last backward() root with respect to v.
    // ContractError if backward has not run on this tape.
    const Tensor<T>& grad(Var v) const;

    size_t size() const { return nodes_.size(); }
    bool grads_ready() const { return grads_ready_; }

    // --- ops ---------------------------------------------------------------

    // C = op(A) . op(B); the flags transpose the corresponding operand.
    Var matmul(Var a, Var b, bool trans_a = false, bool trans_b = false);

    // Row softmax. key_mask (optional) zeroes out columns: masked columns get
    // probability exactly 0 and receive no gradient. Mask length = cols.
    Var softmax_rows(Var x);
    Var softmax_rows(Var x, std::vector<uint8_t> key_mask);

    Var relu(Var x);
    Var gelu(Var x);
    Var tanh_op(Var x);

    Var add(Var a, Var b);                 // same shape
    Var add_bias_row(Var x, Var bias);     // bias is 1 x cols, broadcast over rows
    Var hadamard(Var a, Var b);            // same shape
    Var scale(Var x, T c);
    Var transpose(Var x);
    Var row_sum(Var x);                    // rows x cols -> rows x 1
    Var sum(Var x);                        // -> 1 x 1
    Var layer_norm(Var x, Var gamma, Var beta, T eps);  // gamma/beta are 1 x cols

    // value row i = table row ids[i]; grads scatter-add back into the table.
    Var embedding_rows(Var table, std::vector<int32_t> ids);

    Var select_row(Var x, size_t row);              // -> 1 x cols
    Var select_element(Var x, size_t row, size_t col);  // -> 1 x 1

    // Horizontal concatenation of matrices with equal row counts.
    Var concat_cols(const std::vector<Var>& parts);

    // Numerically stable fused losses, each producing a 1 x 1 scalar.
    Var cross_entropy_with_logits(Var logits, size_t target);  // logits 1 x n
    Var logistic_loss(Var logit, T label);                     // logit 1 x 1, label in {0,1}

    // Seeds root grad with 1 and propagates to every earlier node.
    // Root must be scalar (1 x 1). Overwrites grads from a previous run.
    void backward(Var root);

private:
    struct NodeRec {
        Tensor<T> value;
        Tensor<T> grad;
        std::function<void()> backprop;  // empty for leaves
    };

    Var push(const char* op, Tensor<T> value, std::function<void()> backprop);
    NodeRec& at(Var v);
    const NodeRec& at(Var v) const;
    Tensor<T>& grad_buf(Var v) { return at(v).grad; }

    std::deque<NodeRec> nodes_;
    bool serial_;
    bool grads_ready_ = false;
};

}  // namespace gradsam
