#include "gradsam/tape.hpp"

#include <atomic>
#include <cmath>
#include <utility>

#include "gradsam/errors.hpp"
#include "gradsam/kernels.hpp"

namespace gradsam {

namespace {

std::atomic<uint64_t> g_backward_count{0};

template <typename T>
T stable_sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    T e = std::exp(x);
    return e / (T(1) + e);
}

}  // namespace

uint64_t tape_backward_count() { return g_backward_count.load(); }
void reset_tape_backward_count() { g_backward_count.store(0); }

// Routes a kernel call to the serial reference or the OpenMP version based on
// a local `s` flag. Both produce bit-identical results; see kernels.hpp.
#define KCALL(fn, ...)                           \
    do {                                         \
        if (s)                                   \
            kernels::serial::fn(__VA_ARGS__);    \
        else                                     \
            kernels::fn(__VA_ARGS__);            \
    } while (0)

template <typename T>
Tape<T>::Tape(bool use_serial_kernels) : serial_(use_serial_kernels) {}

template <typename T>
typename Tape<T>::NodeRec& Tape<T>::at(Var v) {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
        throw ContractError("tape: invalid Var handle");
    return nodes_[static_cast<size_t>(v.id)];
}

template <typename T>
const typename Tape<T>::NodeRec& Tape<T>::at(Var v) const {
    if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
        throw ContractError("tape: invalid Var handle");
    return nodes_[static_cast<size_t>(v.id)];
}

template <typename T>
Var Tape<T>::push(const char* op, Tensor<T> value, std::function<void()> backprop) {
    if (!value.all_finite())
        throw NumericError(std::string("tape: non-finite value out of op '") + op + "'");
    NodeRec rec;
    rec.value = std::move(value);
    rec.backprop = std::move(backprop);
    nodes_.push_back(std::move(rec));
    return Var{static_cast<int32_t>(nodes_.size() - 1)};
}

template <typename T>
Var Tape<T>::leaf(Tensor<T> value) {
    return push("leaf", std::move(value), {});
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
    return at(v).value;
}

template <typename T>
const Tensor<T>& Tape<T>::grad(Var v) const {
    if (!grads_ready_)
        throw ContractError("tape: grad() before backward()");
    return at(v).grad;
}

template <typename T>
Var Tape<T>::matmul(Var a, Var b, bool trans_a, bool trans_b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.is_matrix() || !bv.is_matrix())
        throw DimensionError("matmul: operands must be matrices, got " + av.shape_str() +
                             " and " + bv.shape_str());
    const size_t p = trans_a ? av.cols() : av.rows();
    const size_t qa = trans_a ? av.rows() : av.cols();
    const size_t qb = trans_b ? bv.cols() : bv.rows();
    const size_t r = trans_b ? bv.rows() : bv.cols();
    if (qa != qb)
        throw DimensionError("matmul: inner dims mismatch, " + av.shape_str() +
                             (trans_a ? "^T" : "") + " . " + bv.shape_str() +
                             (trans_b ? "^T" : ""));
    const size_t q = qa;
    const bool s = serial_;
    Tensor<T> out({p, r});
    KCALL(matmul, av.data(), bv.data(), out.data(), p, q, r, trans_a, trans_b, false);

    Var c = push("matmul", std::move(out), {});
    at(c).backprop = [this, a, b, c, trans_a, trans_b, p, q, r, s]() {
        const T* dc = at(c).grad.data();
        const T* ap = at(a).value.data();
        const T* bp = at(b).value.data();
        T* da = at(a).grad.data();
        T* db = at(b).grad.data();
        if (!trans_a)
            KCALL(matmul, dc, bp, da, p, r, q, false, !trans_b, true);
        else
            KCALL(matmul, bp, dc, da, q, r, p, trans_b, true, true);
        if (!trans_b)
            KCALL(matmul, ap, dc, db, q, p, r, !trans_a, false, true);
        else
            KCALL(matmul, dc, ap, db, r, p, q, true, trans_a, true);
    };
    return c;
}

template <typename T>
Var Tape<T>::softmax_rows(Var x) {
    return softmax_rows(x, {});
}

template <typename T>
Var Tape<T>::softmax_rows(Var x, std::vector<uint8_t> key_mask) {
    const Tensor<T>& xv = value(x);
    if (!xv.is_matrix())
        throw DimensionError("softmax_rows: input must be a matrix, got " + xv.shape_str());
    if (!key_mask.empty()) {
        if (key_mask.size() != xv.cols())
            throw DimensionError("softmax_rows: key_mask length " +
                                 std::to_string(key_mask.size()) + " != cols " +
                                 std::to_string(xv.cols()));
        bool any = false;
        for (uint8_t m : key_mask) any = any || (m != 0);
        if (!any) throw ContractError("softmax_rows: key_mask disables every column");
    }
    const bool s = serial_;
    const size_t rows = xv.rows(), cols = xv.cols();
    Tensor<T> out(xv.shape());
    KCALL(softmax_rows, xv.data(), out.data(), rows, cols,
          key_mask.empty() ? nullptr : key_mask.data());

    Var y = push("softmax_rows", std::move(out), {});
    at(y).backprop = [this, x, y, rows, cols, s, mask = std::move(key_mask)]() {
        KCALL(softmax_rows_backward, at(y).value.data(), at(y).grad.data(), at(x).grad.data(),
              rows, cols, mask.empty() ? nullptr : mask.data());
    };
    return y;
}

template <typename T>
Var Tape<T>::relu(Var x) {
    const Tensor<T>& xv = value(x);
    const bool s = serial_;
    Tensor<T> out(xv.shape());
    KCALL(relu, xv.data(), out.data(), xv.numel());
    Var y = push("relu", std::move(out), {});
    at(y).backprop = [this, x, y, s]() {
        KCALL(relu_backward, at(x).value.data(), at(y).grad.data(), at(x).grad.data(),
              at(x).value.numel());
    };
    return y;
}

template <typename T>
Var Tape<T>::gelu(Var x) {
    const Tensor<T>& xv = value(x);
    const bool s = serial_;
    Tensor<T> out(xv.shape());
    KCALL(gelu, xv.data(), out.data(), xv.numel());
    Var y = push("gelu", std::move(out), {});
    at(y).backprop = [this, x, y, s]() {
        KCALL(gelu_backward, at(x).value.data(), at(y).grad.data(), at(x).grad.data(),
              at(x).value.numel());
    };
    return y;
}

template <typename T>
Var Tape<T>::tanh_op(Var x) {
    const Tensor<T>& xv = value(x);
    const bool s = serial_;
    Tensor<T> out(xv.shape());
    KCALL(tanh_op, xv.data(), out.data(), xv.numel());
    Var y = push("tanh", std::move(out), {});
    at(y).backprop = [this, x, y, s]() {
        KCALL(tanh_backward, at(y).value.data(), at(y).grad.data(), at(x).grad.data(),
              at(y).value.numel());
    };
    return y;
}

template <typename T>
Var Tape<T>::add(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv))
        throw DimensionError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    const bool s = serial_;
    Tensor<T> out(av.shape());
    KCALL(add, av.data(), bv.data(), out.data(), av.numel());
    Var c = push("add", std::move(out), {});
    at(c).backprop = [this, a, b, c, s]() {
        const size_t n = at(c).grad.numel();
        KCALL(axpy, T(1), at(c).grad.data(), at(a).grad.data(), n);
        KCALL(axpy, T(1), at(c).grad.data(), at(b).grad.data(), n);
    };
    return c;
}

template <typename T>
Var Tape<T>::add_bias_row(Var x, Var bias) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& bv = value(bias);
    if (!xv.is_matrix() || !bv.is_matrix() || bv.rows() != 1 || bv.cols() != xv.cols())
        throw DimensionError("add_bias_row: need x rows x cols and bias 1 x cols, got " +
                             xv.shape_str() + " and " + bv.shape_str());
    const bool s = serial_;
    const size_t rows = xv.rows(), cols = xv.cols();
    Tensor<T> out(xv.shape());
    KCALL(add_bias_row, xv.data(), bv.data(), out.data(), rows, cols);
    Var y = push("add_bias_row", std::move(out), {});
    at(y).backprop = [this, x, bias, y, rows, cols, s]() {
        KCALL(axpy, T(1), at(y).grad.data(), at(x).grad.data(), rows * cols);
        KCALL(col_sum_acc, at(y).grad.data(), at(bias).grad.data(), rows, cols);
    };
    return y;
}

template <typename T>
Var Tape<T>::hadamard(Var a, Var b) {
    const Tensor<T>& av = value(a);
    const Tensor<T>& bv = value(b);
    if (!av.same_shape(bv))
        throw DimensionError("hadamard: shape mismatch " + av.shape_str() + " vs " +
                             bv.shape_str());
    const bool s = serial_;
    Tensor<T> out(av.shape());
    KCALL(hadamard, av.data(), bv.data(), out.data(), av.numel());
    Var c = push("hadamard", std::move(out), {});
    at(c).backprop = [this, a, b, c, s]() {
        const size_t n = at(c).grad.numel();
        KCALL(hadamard_acc, at(c).grad.data(), at(b).value.data(), at(a).grad.data(), n);
        KCALL(hadamard_acc, at(c).grad.data(), at(a).value.data(), at(b).grad.data(), n);
    };
    return c;
}

template <typename T>
Var Tape<T>::scale(Var x, T c) {
    const Tensor<T>& xv = value(x);
    const bool s = serial_;
    Tensor<T> out(xv.shape());
    KCALL(scale, xv.data(), c, out.data(), xv.numel());
    Var y = push("scale", std::move(out), {});
    at(y).backprop = [this, x, y, c, s]() {
        KCALL(axpy, c, at(y).grad.data(), at(x).grad.data(), at(y).grad.numel());
    };
    return y;
}

template <typename T>
Var Tape<T>::transpose(Var x) {
    const Tensor<T>& xv = value(x);
    if (!xv.is_matrix())
        throw DimensionError("transpose: input must be a matrix, got " + xv.shape_str());
    const bool s = serial_;
    const size_t rows = xv.rows(), cols = xv.cols();
    Tensor<T> out({cols, rows});
    KCALL(transpose, xv.data(), out.data(), rows, cols);
    Var y = push("transpose", std::move(out), {});
    at(y).backprop = [this, x, y, rows, cols, s]() {
        Tensor<T> tmp({rows, cols});
        KCALL(transpose, at(y).grad.data(), tmp.data(), cols, rows);
        KCALL(axpy, T(1), tmp.data(), at(x).grad.data(), rows * cols);
    };
    return y;
}

template <typename T>
Var Tape<T>::row_sum(Var x) {
    const Tensor<T>& xv = value(x);
    if (!xv.is_matrix())
        throw DimensionError("row_sum: input must be a matrix, got " + xv.shape_str());
    const bool s = serial_;
    const size_t rows = xv.rows(), cols = xv.cols();
    Tensor<T> out({rows, 1});
    KCALL(row_sum, xv.data(), out.data(), rows, cols);
    Var y = push("row_sum", std::move(out), {});
    at(y).backprop = [this, x, y, rows, cols]() {
        const T* dy = at(y).grad.data();
        T* dx = at(x).grad.data();
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < cols; ++j) dx[i * cols + j] += dy[i];
    };
    return y;
}

template <typename T>
Var Tape<T>::sum(Var x) {
    const Tensor<T>& xv = value(x);
    T acc = T(0);
    for (size_t i = 0; i < xv.numel(); ++i) acc += xv.data()[i];
    Var y = push("sum", Tensor<T>::scalar(acc), {});
    at(y).backprop = [this, x, y]() {
        const T g = at(y).grad(0);
        T* dx = at(x).grad.data();
        for (size_t i = 0; i < at(x).grad.numel(); ++i) dx[i] += g;
    };
    return y;
}

template <typename T>
Var Tape<T>::layer_norm(Var x, Var gamma, Var beta, T eps) {
    const Tensor<T>& xv = value(x);
    const Tensor<T>& gv = value(gamma);
    const Tensor<T>& bv = value(beta);
    if (!xv.is_matrix())
        throw DimensionError("layer_norm: input must be a matrix, got " + xv.shape_str());
    const size_t rows = xv.rows(), cols = xv.cols();
    if (gv.numel() != cols || bv.numel() != cols)
        throw DimensionError("layer_norm: gamma/beta must have " + std::to_string(cols) +
                             " entries, got " + gv.shape_str() + " and " + bv.shape_str());
    const bool s = serial_;
    Tensor<T> out(xv.shape());
    KCALL(layer_norm, xv.data(), gv.data(), bv.data(), out.data(), rows, cols, eps);
    Var y = push("layer_norm", std::move(out), {});
    at(y).backprop = [this, x, gamma, beta, y, rows, cols, eps, s]() {
        const T* xp = at(x).value.data();
        const T* dy = at(y).grad.data();
        KCALL(layer_norm_backward_dx, xp, at(gamma).value.data(), dy, at(x).grad.data(), rows,
              cols, eps);
        KCALL(layer_norm_backward_dgb, xp, dy, at(gamma).grad.data(), at(beta).grad.data(),
              rows, cols, eps);
    };
    return y;
}

template <typename T>
Var Tape<T>::embedding_rows(Var table, std::vector<int32_t> ids) {
    const Tensor<T>& tv = value(table);
    if (!tv.is_matrix())
        throw DimensionError("embedding_rows: table must be a matrix, got " + tv.shape_str());
    if (ids.empty()) throw DimensionError("embedding_rows: empty id list");
    for (int32_t id : ids)
        if (id < 0 || static_cast<size_t>(id) >= tv.rows())
            throw DimensionError("embedding_rows: id " + std::to_string(id) +
                                 " outside table with " + std::to_string(tv.rows()) + " rows");
    const bool s = serial_;
    const size_t n = ids.size(), cols = tv.cols();
    Tensor<T> out({n, cols});
    KCALL(gather_rows, tv.data(), ids.data(), out.data(), n, cols);
    Var y = push("embedding_rows", std::move(out), {});
    at(y).backprop = [this, table, y, n, cols, s, ids = std::move(ids)]() {
        KCALL(scatter_add_rows, at(y).grad.data(), ids.data(), at(table).grad.data(), n, cols);
    };
    return y;
}

template <typename T>
Var Tape<T>::select_row(Var x, size_t row) {
    const Tensor<T>& xv = value(x);
    if (!xv.is_matrix() || row >= xv.rows())
        throw DimensionError("select_row: row " + std::to_string(row) + " of " +
                             xv.shape_str());
    const size_t cols = xv.cols();
    Tensor<T> out({1, cols});
    for (size_t j = 0; j < cols; ++j) out(0, j) = xv(row, j);
    Var y = push("select_row", std::move(out), {});
    at(y).backprop = [this, x, y, row, cols]() {
        const T* dy = at(y).grad.data();
        T* dx = at(x).grad.data();
        for (size_t j = 0; j < cols; ++j) dx[row * cols + j] += dy[j];
    };
    return y;
}

template <typename T>
Var Tape<T>::select_element(Var x, size_t row, size_t col) {
    const Tensor<T>& xv = value(x);
    if (!xv.is_matrix() || row >= xv.rows() || col >= xv.cols())
        throw DimensionError("select_element: (" + std::to_string(row) + ", " +
                             std::to_string(col) + ") of " + xv.shape_str());
    Var y = push("select_element", Tensor<T>::scalar(xv(row, col)), {});
    at(y).backprop = [this, x, y, row, col]() {
        at(x).grad(row, col) += at(y).grad(0);
    };
    return y;
}

template <typename T>
Var Tape<T>::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no parts");
    const size_t rows = value(parts[0]).rows();
    size_t total = 0;
    for (Var p : parts) {
        const Tensor<T>& pv = value(p);
        if (!pv.is_matrix() || pv.rows() != rows)
            throw DimensionError("concat_cols: part " + pv.shape_str() + " does not have " +
                                 std::to_string(rows) + " rows");
        total += pv.cols();
    }
    Tensor<T> out({rows, total});
    size_t off = 0;
    for (Var p : parts) {
        const Tensor<T>& pv = value(p);
        for (size_t i = 0; i < rows; ++i)
            for (size_t j = 0; j < pv.cols(); ++j) out(i, off + j) = pv(i, j);
        off += pv.cols();
    }
    Var y = push("concat_cols", std::move(out), {});
    at(y).backprop = [this, y, rows, total, parts]() {
        const T* dy = at(y).grad.data();
        size_t off = 0;
        for (Var p : parts) {
            const size_t pc = at(p).grad.cols();
            T* dp = at(p).grad.data();
            for (size_t i = 0; i < rows; ++i)
                for (size_t j = 0; j < pc; ++j) dp[i * pc + j] += dy[i * total + off + j];
            off += pc;
        }
    };
    return y;
}

template <typename T>
Var Tape<T>::cross_entropy_with_logits(Var logits, size_t target) {
    const Tensor<T>& zv = value(logits);
    if (!zv.is_matrix() || zv.rows() != 1)
        throw DimensionError("cross_entropy_with_logits: logits must be 1 x n, got " +
                             zv.shape_str());
    const size_t n = zv.cols();
    if (target >= n)
        throw DimensionError("cross_entropy_with_logits: target " + std::to_string(target) +
                             " out of range for " + std::to_string(n) + " classes");
    T mx = zv(0, 0);
    for (size_t j = 1; j < n; ++j) mx = std::max(mx, zv(0, j));
    T denom = T(0);
    std::vector<T> probs(n);
    for (size_t j = 0; j < n; ++j) {
        probs[j] = std::exp(zv(0, j) - mx);
        denom += probs[j];
    }
    for (size_t j = 0; j < n; ++j) probs[j] /= denom;
    const T loss = (mx + std::log(denom)) - zv(0, target);
    Var y = push("cross_entropy_with_logits", Tensor<T>::scalar(loss), {});
    at(y).backprop = [this, logits, y, target, probs = std::move(probs)]() {
        const T g = at(y).grad(0);
        T* dz = at(logits).grad.data();
        for (size_t j = 0; j < probs.size(); ++j)
            dz[j] += g * (probs[j] - (j == target ? T(1) : T(0)));
    };
    return y;
}

template <typename T>
Var Tape<T>::logistic_loss(Var logit, T label) {
    const Tensor<T>& zv = value(logit);
    if (zv.numel() != 1)
        throw DimensionError("logistic_loss: logit must be scalar, got " + zv.shape_str());
    if (label != T(0) && label != T(1))
        throw ContractError("logistic_loss: label must be 0 or 1");
    const T z = zv(0);
    // max(z, 0) - z*y + log(1 + exp(-|z|)), stable for large |z|.
    const T loss = std::max(z, T(0)) - z * label + std::log1p(std::exp(-std::abs(z)));
    Var y = push("logistic_loss", Tensor<T>::scalar(loss), {});
    at(y).backprop = [this, logit, y, z, label]() {
        at(logit).grad(0) += at(y).grad(0) * (stable_sigmoid(z) - label);
    };
    return y;
}

template <typename T>
void Tape<T>::backward(Var root) {
    const Tensor<T>& rv = value(root);
    if (rv.numel() != 1)
        throw ContractError("tape: backward root must be scalar, got " + rv.shape_str());
    for (NodeRec& n : nodes_) {
        n.grad = Tensor<T>(n.value.shape());  // zeros
    }
    at(root).grad(0) = T(1);
    for (int32_t id = root.id; id >= 0; --id) {
        NodeRec& n = nodes_[static_cast<size_t>(id)];
        if (n.backprop) n.backprop();
    }
    grads_ready_ = true;
    g_backward_count.fetch_add(1);
}

#undef KCALL

// Explicit instantiations for the two supported precisions.
template class Tape<float>;
template class Tape<double>;

}  // namespace gradsam
