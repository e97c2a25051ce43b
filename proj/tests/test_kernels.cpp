#include <doctest.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "gradsam/kernels.hpp"
#include "gradsam/rng.hpp"

using namespace gradsam;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::vector<double> v(n);
    for (double& x : v) x = (rng.uniform01() * 2.0 - 1.0) * scale;
    return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("matmul matches a plain triple loop across transpose flags") {
    const size_t p = 5, q = 4, r = 3;
    for (int ta = 0; ta < 2; ++ta) {
        for (int tb = 0; tb < 2; ++tb) {
            const bool trans_a = ta != 0, trans_b = tb != 0;
            const auto a = random_vec(p * q, 100 + size_t(ta) * 2 + size_t(tb));
            const auto b = random_vec(q * r, 200 + size_t(ta) * 2 + size_t(tb));
            std::vector<double> got(p * r, -7.0);
            kernels::matmul(a.data(), b.data(), got.data(), p, q, r, trans_a, trans_b, false);

            for (size_t i = 0; i < p; ++i) {
                for (size_t j = 0; j < r; ++j) {
                    double want = 0;
                    for (size_t k = 0; k < q; ++k) {
                        const double av = trans_a ? a[k * p + i] : a[i * q + k];
                        const double bv = trans_b ? b[j * q + k] : b[k * r + j];
                        want += av * bv;
                    }
                    CHECK(got[i * r + j] == doctest::Approx(want).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("matmul accumulate flag adds instead of overwriting") {
    const size_t p = 3, q = 3, r = 3;
    const auto a = random_vec(p * q, 1);
    const auto b = random_vec(q * r, 2);
    std::vector<double> base(p * r, 0.0), acc(p * r, 1.5);
    kernels::matmul(a.data(), b.data(), base.data(), p, q, r, false, false, false);
    kernels::matmul(a.data(), b.data(), acc.data(), p, q, r, false, false, true);
    for (size_t i = 0; i < p * r; ++i) CHECK(acc[i] == doctest::Approx(1.5 + base[i]));
}

TEST_CASE("softmax rows are stochastic and masked keys get exact zeros") {
    const size_t rows = 4, cols = 6;
    const auto x = random_vec(rows * cols, 3, 4.0);
    const std::vector<uint8_t> mask = {1, 1, 1, 0, 1, 0};
    std::vector<double> y(rows * cols);
    kernels::softmax_rows(x.data(), y.data(), rows, cols, mask.data());
    for (size_t i = 0; i < rows; ++i) {
        double sum = 0;
        for (size_t j = 0; j < cols; ++j) {
            sum += y[i * cols + j];
            if (!mask[j]) CHECK(y[i * cols + j] == 0.0);
            else CHECK(y[i * cols + j] > 0.0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("softmax handles large logits without overflow") {
    const std::vector<double> x = {1000.0, 1000.0, 999.0};
    std::vector<double> y(3);
    kernels::softmax_rows(x.data(), y.data(), 1, 3, nullptr);
    CHECK(std::isfinite(y[0]));
    CHECK(y[0] == doctest::Approx(y[1]));
    CHECK(y[0] + y[1] + y[2] == doctest::Approx(1.0));
}

TEST_CASE("known softmax value: logits ln1 and ln3") {
    const std::vector<double> x = {0.0, std::log(3.0)};
    std::vector<double> y(2);
    kernels::softmax_rows(x.data(), y.data(), 1, 2, nullptr);
    CHECK(y[0] == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("layer_norm output rows have zero mean and unit variance") {
    const size_t rows = 3, cols = 8;
    const auto x = random_vec(rows * cols, 4, 3.0);
    std::vector<double> gamma(cols, 1.0), beta(cols, 0.0), y(rows * cols);
    kernels::layer_norm(x.data(), gamma.data(), beta.data(), y.data(), rows, cols, 0.0);
    for (size_t i = 0; i < rows; ++i) {
        double mean = 0, var = 0;
        for (size_t j = 0; j < cols; ++j) mean += y[i * cols + j];
        mean /= double(cols);
        for (size_t j = 0; j < cols; ++j) {
            const double d = y[i * cols + j] - mean;
            var += d * d;
        }
        var /= double(cols);
        CHECK(mean == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    }
}

TEST_CASE("gelu endpoints and symmetry") {
    const std::vector<double> x = {0.0, 10.0, -10.0, 1.0};
    std::vector<double> y(4);
    kernels::gelu(x.data(), y.data(), 4);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(y[2] == doctest::Approx(0.0).epsilon(1e-6));
    // x * Phi(x) at 1: Phi(1) = 0.8413447460685429
    CHECK(y[3] == doctest::Approx(0.8413447460685429).epsilon(1e-12));
}

TEST_CASE("gather then scatter_add accumulates duplicate rows") {
    const size_t vocab = 4, cols = 3;
    const auto table = random_vec(vocab * cols, 5);
    const std::vector<int32_t> ids = {2, 0, 2};
    std::vector<double> rows(ids.size() * cols);
    kernels::gather_rows(table.data(), ids.data(), rows.data(), ids.size(), cols);
    for (size_t i = 0; i < ids.size(); ++i)
        for (size_t j = 0; j < cols; ++j)
            CHECK(rows[i * cols + j] == table[size_t(ids[i]) * cols + j]);

    std::vector<double> grad(ids.size() * cols, 1.0), tgrad(vocab * cols, 0.0);
    kernels::scatter_add_rows(grad.data(), ids.data(), tgrad.data(), ids.size(), cols);
    for (size_t j = 0; j < cols; ++j) {
        CHECK(tgrad[0 * cols + j] == 1.0);
        CHECK(tgrad[1 * cols + j] == 0.0);
        CHECK(tgrad[2 * cols + j] == 2.0);  // id 2 appears twice
        CHECK(tgrad[3 * cols + j] == 0.0);
    }
}

TEST_CASE("serial and OpenMP kernels are bit-identical") {
    // Sizes past the parallelization grain so the OpenMP path actually forks.
    const size_t rows = 80, cols = 96;
    const auto x = random_vec(rows * cols, 6, 2.0);
    const auto x2 = random_vec(rows * cols, 7, 2.0);
    const auto gamma = random_vec(cols, 8);
    const auto beta = random_vec(cols, 9);
    std::vector<uint8_t> mask(cols, 1);
    mask[3] = mask[17] = 0;

    std::vector<double> ys(rows * cols), yp(rows * cols);

    SUBCASE("matmul") {
        std::vector<double> cs(rows * rows), cp(rows * rows);
        kernels::serial::matmul(x.data(), x2.data(), cs.data(), rows, cols, rows, false, true,
                                false);
        kernels::matmul(x.data(), x2.data(), cp.data(), rows, cols, rows, false, true, false);
        CHECK(bits_equal(cs, cp));
    }
    SUBCASE("matmul accumulate") {
        std::vector<double> cs(rows * rows, 0.25), cp(rows * rows, 0.25);
        kernels::serial::matmul(x.data(), x2.data(), cs.data(), rows, cols, rows, true, false,
                                true);
        kernels::matmul(x.data(), x2.data(), cp.data(), rows, cols, rows, true, false, true);
        CHECK(bits_equal(cs, cp));
    }
    SUBCASE("softmax_rows and backward") {
        kernels::serial::softmax_rows(x.data(), ys.data(), rows, cols, mask.data());
        kernels::softmax_rows(x.data(), yp.data(), rows, cols, mask.data());
        CHECK(bits_equal(ys, yp));
        std::vector<double> dxs(rows * cols, 0.0), dxp(rows * cols, 0.0);
        kernels::serial::softmax_rows_backward(ys.data(), x2.data(), dxs.data(), rows, cols,
                                               mask.data());
        kernels::softmax_rows_backward(yp.data(), x2.data(), dxp.data(), rows, cols,
                                       mask.data());
        CHECK(bits_equal(dxs, dxp));
    }
    SUBCASE("layer_norm and backwards") {
        kernels::serial::layer_norm(x.data(), gamma.data(), beta.data(), ys.data(), rows, cols,
                                    1e-5);
        kernels::layer_norm(x.data(), gamma.data(), beta.data(), yp.data(), rows, cols, 1e-5);
        CHECK(bits_equal(ys, yp));
        std::vector<double> dxs(rows * cols, 0.0), dxp(rows * cols, 0.0);
        kernels::serial::layer_norm_backward_dx(x.data(), gamma.data(), x2.data(), dxs.data(),
                                                rows, cols, 1e-5);
        kernels::layer_norm_backward_dx(x.data(), gamma.data(), x2.data(), dxp.data(), rows,
                                        cols, 1e-5);
        CHECK(bits_equal(dxs, dxp));
        std::vector<double> dgs(cols, 0.0), dgp(cols, 0.0), dbs(cols, 0.0), dbp(cols, 0.0);
        kernels::serial::layer_norm_backward_dgb(x.data(), x2.data(), dgs.data(), dbs.data(),
                                                 rows, cols, 1e-5);
        kernels::layer_norm_backward_dgb(x.data(), x2.data(), dgp.data(), dbp.data(), rows,
                                         cols, 1e-5);
        CHECK(bits_equal(dgs, dgp));
        CHECK(bits_equal(dbs, dbp));
    }
    SUBCASE("elementwise ops") {
        kernels::serial::gelu(x.data(), ys.data(), x.size());
        kernels::gelu(x.data(), yp.data(), x.size());
        CHECK(bits_equal(ys, yp));
        kernels::serial::relu(x.data(), ys.data(), x.size());
        kernels::relu(x.data(), yp.data(), x.size());
        CHECK(bits_equal(ys, yp));
        kernels::serial::tanh_op(x.data(), ys.data(), x.size());
        kernels::tanh_op(x.data(), yp.data(), x.size());
        CHECK(bits_equal(ys, yp));
        std::vector<double> ds(x.size(), 0.5), dp(x.size(), 0.5);
        kernels::serial::gelu_backward(x.data(), x2.data(), ds.data(), x.size());
        kernels::gelu_backward(x.data(), x2.data(), dp.data(), x.size());
        CHECK(bits_equal(ds, dp));
    }
    SUBCASE("reductions and shuffles") {
        std::vector<double> rs(rows), rp(rows);
        kernels::serial::row_sum(x.data(), rs.data(), rows, cols);
        kernels::row_sum(x.data(), rp.data(), rows, cols);
        CHECK(bits_equal(rs, rp));
        std::vector<double> cs(cols, 0.125), cp(cols, 0.125);
        kernels::serial::col_sum_acc(x.data(), cs.data(), rows, cols);
        kernels::col_sum_acc(x.data(), cp.data(), rows, cols);
        CHECK(bits_equal(cs, cp));
        kernels::serial::transpose(x.data(), ys.data(), rows, cols);
        kernels::transpose(x.data(), yp.data(), rows, cols);
        CHECK(bits_equal(ys, yp));
        std::vector<int32_t> ids(rows);
        Rng rng(10);
        for (auto& id : ids) id = int32_t(rng.index(rows));
        std::vector<double> gs(rows * cols), gp(rows * cols);
        kernels::serial::gather_rows(x.data(), ids.data(), gs.data(), rows, cols);
        kernels::gather_rows(x.data(), ids.data(), gp.data(), rows, cols);
        CHECK(bits_equal(gs, gp));
        std::vector<double> ss(rows * cols, 0.0), sp(rows * cols, 0.0);
        kernels::serial::scatter_add_rows(x2.data(), ids.data(), ss.data(), rows, cols);
        kernels::scatter_add_rows(x2.data(), ids.data(), sp.data(), rows, cols);
        CHECK(bits_equal(ss, sp));
    }
}
