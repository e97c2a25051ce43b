// Times the OpenMP kernels against the serial reference and checks that both
// produce bit-identical results on the same inputs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "gradsam/kernels.hpp"
#include "gradsam/rng.hpp"

using gradsam::Rng;

namespace {

using Clock = std::chrono::steady_clock;

std::vector<float> random_vec(size_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(n);
    for (float& x : v) x = static_cast<float>(rng.uniform01() * 2.0 - 1.0);
    return v;
}

template <typename Fn>
double time_ms(size_t reps, Fn&& fn) {
    const auto t0 = Clock::now();
    for (size_t r = 0; r < reps; ++r) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() /
           static_cast<double>(reps);
}

bool bits_equal(const std::vector<float>& a, const std::vector<float>& b) {
    return a.size() == b.size() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

void row(const char* name, double serial_ms, double omp_ms, bool identical) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   %s\n", name, serial_ms, omp_ms,
                serial_ms / omp_ms, identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i)
        if (std::string(argv[i]) == "--quick") quick = true;

    const size_t dim = quick ? 64 : 256;
    const size_t reps = quick ? 3 : 10;
    std::printf("square size %zu, %zu reps per row\n", dim, reps);
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    const std::vector<float> a = random_vec(dim * dim, 11);
    const std::vector<float> b = random_vec(dim * dim, 13);
    std::vector<float> out_s(dim * dim), out_p(dim * dim);

    {
        const double ts = time_ms(reps, [&] {
            gradsam::kernels::serial::matmul(a.data(), b.data(), out_s.data(), dim, dim, dim,
                                             false, false, false);
        });
        const double tp = time_ms(reps, [&] {
            gradsam::kernels::matmul(a.data(), b.data(), out_p.data(), dim, dim, dim, false,
                                     false, false);
        });
        row("matmul", ts, tp, bits_equal(out_s, out_p));
    }
    {
        const double ts = time_ms(reps, [&] {
            gradsam::kernels::serial::softmax_rows(a.data(), out_s.data(), dim, dim, nullptr);
        });
        const double tp = time_ms(reps, [&] {
            gradsam::kernels::softmax_rows(a.data(), out_p.data(), dim, dim, nullptr);
        });
        row("softmax_rows", ts, tp, bits_equal(out_s, out_p));
    }
    {
        const std::vector<float> gamma = random_vec(dim, 17);
        const std::vector<float> beta = random_vec(dim, 19);
        const double ts = time_ms(reps, [&] {
            gradsam::kernels::serial::layer_norm(a.data(), gamma.data(), beta.data(),
                                                 out_s.data(), dim, dim, 1e-5f);
        });
        const double tp = time_ms(reps, [&] {
            gradsam::kernels::layer_norm(a.data(), gamma.data(), beta.data(), out_p.data(),
                                         dim, dim, 1e-5f);
        });
        row("layer_norm", ts, tp, bits_equal(out_s, out_p));
    }
    {
        const double ts = time_ms(reps, [&] {
            gradsam::kernels::serial::gelu(a.data(), out_s.data(), a.size());
        });
        const double tp =
            time_ms(reps, [&] { gradsam::kernels::gelu(a.data(), out_p.data(), a.size()); });
        row("gelu", ts, tp, bits_equal(out_s, out_p));
    }
    return 0;
}
