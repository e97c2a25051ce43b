#pragma once

#include <unistd.h>

#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include "gradsam/model.hpp"
#include "gradsam/rng.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam::testing {

// Fresh directory under the system temp root, unique per call.
inline std::filesystem::path tmp_dir(const std::string& tag) {
    static std::atomic<uint64_t> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("gradsam_" + tag + "_" + std::to_string(::getpid()) + "_" +
                      std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(dir);
    return dir;
}

inline Vocab make_vocab(const std::vector<std::string>& words) {
    std::vector<std::string> lines = {Vocab::kPadToken, Vocab::kUnkToken, Vocab::kClsToken,
                                      Vocab::kSepToken, Vocab::kMaskToken};
    lines.insert(lines.end(), words.begin(), words.end());
    return Vocab::from_lines(lines);
}

inline ModelConfig micro_config(size_t L, size_t M, size_t d, size_t N, size_t n,
                                size_t vocab_size) {
    ModelConfig cfg;
    cfg.L = L;
    cfg.M = M;
    cfg.d = d;
    cfg.d_a = d / M;
    cfg.N = N;
    cfg.n = n;
    cfg.vocab_size = vocab_size;
    return cfg;
}

template <typename T>
Tensor<T> random_tensor(size_t rows, size_t cols, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor<T> t({rows, cols});
    for (size_t i = 0; i < t.numel(); ++i)
        t(i) = static_cast<T>((rng.uniform01() * 2.0 - 1.0) * scale);
    return t;
}

}  // namespace gradsam::testing
