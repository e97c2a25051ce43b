#include <doctest.h>

#include <cmath>
#include <limits>

#include "gradsam/attribution.hpp"
#include "gradsam/errors.hpp"
#include "gradsam/model.hpp"
#include "gradsam/tape.hpp"
#include "gradsam/tokenizer.hpp"
#include "support/test_util.hpp"

using namespace gradsam;
using gradsam::testing::make_vocab;
using gradsam::testing::micro_config;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// A bare sequence whose every position is content; lets tests pin exact
// importance numbers without [CLS]/[SEP] in the way.
TokenSequence bare_seq(size_t n) {
    TokenSequence seq;
    for (size_t i = 0; i < n; ++i) {
        seq.ids.push_back(int32_t(5 + i));
        seq.attention_mask.push_back(1);
        seq.pieces.push_back("t" + std::to_string(i));
        seq.spans.emplace_back(0, 0);
    }
    return seq;
}

struct Fixture {
    Vocab vocab = make_vocab({"bird", "blue", "fish", "green", "red"});
    ModelConfig cfg = micro_config(2, 2, 8, 8, 2, 10);
    EncoderWeights<double> w;
    TokenSequence seq;

    Fixture() {
        cfg.vocab_size = vocab.size();
        cfg.max_positions = 16;
        w = EncoderWeights<double>::init(cfg, 21);
        seq = encode(vocab, "red fish blue green red", 8);
    }

    ForwardTrace<double> traced_backward() const {
        ForwardTrace<double> trace = forward(seq, w, cfg);
        trace.tape->backward(target_score(trace, TaskKind::Multiclass, size_t{0}));
        return trace;
    }
};

}  // namespace

TEST_CASE("hand example: the four H constructions on a 2x2 map") {
    const Tensor<double> A = Tensor<double>::matrix(2, 2, {0.6, 0.4, 0.5, 0.5});
    const Tensor<double> G = Tensor<double>::matrix(2, 2, {1.0, -2.0, 0.5, 1.0});
    const TokenSequence seq = bare_seq(2);

    SamMaps<double> maps;
    maps.A = {{A}};
    maps.G = {{G}};

    SUBCASE("grad-sam: attention times rectified gradient") {
        maps.method = MethodKind::GradSam;
        maps.H = {{Tensor<double>::matrix(2, 2, {0.6, 0.0, 0.25, 0.5})}};
        const AttributionResult res = token_importance(maps, seq);
        CHECK(res.r[0] == doctest::Approx(0.3).epsilon(1e-15));
        CHECK(res.r[1] == doctest::Approx(0.375).epsilon(1e-15));
        CHECK(res.ranking == std::vector<size_t>{1, 0});
    }
    SUBCASE("att-x-att-grad keeps the negative part") {
        maps.method = MethodKind::AttTimesAttGrad;
        maps.H = {{Tensor<double>::matrix(2, 2, {0.6, -0.8, 0.25, 0.5})}};
        const AttributionResult res = token_importance(maps, seq);
        CHECK(res.r[0] == doctest::Approx(-0.1).epsilon(1e-15));
        CHECK(res.r[1] == doctest::Approx(0.375).epsilon(1e-15));
    }
    SUBCASE("column aggregation sums the transposed map") {
        maps.method = MethodKind::GradSam;
        maps.H = {{Tensor<double>::matrix(2, 2, {0.6, 0.0, 0.25, 0.5})}};
        const AttributionResult res = token_importance(maps, seq, Aggregation::Col);
        CHECK(res.r[0] == doctest::Approx((0.6 + 0.25) / 2).epsilon(1e-15));
        CHECK(res.r[1] == doctest::Approx(0.25).epsilon(1e-15));
    }
}

TEST_CASE("suppression: a large negative gradient sinks att-grad but not the rectified methods") {
    // Uniform attention; token 1 has one strong positive and two strong
    // negative gradient entries, token 2 only mild positives.
    const Tensor<double> A = Tensor<double>::full({4, 4}, 0.25);
    const Tensor<double> G = Tensor<double>::matrix(
        4, 4, {0, 0, 0, 0, 0, 5, -10, -10, 0, 0.1, 0.1, 0, 0, 0, 0, 0});
    const TokenSequence seq = bare_seq(4);

    auto rank_with = [&](MethodKind method, const Tensor<double>& H) {
        SamMaps<double> maps;
        maps.method = method;
        maps.A = {{A}};
        maps.G = {{G}};
        maps.H = {{H}};
        return token_importance(maps, seq).ranking;
    };

    // att-grad: H = G. Token 1 nets 5 - 20 < 0, so the mild token 2 wins.
    Tensor<double> Hg = G;
    CHECK(rank_with(MethodKind::AttGrad, Hg)[0] == 2);

    // att-grad-r and grad-sam rectify, so token 1's +5 dominates.
    Tensor<double> Hr = G;
    for (size_t i = 0; i < Hr.numel(); ++i) Hr(i) = std::max(Hr(i), 0.0);
    CHECK(rank_with(MethodKind::AttGradR, Hr)[0] == 1);
    Tensor<double> Hs = Hr;
    for (size_t i = 0; i < Hs.numel(); ++i) Hs(i) *= 0.25;
    CHECK(rank_with(MethodKind::GradSam, Hs)[0] == 1);
}

TEST_CASE("compute_maps matches a triple-loop recomputation from A and G") {
    Fixture f;
    const ForwardTrace<double> trace = f.traced_backward();
    const size_t L = f.cfg.L, M = f.cfg.M, N = f.cfg.N;

    for (MethodKind method : {MethodKind::Att, MethodKind::AttGrad, MethodKind::AttGradR,
                              MethodKind::AttTimesAttGrad, MethodKind::GradSam}) {
        const SamMaps<double> maps = compute_maps(trace, method);
        REQUIRE(maps.A.size() == L);
        for (size_t l = 0; l < L; ++l) {
            for (size_t m = 0; m < M; ++m) {
                const Tensor<double>& A = trace.attention[l][m];
                const Tensor<double>& G = trace.tape->grad(trace.attn_vars[l][m]);
                for (size_t i = 0; i < N; ++i) {
                    for (size_t j = 0; j < N; ++j) {
                        double want = 0;
                        switch (method) {
                            case MethodKind::Att: want = A(i, j); break;
                            case MethodKind::AttGrad: want = G(i, j); break;
                            case MethodKind::AttGradR: want = std::max(G(i, j), 0.0); break;
                            case MethodKind::AttTimesAttGrad: want = A(i, j) * G(i, j); break;
                            default: want = A(i, j) * std::max(G(i, j), 0.0);
                        }
                        CHECK(maps.H[l][m](i, j) == want);
                    }
                }
            }
        }
    }
}

TEST_CASE("token_importance equals an independent full triple loop") {
    Fixture f;
    for (uint64_t seed = 40; seed < 50; ++seed) {
        f.w = EncoderWeights<double>::init(f.cfg, seed);
        const ForwardTrace<double> trace = f.traced_backward();
        const SamMaps<double> maps = compute_maps(trace, MethodKind::GradSam);
        const AttributionResult res = token_importance(maps, f.seq);

        const size_t L = f.cfg.L, M = f.cfg.M, N = f.cfg.N;
        for (size_t i = 0; i < N; ++i) {
            double want = 0;
            for (size_t l = 0; l < L; ++l)
                for (size_t m = 0; m < M; ++m)
                    for (size_t j = 0; j < N; ++j) {
                        const double a = trace.attention[l][m](i, j);
                        const double g = trace.tape->grad(trace.attn_vars[l][m])(i, j);
                        want += a * std::max(g, 0.0);
                    }
            want /= double(L * M * N);
            if (std::isinf(res.r[i])) continue;
            CHECK(res.r[i] == doctest::Approx(want).epsilon(1e-12));
        }
    }
}

TEST_CASE("specials get minus infinity and never enter the ranking") {
    Fixture f;
    const ForwardTrace<double> trace = f.traced_backward();
    for (MethodKind method : all_methods()) {
        const AttributionResult res =
            attribution_from_trace(trace, f.seq, method, size_t{0});
        const auto content = f.seq.content_positions();
        for (size_t i = 0; i < res.r.size(); ++i) {
            const bool is_content =
                std::find(content.begin(), content.end(), i) != content.end();
            if (is_content) CHECK(std::isfinite(res.r[i]));
            else CHECK(res.r[i] == kNegInf);
        }
        CHECK(res.ranking.size() == content.size());
        for (size_t pos : res.ranking)
            CHECK(std::find(content.begin(), content.end(), pos) != content.end());
    }
}

TEST_CASE("grad-sam importances are nonnegative; trimming zeroes exactly the G<=0 cells") {
    Fixture f;
    const ForwardTrace<double> trace = f.traced_backward();
    const SamMaps<double> maps = compute_maps(trace, MethodKind::GradSam);
    const AttributionResult res = token_importance(maps, f.seq);
    for (size_t pos : f.seq.content_positions()) CHECK(res.r[pos] >= 0.0);

    for (size_t l = 0; l < f.cfg.L; ++l)
        for (size_t m = 0; m < f.cfg.M; ++m) {
            const Tensor<double>& G = trace.tape->grad(trace.attn_vars[l][m]);
            const Tensor<double>& A = trace.attention[l][m];
            const Tensor<double>& H = maps.H[l][m];
            for (size_t i = 0; i < G.numel(); ++i) {
                if (G(i) <= 0.0) CHECK(H(i) == 0.0);
                else CHECK(H(i) == A(i) * G(i));
            }
        }
}

TEST_CASE("rankings are invariant to positive scaling of the scores") {
    Fixture f;
    const ForwardTrace<double> trace = f.traced_backward();
    const AttributionResult res =
        attribution_from_trace(trace, f.seq, MethodKind::GradSam, size_t{0});
    std::vector<double> scaled = res.r;
    for (double& v : scaled)
        if (std::isfinite(v)) v *= 37.5;
    CHECK(rank_descending(scaled) == res.ranking);
}

TEST_CASE("all-equal scores rank by position") {
    std::vector<double> r = {0.5, 0.5, 0.5, kNegInf};
    CHECK(rank_descending(r) == std::vector<size_t>{0, 1, 2});
    std::vector<double> zeros = {0.0, 0.0};
    CHECK(rank_descending(zeros) == std::vector<size_t>{0, 1});
}

TEST_CASE("pad extension preserves rankings for the pad-immune methods") {
    Fixture f;
    ModelConfig wide = f.cfg;
    wide.N = 12;
    const TokenSequence longer = encode(f.vocab, "red fish blue green red", 12);

    for (MethodKind method : {MethodKind::GradSam, MethodKind::Att, MethodKind::ClsAtt,
                              MethodKind::Gradient}) {
        const AttributionResult a = explain_sequence(f.seq, f.w, f.cfg, method, size_t{0});
        const AttributionResult b = explain_sequence(longer, f.w, wide, method, size_t{0});
        CHECK(a.ranking == b.ranking);
    }
}

TEST_CASE("attention-only methods run no backward pass") {
    Fixture f;
    reset_tape_backward_count();
    (void)explain_sequence(f.seq, f.w, f.cfg, MethodKind::Att, size_t{0});
    (void)explain_sequence(f.seq, f.w, f.cfg, MethodKind::ClsAtt, size_t{0});
    CHECK(tape_backward_count() == 0);
    (void)explain_sequence(f.seq, f.w, f.cfg, MethodKind::GradSam, size_t{0});
    CHECK(tape_backward_count() == 1);
}

TEST_CASE("cls attention importance is the head-mean of the final layer's CLS row") {
    Fixture f;
    const ForwardTrace<double> trace = forward(f.seq, f.w, f.cfg);
    const AttributionResult res = cls_attention_importance(trace, f.seq);
    for (size_t pos : f.seq.content_positions()) {
        double want = 0;
        for (size_t m = 0; m < f.cfg.M; ++m) want += trace.attention.back()[m](0, pos);
        want /= double(f.cfg.M);
        CHECK(res.r[pos] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("input gradient importance: norm and dot variants") {
    Fixture f;
    const ForwardTrace<double> trace = f.traced_backward();
    const Tensor<double>& g = trace.tape->grad(trace.x0_var);
    const Tensor<double>& x0 = trace.tape->value(trace.x0_var);

    const AttributionResult nrm = input_gradient_importance(trace, f.seq);
    const AttributionResult dot =
        input_gradient_importance(trace, f.seq, GradientVariant::Dot);
    for (size_t pos : f.seq.content_positions()) {
        double norm2 = 0, dotv = 0;
        for (size_t j = 0; j < f.cfg.d; ++j) {
            norm2 += g(pos, j) * g(pos, j);
            dotv += g(pos, j) * x0(pos, j);
        }
        CHECK(nrm.r[pos] == doctest::Approx(std::sqrt(norm2)).epsilon(1e-12));
        CHECK(dot.r[pos] == doctest::Approx(dotv).epsilon(1e-12));
    }
}

TEST_CASE("gradient methods demand a finished backward pass") {
    Fixture f;
    const ForwardTrace<double> trace = forward(f.seq, f.w, f.cfg);
    CHECK_THROWS_AS((void)compute_maps(trace, MethodKind::GradSam), ContractError);
    CHECK_THROWS_AS((void)input_gradient_importance(trace, f.seq), ContractError);
    // Att needs no gradients even on a fresh trace.
    CHECK_NOTHROW((void)compute_maps(trace, MethodKind::Att));
}

TEST_CASE("method names parse and round-trip") {
    for (MethodKind m : all_methods()) {
        const auto parsed = parse_method(method_name(m));
        REQUIRE(parsed.has_value());
        CHECK(*parsed == m);
    }
    CHECK(!parse_method("made-up").has_value());
    CHECK(method_needs_gradients(MethodKind::GradSam));
    CHECK(method_needs_gradients(MethodKind::Gradient));
    CHECK(!method_needs_gradients(MethodKind::Att));
    CHECK(!method_needs_gradients(MethodKind::ClsAtt));
}
