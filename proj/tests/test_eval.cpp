#include <doctest.h>

#include <cmath>
#include <set>

#include "gradsam/errors.hpp"
#include "gradsam/eval.hpp"
#include "gradsam/trainer.hpp"
#include "support/test_util.hpp"

using namespace gradsam;
using gradsam::testing::micro_config;

namespace {

// One small trained model shared across the eval tests (training is cheap at
// this scale but there is no point repeating it).
struct TrainedFixture {
    SyntheticTaskSpec spec;
    Dataset data;
    Vocab vocab;
    ModelConfig cfg;
    EncoderWeights<double> weights;

    TrainedFixture() {
        spec.distractors = {"the", "a", "seems", "quite", "today", "mostly", "rather",
                            "thing"};
        spec.class_triggers = {{"awful", "dreadful"}, {"great", "superb"}};
        spec.min_words = 4;
        spec.max_words = 7;
        data = generate_corpus(spec, 80, 13);
        vocab = build_vocab(spec);
        cfg = micro_config(1, 2, 16, 10, 2, vocab.size());

        TrainConfig tc;
        tc.epochs = 10;
        tc.batch_size = 8;
        tc.learning_rate = 5e-3;
        tc.seed = 3;
        weights = train<double>(cfg, vocab, data, tc).weights;
    }

    static const TrainedFixture& get() {
        static TrainedFixture f;
        return f;
    }

    EvalContext<double> ctx() const {
        EvalContext<double> c;
        c.cfg = cfg;
        c.vocab = &vocab;
        c.weights = &weights;
        c.corpus_id = "corpus";
        c.model_hash = "model";
        return c;
    }
};

Ranker method_ranker(MethodKind m) {
    Ranker r;
    r.kind = RankerKind::Method;
    r.method = m;
    return r;
}

}  // namespace

TEST_CASE("macro F1 hand values") {
    // All-zero predictions on a balanced binary set: class 0 gets F1 2/3,
    // class 1 gets 0, macro = 1/3.
    CHECK(macro_f1({0, 0}, {0, 1}, 2) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
    CHECK(macro_f1({0, 1, 1}, {0, 1, 1}, 2) == 1.0);
    // A class absent from both sides scores 1 by convention.
    CHECK(macro_f1({0, 0}, {0, 0}, 2) == 1.0);
    CHECK(macro_f1({1, 0}, {0, 1}, 2) == 0.0);
    CHECK(macro_f1({0, 1, 2, 2}, {0, 1, 2, 1}, 3) ==
          doctest::Approx((1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0).epsilon(1e-12));
    CHECK_THROWS_AS((void)macro_f1({}, {}, 2), ConfigError);
    CHECK_THROWS_AS((void)macro_f1({0}, {0, 1}, 2), DimensionError);
    CHECK_THROWS_AS((void)macro_f1({5}, {0}, 2), ConfigError);
}

TEST_CASE("macro F1 fuzz against a confusion-matrix oracle") {
    Rng rng(31);
    for (int iter = 0; iter < 100; ++iter) {
        const size_t n_classes = 2 + rng.index(3);
        const size_t n = 1 + rng.index(40);
        std::vector<size_t> preds(n), golds(n);
        for (size_t i = 0; i < n; ++i) {
            preds[i] = rng.index(n_classes);
            golds[i] = rng.index(n_classes);
        }
        // Independent recomputation straight from the confusion matrix.
        std::vector<std::vector<size_t>> cm(n_classes, std::vector<size_t>(n_classes, 0));
        for (size_t i = 0; i < n; ++i) cm[golds[i]][preds[i]]++;
        double want = 0;
        for (size_t c = 0; c < n_classes; ++c) {
            size_t tp = cm[c][c], fp = 0, fn = 0;
            for (size_t o = 0; o < n_classes; ++o) {
                if (o == c) continue;
                fp += cm[o][c];
                fn += cm[c][o];
            }
            want += (tp + fp + fn == 0) ? 1.0 : 2.0 * double(tp) / double(2 * tp + fp + fn);
        }
        want /= double(n_classes);
        CHECK(macro_f1(preds, golds, n_classes) == doctest::Approx(want).epsilon(1e-12));

        // Permutation invariance.
        std::vector<size_t> order(n);
        for (size_t i = 0; i < n; ++i) order[i] = i;
        rng.shuffle(order);
        std::vector<size_t> p2(n), g2(n);
        for (size_t i = 0; i < n; ++i) {
            p2[i] = preds[order[i]];
            g2[i] = golds[order[i]];
        }
        CHECK(macro_f1(p2, g2, n_classes) == macro_f1(preds, golds, n_classes));
    }
}

TEST_CASE("ceil_fraction boundary sweep at twenty and fifty percent") {
    const size_t want20[] = {1, 1, 1, 1, 1, 2, 2, 2, 2, 2};
    const size_t want50[] = {1, 1, 2, 2, 3, 3, 4, 4, 5, 5};
    for (size_t c = 1; c <= 10; ++c) {
        CHECK(ceil_fraction(0.2, c) == want20[c - 1]);
        CHECK(ceil_fraction(0.5, c) == want50[c - 1]);
        CHECK(ceil_fraction(1.0, c) == c);
    }
    CHECK(ceil_fraction(0.2, 0) == 0);
    CHECK(ceil_fraction(0.01, 1) == 1);  // k > 0 with content present keeps one
    CHECK_THROWS_AS((void)ceil_fraction(0.0, 5), ConfigError);
    CHECK_THROWS_AS((void)ceil_fraction(1.5, 5), ConfigError);
}

TEST_CASE("rationale positions map word indices to token positions by char overlap") {
    const Vocab vocab = gradsam::testing::make_vocab({"bad", "film", "the", "was"});
    DataRecord rec;
    rec.text = "the film was bad";
    rec.rationale = {3};
    const TokenSequence seq = encode(vocab, rec.text, 8);
    // Positions: 0=[CLS], 1=the, 2=film, 3=was, 4=bad, 5=[SEP].
    CHECK(rationale_positions(rec, seq) == std::vector<size_t>{4});

    rec.rationale = {0, 3};
    CHECK(rationale_positions(rec, seq) == std::vector<size_t>{1, 4});

    rec.rationale = {9};  // out of range: ignored
    CHECK(rationale_positions(rec, seq).empty());
}

TEST_CASE("rationale recovery hand cases") {
    // Two sentences; ranking hits the gold top-1 in the first, second place
    // in the second.
    const std::vector<std::vector<size_t>> rankings = {{2, 1, 3}, {1, 4, 3}};
    const std::vector<std::vector<size_t>> gold = {{2}, {4}};
    const RationaleStats stats = rationale_recovery(rankings, gold, {1, 1});
    CHECK(stats.counted == 2);
    CHECK(stats.top1_rate == 0.5);
    CHECK(stats.mrr == doctest::Approx(0.75));  // 1/1 and 1/2

    // counted=0 rows are skipped entirely.
    const RationaleStats only_first = rationale_recovery(rankings, gold, {1, 0});
    CHECK(only_first.counted == 1);
    CHECK(only_first.top1_rate == 1.0);

    CHECK_THROWS_AS((void)rationale_recovery(rankings, gold, {0, 0}), ConfigError);
}

TEST_CASE("keep-top at k=1 reproduces the unmasked predictions exactly") {
    const TrainedFixture& f = TrainedFixture::get();
    const EvalReport report = evaluate(f.ctx(), f.data, "test",
                                       {method_ranker(MethodKind::GradSam)}, {1.0},
                                       MaskDirection::KeepTop, MaskPolicy::MaskToken);
    REQUIRE(report.entries.size() == 1);
    const EvalEntry& e = report.entries[0];
    CHECK(e.masked_macro_f1 == report.full_macro_f1);
    CHECK(e.masked_accuracy == report.full_accuracy);
    for (const SentenceEvalRecord& s : e.sentences) {
        CHECK(s.pred_masked == s.pred_full);
        CHECK(s.masked.empty());
    }
}

TEST_CASE("kept and masked sets partition the content for both directions") {
    const TrainedFixture& f = TrainedFixture::get();
    for (MaskDirection dir : {MaskDirection::KeepTop, MaskDirection::MaskTop}) {
        const EvalReport report =
            evaluate(f.ctx(), f.data, "test", {method_ranker(MethodKind::GradSam)}, {0.4},
                     dir, MaskPolicy::MaskToken);
        for (const SentenceEvalRecord& s : report.entries[0].sentences) {
            std::set<size_t> uni(s.kept.begin(), s.kept.end());
            for (size_t pos : s.masked) {
                CHECK(!uni.count(pos));
                uni.insert(pos);
            }
            // The union must be the content set of the encoded record.
            const DataRecord* rec = nullptr;
            for (const DataRecord& r : f.data.records)
                if (r.id == s.record_id) rec = &r;
            REQUIRE(rec != nullptr);
            const TokenSequence seq = encode(f.vocab, rec->text, f.cfg.N);
            const auto content = seq.content_positions();
            CHECK(uni == std::set<size_t>(content.begin(), content.end()));
        }
    }
}

TEST_CASE("complementary directions at k produce complementary keep sets") {
    const TrainedFixture& f = TrainedFixture::get();
    const EvalReport keep = evaluate(f.ctx(), f.data, "test",
                                     {method_ranker(MethodKind::GradSam)}, {0.4},
                                     MaskDirection::KeepTop, MaskPolicy::MaskToken);
    const EvalReport mask = evaluate(f.ctx(), f.data, "test",
                                     {method_ranker(MethodKind::GradSam)}, {0.4},
                                     MaskDirection::MaskTop, MaskPolicy::MaskToken);
    const auto& ks = keep.entries[0].sentences;
    const auto& ms = mask.entries[0].sentences;
    REQUIRE(ks.size() == ms.size());
    for (size_t i = 0; i < ks.size(); ++i) {
        CHECK(ks[i].kept == ms[i].masked);
        CHECK(ks[i].masked == ms[i].kept);
    }
}

TEST_CASE("aopc equals full minus masked, and only for mask-top runs") {
    const TrainedFixture& f = TrainedFixture::get();
    const EvalReport mask = evaluate(f.ctx(), f.data, "test",
                                     {method_ranker(MethodKind::GradSam)}, {0.2, 0.5},
                                     MaskDirection::MaskTop, MaskPolicy::MaskToken);
    for (const EvalEntry& e : mask.entries) {
        REQUIRE(e.aopc.has_value());
        CHECK(*e.aopc == mask.full_macro_f1 - e.masked_macro_f1);
    }
    const EvalReport keep = evaluate(f.ctx(), f.data, "test",
                                     {method_ranker(MethodKind::GradSam)}, {0.2},
                                     MaskDirection::KeepTop, MaskPolicy::MaskToken);
    CHECK(!keep.entries[0].aopc.has_value());

    // Exactly representable arithmetic: 0.75 - 0.5 is 0.25 with no rounding.
    CHECK(0.75 - 0.5 == 0.25);
}

TEST_CASE("aggregates reconstruct exactly from the per-sentence records") {
    const TrainedFixture& f = TrainedFixture::get();
    const EvalReport report = evaluate(f.ctx(), f.data, "test",
                                       {method_ranker(MethodKind::GradSam),
                                        method_ranker(MethodKind::Att)},
                                       {0.2, 0.6}, MaskDirection::KeepTop,
                                       MaskPolicy::MaskToken);
    for (const EvalEntry& e : report.entries) {
        std::vector<size_t> preds, golds, full;
        for (const SentenceEvalRecord& s : e.sentences) {
            preds.push_back(s.pred_masked);
            golds.push_back(s.gold);
            full.push_back(s.pred_full);
        }
        CHECK(macro_f1(preds, golds, 2) == e.masked_macro_f1);
        CHECK(accuracy_score(preds, golds) == e.masked_accuracy);
        CHECK(macro_f1(full, golds, 2) == report.full_macro_f1);
        CHECK(accuracy_score(full, golds) == report.full_accuracy);
    }
}

TEST_CASE("oracle keep-top quality is monotone in k, within a small allowance") {
    const TrainedFixture& f = TrainedFixture::get();
    Ranker oracle;
    oracle.kind = RankerKind::Oracle;
    const std::vector<double> ks = {0.2, 0.4, 0.6, 0.8, 1.0};
    const EvalReport report = evaluate(f.ctx(), f.data, "test", {oracle}, ks,
                                       MaskDirection::KeepTop, MaskPolicy::MaskToken);
    REQUIRE(report.entries.size() == ks.size());
    for (size_t i = 1; i < report.entries.size(); ++i)
        CHECK(report.entries[i].masked_macro_f1 >=
              report.entries[i - 1].masked_macro_f1 - 0.01);
}

TEST_CASE("random rankers are deterministic per seed and labeled by it") {
    const TrainedFixture& f = TrainedFixture::get();
    Ranker r0;
    r0.kind = RankerKind::Random;
    r0.seed = 0;
    Ranker r1 = r0;
    r1.seed = 1;
    CHECK(r0.label() == "random-s0");
    CHECK(r1.label() == "random-s1");

    const EvalReport a = evaluate(f.ctx(), f.data, "test", {r0, r1}, {0.4},
                                  MaskDirection::KeepTop, MaskPolicy::MaskToken);
    const EvalReport b = evaluate(f.ctx(), f.data, "test", {r0, r1}, {0.4},
                                  MaskDirection::KeepTop, MaskPolicy::MaskToken);
    for (size_t e = 0; e < a.entries.size(); ++e)
        for (size_t i = 0; i < a.entries[e].sentences.size(); ++i)
            CHECK(a.entries[e].sentences[i].kept == b.entries[e].sentences[i].kept);
    // Different seeds shuffle differently somewhere.
    bool any_diff = false;
    for (size_t i = 0; i < a.entries[0].sentences.size(); ++i)
        any_diff = any_diff || a.entries[0].sentences[i].kept != a.entries[1].sentences[i].kept;
    CHECK(any_diff);
}

TEST_CASE("rationale stats appear when rationales exist and count only full hits") {
    const TrainedFixture& f = TrainedFixture::get();
    const EvalReport report = evaluate(f.ctx(), f.data, "test",
                                       {method_ranker(MethodKind::GradSam)}, {0.2},
                                       MaskDirection::KeepTop, MaskPolicy::MaskToken);
    const EvalEntry& e = report.entries[0];
    REQUIRE(e.rationale_top1.has_value());
    REQUIRE(e.rationale_mrr.has_value());
    CHECK(*e.rationale_top1 >= 0.0);
    CHECK(*e.rationale_top1 <= 1.0);
    CHECK(*e.rationale_mrr >= *e.rationale_top1 - 1e-12);

    // Strip rationales: stats disappear.
    Dataset bare = f.data;
    for (DataRecord& rec : bare.records) rec.rationale.clear();
    const EvalReport none = evaluate(f.ctx(), bare, "test",
                                     {method_ranker(MethodKind::GradSam)}, {0.2},
                                     MaskDirection::KeepTop, MaskPolicy::MaskToken);
    CHECK(!none.entries[0].rationale_top1.has_value());
}

TEST_CASE("masked_eval and aopc_eval enforce their directions") {
    const TrainedFixture& f = TrainedFixture::get();
    MaskingSpec spec;
    spec.k = 0.2;
    spec.direction = MaskDirection::MaskTop;
    CHECK_THROWS_AS((void)masked_eval(f.ctx(), f.data, "test", MethodKind::GradSam, spec),
                    ContractError);
    CHECK_NOTHROW((void)aopc_eval(f.ctx(), f.data, "test", MethodKind::GradSam, spec));
    spec.direction = MaskDirection::KeepTop;
    CHECK_NOTHROW((void)masked_eval(f.ctx(), f.data, "test", MethodKind::GradSam, spec));
    CHECK_THROWS_AS((void)aopc_eval(f.ctx(), f.data, "test", MethodKind::GradSam, spec),
                    ContractError);
}

TEST_CASE("evaluate validates its inputs") {
    const TrainedFixture& f = TrainedFixture::get();
    CHECK_THROWS_AS((void)evaluate(f.ctx(), f.data, "test", {}, {0.2},
                                   MaskDirection::KeepTop, MaskPolicy::MaskToken),
                    ConfigError);
    CHECK_THROWS_AS((void)evaluate(f.ctx(), f.data, "test",
                                   {method_ranker(MethodKind::GradSam)}, {},
                                   MaskDirection::KeepTop, MaskPolicy::MaskToken),
                    ConfigError);
    CHECK_THROWS_AS((void)evaluate(f.ctx(), f.data, "test",
                                   {method_ranker(MethodKind::GradSam)}, {1.2},
                                   MaskDirection::KeepTop, MaskPolicy::MaskToken),
                    ConfigError);
    CHECK_THROWS_AS((void)evaluate(f.ctx(), f.data, "nope",
                                   {method_ranker(MethodKind::GradSam)}, {0.2},
                                   MaskDirection::KeepTop, MaskPolicy::MaskToken),
                    ConfigError);
}

TEST_CASE("direction names round-trip") {
    CHECK(parse_direction("keep-top") == MaskDirection::KeepTop);
    CHECK(parse_direction("mask-top") == MaskDirection::MaskTop);
    CHECK(parse_direction(direction_name(MaskDirection::MaskTop)) == MaskDirection::MaskTop);
    CHECK_THROWS_AS((void)parse_direction("sideways"), ConfigError);
}
