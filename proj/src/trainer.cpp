#include "gradsam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "gradsam/errors.hpp"
#include "gradsam/rng.hpp"

namespace gradsam {

size_t Dataset::num_classes() const {
    size_t n = 0;
    for (const DataRecord& r : records) n = std::max(n, r.label + 1);
    return n;
}

std::vector<const DataRecord*> Dataset::split(const std::string& name) const {
    std::vector<const DataRecord*> out;
    for (const DataRecord& r : records)
        if (r.split == name) out.push_back(&r);
    return out;
}

bool Dataset::has_rationales() const {
    for (const DataRecord& r : records)
        if (!r.rationale.empty()) return true;
    return false;
}

const char* optimizer_name(OptimizerKind k) {
    return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

OptimizerKind parse_optimizer(const std::string& name) {
    if (name == "sgd") return OptimizerKind::Sgd;
    if (name == "adam") return OptimizerKind::Adam;
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd|adam)");
}

void TrainConfig::validate() const {
    if (learning_rate <= 0) throw ConfigError("train config: learning rate must be > 0");
    if (batch_size < 1) throw ConfigError("train config: batch size must be >= 1");
}

void SyntheticTaskSpec::validate() const {
    if (class_triggers.empty()) throw ConfigError("task spec: no classes");
    if (distractors.empty()) throw ConfigError("task spec: no distractor words");
    std::set<std::string> seen;
    for (const auto& triggers : class_triggers) {
        if (triggers.empty()) throw ConfigError("task spec: class with no trigger words");
        for (const std::string& t : triggers) {
            if (t.empty()) throw ConfigError("task spec: empty trigger word");
            if (!seen.insert(t).second)
                throw ConfigError("task spec: trigger '" + t + "' used twice");
        }
    }
    for (const std::string& w : distractors) {
        if (w.empty()) throw ConfigError("task spec: empty distractor word");
        if (seen.count(w))
            throw ConfigError("task spec: '" + w + "' is both trigger and distractor");
    }
    if (!negation_token.empty()) {
        if (num_classes() != 2)
            throw ConfigError("task spec: negation requires exactly 2 classes");
        if (seen.count(negation_token) ||
            std::count(distractors.begin(), distractors.end(), negation_token))
            throw ConfigError("task spec: negation token collides with another word");
    }
    if (negation_prob < 0 || negation_prob > 1)
        throw ConfigError("task spec: negation_prob must be in [0, 1]");
    if (min_words < 1 || max_words < min_words)
        throw ConfigError("task spec: need 1 <= min_words <= max_words");
    if (!class_prior.empty()) {
        if (class_prior.size() != num_classes())
            throw ConfigError("task spec: class_prior size mismatch");
        double sum = 0;
        for (double p : class_prior) {
            if (p < 0) throw ConfigError("task spec: negative class prior");
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-9)
            throw ConfigError("task spec: class priors must sum to 1");
    }
    if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1.0)
        throw ConfigError("task spec: invalid split fractions");
}

size_t SyntheticTaskSpec::label_rule(const std::vector<std::string>& words) const {
    std::optional<size_t> trigger_class;
    for (const std::string& w : words) {
        for (size_t c = 0; c < class_triggers.size(); ++c) {
            if (std::count(class_triggers[c].begin(), class_triggers[c].end(), w) == 0)
                continue;
            if (trigger_class.has_value() && *trigger_class != c)
                throw ContractError("label_rule: triggers of different classes present");
            trigger_class = c;
        }
    }
    if (!trigger_class.has_value()) throw ContractError("label_rule: no trigger present");
    size_t label = *trigger_class;
    if (!negation_token.empty() &&
        std::count(words.begin(), words.end(), negation_token) > 0)
        label = 1 - label;  // binary only, enforced by validate()
    return label;
}

Dataset generate_corpus(const SyntheticTaskSpec& spec, size_t count, uint64_t seed) {
    spec.validate();
    Dataset data;
    data.records.resize(count);
    const size_t n_train = static_cast<size_t>(std::floor(spec.train_frac * count));
    const size_t n_val = static_cast<size_t>(std::floor(spec.val_frac * count));
    for (size_t i = 0; i < count; ++i) {
        Rng rng(mix_seed(seed, i));
        const size_t cls = spec.class_prior.empty()
                               ? rng.index(spec.num_classes())
                               : rng.categorical(spec.class_prior);
        const size_t len = rng.uniform_int(spec.min_words, spec.max_words);

        std::vector<std::string> words;
        words.reserve(len + 1);
        for (size_t k = 0; k + 1 < len; ++k)
            words.push_back(spec.distractors[rng.index(spec.distractors.size())]);
        const auto& triggers = spec.class_triggers[cls];
        const std::string& trigger = triggers[rng.index(triggers.size())];
        const size_t tpos = rng.index(words.size() + 1);
        words.insert(words.begin() + static_cast<ptrdiff_t>(tpos), trigger);

        if (!spec.negation_token.empty() && rng.bernoulli(spec.negation_prob)) {
            size_t npos = rng.index(words.size() + 1);
            words.insert(words.begin() + static_cast<ptrdiff_t>(npos), spec.negation_token);
        }

        DataRecord& rec = data.records[i];
        rec.id = i;
        rec.label = spec.label_rule(words);
        for (size_t wpos = 0; wpos < words.size(); ++wpos)
            if (words[wpos] == trigger) rec.rationale.push_back(wpos);
        std::string text;
        for (size_t wpos = 0; wpos < words.size(); ++wpos) {
            if (wpos) text += ' ';
            text += words[wpos];
        }
        rec.text = std::move(text);
        rec.split = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
    }
    return data;
}

Vocab build_vocab(const SyntheticTaskSpec& spec) {
    spec.validate();
    std::set<std::string> words(spec.distractors.begin(), spec.distractors.end());
    for (const auto& triggers : spec.class_triggers) words.insert(triggers.begin(), triggers.end());
    if (!spec.negation_token.empty()) words.insert(spec.negation_token);
    std::vector<std::string> lines = {Vocab::kPadToken, Vocab::kUnkToken, Vocab::kClsToken,
                                      Vocab::kSepToken, Vocab::kMaskToken};
    lines.insert(lines.end(), words.begin(), words.end());
    return Vocab::from_lines(lines);
}

std::vector<TokenSequence> encode_records(const Vocab& vocab,
                                          const std::vector<const DataRecord*>& records,
                                          size_t n) {
    std::vector<TokenSequence> out;
    out.reserve(records.size());
    for (const DataRecord* r : records) out.push_back(encode(vocab, r->text, n));
    return out;
}

namespace {

template <typename T>
Var sentence_loss(Tape<T>& tp, ForwardTrace<T>& trace, size_t label, size_t n_classes) {
    if (n_classes == 1) {
        if (label > 1) throw ConfigError("train: label " + std::to_string(label) +
                                         " invalid for a single-logit model");
        Var logit = tp.select_element(trace.logits_var, 0, 0);
        return tp.logistic_loss(logit, T(label));
    }
    if (label >= n_classes)
        throw ConfigError("train: label " + std::to_string(label) + " out of range for " +
                          std::to_string(n_classes) + " classes");
    return tp.cross_entropy_with_logits(trace.logits_var, label);
}

}  // namespace

template <typename T>
BatchGradients<T> compute_batch_gradients(const ModelConfig& cfg, const EncoderWeights<T>& w,
                                          const std::vector<TokenSequence>& seqs,
                                          const std::vector<size_t>& labels) {
    if (seqs.empty() || seqs.size() != labels.size())
        throw ContractError("compute_batch_gradients: bad batch");
    BatchGradients<T> out;
    w.for_each_param([&out](const std::string&, const Tensor<T>& t) {
        out.grads.emplace_back(t.shape());
    });
    double loss_sum = 0;
    for (size_t i = 0; i < seqs.size(); ++i) {
        ForwardTrace<T> trace = forward(seqs[i], w, cfg);
        Tape<T>& tp = *trace.tape;
        Var loss = sentence_loss(tp, trace, labels[i], cfg.n);
        loss_sum += static_cast<double>(tp.value(loss)(0));
        tp.backward(loss);
        for (size_t p = 0; p < trace.param_vars.size(); ++p) {
            const Tensor<T>& g = tp.grad(trace.param_vars[p]);
            T* acc = out.grads[p].data();
            for (size_t e = 0; e < g.numel(); ++e) acc[e] += g.data()[e];
        }
    }
    const T inv = T(1) / static_cast<T>(seqs.size());
    for (Tensor<T>& g : out.grads)
        for (size_t e = 0; e < g.numel(); ++e) g.data()[e] *= inv;
    out.loss = loss_sum / static_cast<double>(seqs.size());
    return out;
}

template <typename T>
double dataset_accuracy(const ModelConfig& cfg, const EncoderWeights<T>& w,
                        const std::vector<TokenSequence>& seqs,
                        const std::vector<size_t>& labels) {
    if (seqs.empty()) return 0.0;
    size_t hits = 0;
    for (size_t i = 0; i < seqs.size(); ++i) {
        ForwardTrace<T> trace = forward(seqs[i], w, cfg);
        if (predict_label(trace.logits) == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(seqs.size());
}

template <typename T>
TrainResult<T> train(const ModelConfig& cfg, const Vocab& vocab, const Dataset& data,
                     const TrainConfig& tc) {
    cfg.validate();
    tc.validate();
    if (data.empty()) throw ConfigError("train: empty dataset");
    const size_t n_classes = data.num_classes();
    if (cfg.n == 1) {
        if (n_classes > 2) throw ConfigError("train: single-logit model with >2 labels");
    } else if (n_classes > cfg.n) {
        throw ConfigError("train: dataset has " + std::to_string(n_classes) +
                          " labels but the model outputs " + std::to_string(cfg.n));
    }

    std::vector<const DataRecord*> train_recs = data.split("train");
    std::vector<const DataRecord*> val_recs = data.split("val");
    if (train_recs.empty()) throw ConfigError("train: no records with split \"train\"");

    std::vector<TokenSequence> train_seqs = encode_records(vocab, train_recs, cfg.N);
    std::vector<TokenSequence> val_seqs = encode_records(vocab, val_recs, cfg.N);
    std::vector<size_t> train_labels, val_labels;
    for (const DataRecord* r : train_recs) train_labels.push_back(r->label);
    for (const DataRecord* r : val_recs) val_labels.push_back(r->label);

    TrainResult<T> res;
    res.weights = EncoderWeights<T>::init(cfg, tc.seed);

    // Adam state, allocated lazily on the first step.
    std::vector<Tensor<T>> adam_m, adam_v;
    size_t adam_t = 0;
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    std::vector<Tensor<T>*> params;
    res.weights.for_each_param(
        [&params](const std::string&, Tensor<T>& t) { params.push_back(&t); });

    Rng shuffle_rng(mix_seed(tc.seed, 0x51155ULL));

    std::vector<size_t> order(train_seqs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        try {
            shuffle_rng.shuffle(order);
            double loss_sum = 0;
            size_t batches = 0;
            for (size_t start = 0; start < order.size(); start += tc.batch_size) {
                const size_t end = std::min(order.size(), start + tc.batch_size);
                std::vector<TokenSequence> batch_seqs;
                std::vector<size_t> batch_labels;
                for (size_t i = start; i < end; ++i) {
                    batch_seqs.push_back(train_seqs[order[i]]);
                    batch_labels.push_back(train_labels[order[i]]);
                }
                BatchGradients<T> bg =
                    compute_batch_gradients(cfg, res.weights, batch_seqs, batch_labels);
                loss_sum += bg.loss;
                ++batches;

                if (tc.optimizer == OptimizerKind::Sgd) {
                    for (size_t p = 0; p < params.size(); ++p) {
                        T* wd = params[p]->data();
                        const T* gd = bg.grads[p].data();
                        const T lr = static_cast<T>(tc.learning_rate);
                        for (size_t e = 0; e < params[p]->numel(); ++e) wd[e] -= lr * gd[e];
                    }
                } else {
                    if (adam_m.empty()) {
                        for (Tensor<T>* p : params) {
                            adam_m.emplace_back(p->shape());
                            adam_v.emplace_back(p->shape());
                        }
                    }
                    ++adam_t;
                    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t));
                    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t));
                    for (size_t p = 0; p < params.size(); ++p) {
                        T* wd = params[p]->data();
                        const T* gd = bg.grads[p].data();
                        T* md = adam_m[p].data();
                        T* vd = adam_v[p].data();
                        for (size_t e = 0; e < params[p]->numel(); ++e) {
                            const double g = static_cast<double>(gd[e]);
                            const double m = beta1 * static_cast<double>(md[e]) +
                                             (1.0 - beta1) * g;
                            const double v = beta2 * static_cast<double>(vd[e]) +
                                             (1.0 - beta2) * g * g;
                            md[e] = static_cast<T>(m);
                            vd[e] = static_cast<T>(v);
                            const double step = tc.learning_rate * (m / bc1) /
                                                (std::sqrt(v / bc2) + adam_eps);
                            wd[e] = static_cast<T>(static_cast<double>(wd[e]) - step);
                        }
                    }
                }
            }
            const double mean_loss = loss_sum / static_cast<double>(batches);
            if (!std::isfinite(mean_loss))
                throw TrainingError("non-finite epoch loss", epoch);
            res.epoch_losses.push_back(mean_loss);
        } catch (const NumericError& e) {
            throw TrainingError(std::string("diverged: ") + e.what(), epoch);
        }
    }

    res.final_train_accuracy = dataset_accuracy(cfg, res.weights, train_seqs, train_labels);
    res.final_val_accuracy = val_seqs.empty()
                                 ? 0.0
                                 : dataset_accuracy(cfg, res.weights, val_seqs, val_labels);
    return res;
}

// ---------------------------------------------------------------------------
// Explicit instantiations.
// ---------------------------------------------------------------------------

template struct BatchGradients<float>;
template struct BatchGradients<double>;
template BatchGradients<float> compute_batch_gradients(const ModelConfig&,
                                                       const EncoderWeights<float>&,
                                                       const std::vector<TokenSequence>&,
                                                       const std::vector<size_t>&);
template BatchGradients<double> compute_batch_gradients(const ModelConfig&,
                                                        const EncoderWeights<double>&,
                                                        const std::vector<TokenSequence>&,
                                                        const std::vector<size_t>&);
template double dataset_accuracy(const ModelConfig&, const EncoderWeights<float>&,
                                 const std::vector<TokenSequence>&,
                                 const std::vector<size_t>&);
template double dataset_accuracy(const ModelConfig&, const EncoderWeights<double>&,
                                 const std::vector<TokenSequence>&,
                                 const std::vector<size_t>&);
template TrainResult<float> train(const ModelConfig&, const Vocab&, const Dataset&,
                                  const TrainConfig&);
template TrainResult<double> train(const ModelConfig&, const Vocab&, const Dataset&,
                                   const TrainConfig&);

}  // namespace gradsam
