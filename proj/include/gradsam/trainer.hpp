#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gradsam/dataset.hpp"
#include "gradsam/model.hpp"
#include "gradsam/tokenizer.hpp"

namespace gradsam {

enum class OptimizerKind { Sgd, Adam };

const char* optimizer_name(OptimizerKind k);
OptimizerKind parse_optimizer(const std::string& name);  // ConfigError on unknown name

struct TrainConfig {
    size_t epochs = 10;
    size_t batch_size = 8;
    double learning_rate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    uint64_t seed = 1;

    void validate() const;  // ConfigError on violation
};

// Recipe for a planted-trigger corpus. Every sentence contains exactly one
// trigger word; the label is that trigger's class, flipped by the presence
// of the negation token when one is configured (binary tasks only). The
// label is therefore recomputable from the words alone via label_rule.
struct SyntheticTaskSpec {
    std::string name = "task";
    std::vector<std::string> distractors;
    std::vector<std::vector<std::string>> class_triggers;  // one list per class
    std::string negation_token;  // empty = no negation
    double negation_prob = 0.0;
    size_t min_words = 4;   // content words including the trigger
    size_t max_words = 8;
    std::vector<double> class_prior;  // empty = uniform
    double train_frac = 0.8;
    double val_frac = 0.1;  // remainder is test

    size_t num_classes() const { return class_triggers.size(); }
    void validate() const;  // ConfigError on violation

    // Label from the word multiset: the planted trigger's class, flipped by
    // negation presence. ContractError when no trigger or triggers of
    // different classes are present.
    size_t label_rule(const std::vector<std::string>& words) const;
};

// count records, each generated from mix_seed(seed, record id) so the corpus
// is independent of generation order. Splits are assigned by record index:
// the first train_frac go to "train", the next val_frac to "val", the rest
// to "test".
Dataset generate_corpus(const SyntheticTaskSpec& spec, size_t count, uint64_t seed);

// Reserved tokens plus every word the task recipe can emit, sorted for
// determinism.
Vocab build_vocab(const SyntheticTaskSpec& spec);

// encode() over a list of records.
std::vector<TokenSequence> encode_records(const Vocab& vocab,
                                          const std::vector<const DataRecord*>& records,
                                          size_t n);

// Mean per-sentence loss and its parameter gradients (for_each_param order)
// at fixed weights. Sequential over sentences, so results are deterministic.
template <typename T>
struct BatchGradients {
    double loss = 0.0;
    std::vector<Tensor<T>> grads;
};

template <typename T>
BatchGradients<T> compute_batch_gradients(const ModelConfig& cfg, const EncoderWeights<T>& w,
                                          const std::vector<TokenSequence>& seqs,
                                          const std::vector<size_t>& labels);

template <typename T>
double dataset_accuracy(const ModelConfig& cfg, const EncoderWeights<T>& w,
                        const std::vector<TokenSequence>& seqs,
                        const std::vector<size_t>& labels);

template <typename T>
struct TrainResult {
    EncoderWeights<T> weights;
    double final_train_accuracy = 0.0;
    double final_val_accuracy = 0.0;
    std::vector<double> epoch_losses;
};

// Minibatch training from a seed-fixed init. The "train" split is fit, the
// "val" split only scored (records with other splits are ignored). Single
// logit models (n == 1) use the logistic loss, multi-logit use softmax
// cross-entropy. Deterministic for a fixed config. Divergence raises
// TrainingError carrying the epoch index.
template <typename T>
TrainResult<T> train(const ModelConfig& cfg, const Vocab& vocab, const Dataset& data,
                     const TrainConfig& tc);

}  // namespace gradsam
