#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace gradsam {

// Wordpiece vocabulary. Loaded from a UTF-8 text file with one token per
// line, line number = id. The five reserved tokens must occupy the first
// five lines in this exact order.
class Vocab {
public:
    static constexpr int32_t kPadId = 0;
    static constexpr int32_t kUnkId = 1;
    static constexpr int32_t kClsId = 2;
    static constexpr int32_t kSepId = 3;
    static constexpr int32_t kMaskId = 4;

    static constexpr const char* kPadToken = "[PAD]";
    static constexpr const char* kUnkToken = "[UNK]";
    static constexpr const char* kClsToken = "[CLS]";
    static constexpr const char* kSepToken = "[SEP]";
    static constexpr const char* kMaskToken = "[MASK]";

    // Prefix marking a continuation piece inside a word.
    static constexpr const char* kContinuation = "##";

    Vocab() = default;

    // Builds from token lines; validates reserved order and uniqueness.
    // ConfigError on violation, with the offending line number.
    static Vocab from_lines(const std::vector<std::string>& lines);
    static Vocab load(const std::string& path);
    void save(const std::string& path) const;

    size_t size() const { return id_to_token_.size(); }
    bool has(const std::string& token) const { return token_to_id_.count(token) != 0; }
    // -1 when the token is not present.
    int32_t id(const std::string& token) const;
    const std::string& token(int32_t id) const;  // DimensionError when out of range
    const std::vector<std::string>& tokens() const { return id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int32_t> token_to_id_;
};

// One wordpiece with its id and the half-open char span in the source text.
struct Piece {
    std::string text;
    int32_t id = -1;
    size_t begin = 0;
    size_t end = 0;
};

enum class MaskPolicy { None, MaskToken, DeleteAndRepad };

const char* mask_policy_name(MaskPolicy p);
MaskPolicy parse_mask_policy(const std::string& name);  // ConfigError on unknown name

// Fixed-length encoded sentence. Position 0 is [CLS]; the last real position
// is [SEP]; [PAD] fills the tail. attention_mask is 1 exactly on non-pad
// positions. spans are char offsets into the original text ((0,0) for
// specials and pads).
struct TokenSequence {
    std::vector<int32_t> ids;
    std::vector<uint8_t> attention_mask;
    std::vector<std::string> pieces;
    std::vector<std::pair<size_t, size_t>> spans;
    MaskPolicy applied_policy = MaskPolicy::None;

    size_t size() const { return ids.size(); }

    // Real, non-special positions: attention_mask on and id not in
    // {[PAD], [CLS], [SEP]}. [UNK] and [MASK] count as content.
    std::vector<size_t> content_positions() const;
    size_t content_count() const { return content_positions().size(); }

    // Piece strings at content positions, in order.
    std::vector<std::string> strip_specials() const;
};

// ASCII-lowercased greedy longest-match wordpiece segmentation. Words are
// split on whitespace and ASCII punctuation (punctuation chars become
// standalone words). A word with no full segmentation becomes one [UNK]
// piece spanning the whole word; words over 100 chars are [UNK] outright.
std::vector<Piece> segment(const Vocab& vocab, const std::string& text);

// Segment, truncate to the first N-2 pieces, wrap in [CLS]/[SEP], pad to N.
// ConfigError when the vocab is unloaded or N < 3.
TokenSequence encode(const Vocab& vocab, const std::string& text, size_t n);

// Token strings for a list of ids.
std::vector<std::string> decode(const Vocab& vocab, const std::vector<int32_t>& ids);

// Returns a copy with every content position OUTSIDE `keep` replaced per the
// policy: MaskToken swaps in [MASK] (still attended); DeleteAndRepad turns
// the position into [PAD] and drops it from the attention mask, removing the
// token from the model's view while keeping length and special-token
// positions fixed. `keep` must be a duplicate-free subset of the content
// positions (ContractError otherwise).
TokenSequence apply_mask(const TokenSequence& seq, const std::vector<size_t>& keep,
                         MaskPolicy policy);

}  // namespace gradsam
