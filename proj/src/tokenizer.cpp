#include "gradsam/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <sstream>

#include "gradsam/errors.hpp"

namespace gradsam {

namespace {

constexpr size_t kMaxWordChars = 100;

const char* kReserved[5] = {Vocab::kPadToken, Vocab::kUnkToken, Vocab::kClsToken,
                            Vocab::kSepToken, Vocab::kMaskToken};

bool is_special_id(int32_t id) {
    return id == Vocab::kPadId || id == Vocab::kClsId || id == Vocab::kSepId;
}

}  // namespace

Vocab Vocab::from_lines(const std::vector<std::string>& lines) {
    if (lines.size() < 5)
        throw ConfigError("vocab: need at least the 5 reserved tokens, got " +
                          std::to_string(lines.size()) + " lines");
    for (size_t i = 0; i < 5; ++i)
        if (lines[i] != kReserved[i])
            throw ConfigError("vocab: line " + std::to_string(i + 1) + " must be " +
                              kReserved[i] + ", got '" + lines[i] + "'");
    Vocab v;
    v.id_to_token_.reserve(lines.size());
    for (size_t i = 0; i < lines.size(); ++i) {
        const std::string& tok = lines[i];
        if (tok.empty())
            throw ConfigError("vocab: empty token at line " + std::to_string(i + 1));
        auto [it, inserted] = v.token_to_id_.emplace(tok, static_cast<int32_t>(i));
        if (!inserted)
            throw ConfigError("vocab: duplicate token '" + tok + "' at line " +
                              std::to_string(i + 1));
        v.id_to_token_.push_back(tok);
    }
    return v;
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("vocab: cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    // A trailing newline produces no extra line with getline, but guard a
    // final blank line from hand-edited files.
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return from_lines(lines);
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("vocab: cannot write " + path);
    for (const std::string& tok : id_to_token_) out << tok << '\n';
    if (!out) throw ConfigError("vocab: write failed for " + path);
}

int32_t Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? -1 : it->second;
}

const std::string& Vocab::token(int32_t id) const {
    if (id < 0 || static_cast<size_t>(id) >= id_to_token_.size())
        throw DimensionError("vocab: id " + std::to_string(id) + " out of range (size " +
                             std::to_string(id_to_token_.size()) + ")");
    return id_to_token_[static_cast<size_t>(id)];
}

const char* mask_policy_name(MaskPolicy p) {
    switch (p) {
        case MaskPolicy::None: return "none";
        case MaskPolicy::MaskToken: return "mask";
        case MaskPolicy::DeleteAndRepad: return "delete";
    }
    throw ContractError("mask_policy_name: bad enum value");
}

MaskPolicy parse_mask_policy(const std::string& name) {
    if (name == "mask") return MaskPolicy::MaskToken;
    if (name == "delete") return MaskPolicy::DeleteAndRepad;
    throw ConfigError("unknown mask policy '" + name + "' (expected mask|delete)");
}

std::vector<size_t> TokenSequence::content_positions() const {
    std::vector<size_t> out;
    for (size_t i = 0; i < ids.size(); ++i)
        if (attention_mask[i] && !is_special_id(ids[i])) out.push_back(i);
    return out;
}

std::vector<std::string> TokenSequence::strip_specials() const {
    std::vector<std::string> out;
    for (size_t i : content_positions()) out.push_back(pieces[i]);
    return out;
}

std::vector<Piece> segment(const Vocab& vocab, const std::string& text) {
    if (vocab.size() < 5) throw ConfigError("segment: vocab not loaded");

    // Split into words: runs of non-space, non-punct chars; each ASCII
    // punctuation char is its own word. Lowercasing is ASCII-only.
    struct Word {
        std::string text;
        size_t begin, end;
    };
    std::vector<Word> words;
    size_t i = 0;
    const size_t len = text.size();
    while (i < len) {
        unsigned char c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
            continue;
        }
        if (c < 0x80 && std::ispunct(c)) {
            words.push_back({std::string(1, static_cast<char>(std::tolower(c))), i, i + 1});
            ++i;
            continue;
        }
        size_t start = i;
        std::string w;
        while (i < len) {
            unsigned char d = static_cast<unsigned char>(text[i]);
            if (std::isspace(d) || (d < 0x80 && std::ispunct(d))) break;
            w.push_back(static_cast<char>(d < 0x80 ? std::tolower(d) : d));
            ++i;
        }
        words.push_back({std::move(w), start, i});
    }

    std::vector<Piece> pieces;
    for (const Word& word : words) {
        if (word.text.size() > kMaxWordChars) {
            pieces.push_back({Vocab::kUnkToken, Vocab::kUnkId, word.begin, word.end});
            continue;
        }
        // Greedy longest match; continuation pieces carry the ## prefix.
        std::vector<Piece> sub;
        size_t pos = 0;
        bool ok = true;
        while (pos < word.text.size()) {
            size_t end = word.text.size();
            int32_t found = -1;
            std::string found_text;
            while (end > pos) {
                std::string cand = word.text.substr(pos, end - pos);
                if (pos > 0) cand = std::string(Vocab::kContinuation) + cand;
                int32_t cid = vocab.id(cand);
                if (cid >= 0) {
                    found = cid;
                    found_text = std::move(cand);
                    break;
                }
                --end;
            }
            if (found < 0) {
                ok = false;
                break;
            }
            sub.push_back({std::move(found_text), found, word.begin + pos, word.begin + end});
            pos = end;
        }
        if (ok) {
            for (Piece& p : sub) pieces.push_back(std::move(p));
        } else {
            // Whole-word [UNK] when any part fails to match.
            pieces.push_back({Vocab::kUnkToken, Vocab::kUnkId, word.begin, word.end});
        }
    }
    return pieces;
}

TokenSequence encode(const Vocab& vocab, const std::string& text, size_t n) {
    if (vocab.size() < 5) throw ConfigError("encode: vocab not loaded");
    if (n < 3) throw ConfigError("encode: sequence length must be >= 3, got " +
                                 std::to_string(n));
    std::vector<Piece> pieces = segment(vocab, text);
    if (pieces.size() > n - 2) pieces.resize(n - 2);

    TokenSequence seq;
    seq.ids.reserve(n);
    seq.attention_mask.reserve(n);
    seq.pieces.reserve(n);
    seq.spans.reserve(n);

    auto push = [&seq](int32_t id, const std::string& piece, size_t b, size_t e, uint8_t m) {
        seq.ids.push_back(id);
        seq.pieces.push_back(piece);
        seq.spans.emplace_back(b, e);
        seq.attention_mask.push_back(m);
    };

    push(Vocab::kClsId, Vocab::kClsToken, 0, 0, 1);
    for (const Piece& p : pieces) push(p.id, p.text, p.begin, p.end, 1);
    push(Vocab::kSepId, Vocab::kSepToken, 0, 0, 1);
    while (seq.ids.size() < n) push(Vocab::kPadId, Vocab::kPadToken, 0, 0, 0);
    return seq;
}

std::vector<std::string> decode(const Vocab& vocab, const std::vector<int32_t>& ids) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int32_t id : ids) out.push_back(vocab.token(id));
    return out;
}

TokenSequence apply_mask(const TokenSequence& seq, const std::vector<size_t>& keep,
                         MaskPolicy policy) {
    if (policy == MaskPolicy::None)
        throw ContractError("apply_mask: policy must be mask or delete");
    std::vector<size_t> content = seq.content_positions();
    std::set<size_t> content_set(content.begin(), content.end());
    std::set<size_t> keep_set;
    for (size_t pos : keep) {
        if (!content_set.count(pos))
            throw ContractError("apply_mask: keep position " + std::to_string(pos) +
                                " is not a content position");
        if (!keep_set.insert(pos).second)
            throw ContractError("apply_mask: duplicate keep position " + std::to_string(pos));
    }

    TokenSequence out = seq;
    out.applied_policy = policy;
    for (size_t pos : content) {
        if (keep_set.count(pos)) continue;
        if (policy == MaskPolicy::MaskToken) {
            out.ids[pos] = Vocab::kMaskId;
            out.pieces[pos] = Vocab::kMaskToken;
        } else {
            out.ids[pos] = Vocab::kPadId;
            out.pieces[pos] = Vocab::kPadToken;
            out.attention_mask[pos] = 0;
        }
        out.spans[pos] = {0, 0};
    }
    return out;
}

}  // namespace gradsam
