#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gradsam {

// One labeled sentence. rationale holds word indices (whitespace tokens of
// `text`, 0-based) of the planted evidence, empty when unknown. split is
// "train", "val", or "test".
struct DataRecord {
    size_t id = 0;
    std::string text;
    size_t label = 0;
    std::vector<size_t> rationale;
    std::string split = "train";
};

struct Dataset {
    std::vector<DataRecord> records;

    size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }

    // max label + 1 (0 for an empty dataset).
    size_t num_classes() const;

    std::vector<const DataRecord*> split(const std::string& name) const;
    bool has_rationales() const;
};

}  // namespace gradsam
