#pragma once

#include <string>
#include <vector>

#include "gradsam/io.hpp"

namespace gradsam {

// Static HTML heatmap view over one or more attribution documents. Sentences
// are grouped by record id and shown once, with one card per method so the
// methods sit side by side. Token shading is min-max normalized per card;
// when every finite score ties, everything gets mid intensity. Specials
// (score -inf) render dimmed, outside the color scale. Output depends only on
// the inputs, so fixed inputs give byte-identical files.
std::string render_html_report(const std::vector<AttributionDoc>& docs);

void save_html_report(const std::vector<AttributionDoc>& docs, const std::string& path);

std::string html_escape(const std::string& s);

}  // namespace gradsam
