#include "gradsam/html_report.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "gradsam/errors.hpp"
#include "gradsam/version.hpp"

namespace gradsam {

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
    return buf;
}

// Per-token shading weight in [0, 1]; -inf (specials) handled by the caller.
std::vector<double> intensities(const std::vector<double>& scores) {
    double lo = 0, hi = 0;
    bool any = false;
    for (double s : scores) {
        if (!std::isfinite(s)) continue;
        if (!any || s < lo) lo = s;
        if (!any || s > hi) hi = s;
        any = true;
    }
    std::vector<double> out(scores.size(), 0.0);
    for (size_t i = 0; i < scores.size(); ++i) {
        if (!std::isfinite(scores[i])) continue;
        out[i] = hi > lo ? (scores[i] - lo) / (hi - lo) : 0.5;
    }
    return out;
}

const char* kStyle = R"(  body { font-family: Georgia, serif; margin: 2rem auto; max-width: 70rem; padding: 0 1rem; background: #fcfcfa; color: #1a1a1a; }
  h1 { font-size: 1.4rem; }
  .sentence { margin: 2rem 0; border-top: 1px solid #ccc; padding-top: 1rem; }
  .cards { display: flex; flex-wrap: wrap; gap: 1rem; }
  .card { border: 1px solid #ddd; border-radius: 4px; padding: 0.6rem 0.8rem; background: #fff; flex: 1 1 20rem; }
  .card h3 { margin: 0 0 0.5rem; font-size: 0.9rem; font-family: monospace; }
  .tok { padding: 0.1rem 0.2rem; margin: 0 0.05rem; border-radius: 2px; display: inline-block; }
  .special { color: #999; font-size: 0.8em; }
  .meta { color: #666; font-size: 0.85rem; }
)";

}  // namespace

std::string html_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string render_html_report(const std::vector<AttributionDoc>& docs) {
    if (docs.empty()) throw ConfigError("render_html_report: no attribution documents");

    // Sentences in first-seen order; each holds (doc index, item index) per
    // method that scored it.
    std::vector<size_t> order;
    std::map<size_t, std::vector<std::pair<size_t, size_t>>> by_record;
    for (size_t d = 0; d < docs.size(); ++d) {
        for (size_t i = 0; i < docs[d].items.size(); ++i) {
            const size_t id = docs[d].items[i].record_id;
            if (!by_record.count(id)) order.push_back(id);
            by_record[id].emplace_back(d, i);
        }
    }

    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        << "<title>Token attributions</title>\n<style>\n"
        << kStyle << "</style>\n</head>\n<body>\n"
        << "<h1>Token attributions</h1>\n"
        << "<p class=\"meta\">" << html_escape(kToolName) << " " << html_escape(kToolVersion)
        << "</p>\n";

    for (size_t id : order) {
        const auto& refs = by_record.at(id);
        const AttributionItem& first = docs[refs[0].first].items[refs[0].second];
        out << "<div class=\"sentence\">\n<h2>Sentence " << id << "</h2>\n"
            << "<p class=\"meta\">" << html_escape(first.text) << "</p>\n<div class=\"cards\">\n";
        for (const auto& [d, i] : refs) {
            const AttributionItem& item = docs[d].items[i];
            if (item.tokens.size() != item.scores.size())
                throw ContractError("attribution item: tokens/scores length mismatch");
            out << "<div class=\"card\">\n<h3>" << html_escape(docs[d].method);
            if (item.class_id) out << " &middot; class " << *item.class_id;
            out << "</h3>\n<p>";
            const std::vector<double> heat = intensities(item.scores);
            for (size_t t = 0; t < item.tokens.size(); ++t) {
                const std::string text = html_escape(item.tokens[t]);
                if (!std::isfinite(item.scores[t])) {
                    out << "<span class=\"tok special\" title=\"excluded\">" << text
                        << "</span>";
                } else {
                    out << "<span class=\"tok\" style=\"background: rgba(195,74,34, "
                        << fixed(0.85 * heat[t], 3) << ")\" title=\""
                        << fixed(item.scores[t], 6) << "\">" << text << "</span>";
                }
            }
            out << "</p>\n</div>\n";
        }
        out << "</div>\n</div>\n";
    }
    out << "</body>\n</html>\n";
    return out.str();
}

void save_html_report(const std::vector<AttributionDoc>& docs, const std::string& path) {
    write_text_file(path, render_html_report(docs));
}

}  // namespace gradsam
