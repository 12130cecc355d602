#include "kicrank/bm25.hpp"

#include <cmath>
#include <unordered_set>

namespace kicrank {

std::vector<std::string> tokenize(std::string_view text) {
    std::vector<std::string> tokens;
    std::string current;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        const bool word = (c >= '0' && c <= '9') || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80;
        if (word) {
            current.push_back(c >= 'A' && c <= 'Z' ? static_cast<char>(c - 'A' + 'a') : ch);
        } else if (!current.empty()) {
            tokens.push_back(std::move(current));
            current.clear();
        }
    }
    if (!current.empty()) tokens.push_back(std::move(current));
    return tokens;
}

CorpusStats::CorpusStats(std::span<const std::vector<std::string>> documents, double k1, double b)
    : num_documents_(documents.size()), k1_(k1), b_(b) {
    std::size_t total = 0;
    for (const auto& doc : documents) {
        total += doc.size();
        std::unordered_set<std::string_view> distinct(doc.begin(), doc.end());
        for (auto token : distinct) ++df_[std::string(token)];
    }
    if (num_documents_ > 0) average_length_ = static_cast<double>(total) / static_cast<double>(num_documents_);
}

std::size_t CorpusStats::document_frequency(const std::string& token) const {
    auto it = df_.find(token);
    return it == df_.end() ? 0 : it->second;
}

double CorpusStats::idf(const std::string& token) const {
    const auto n = static_cast<double>(num_documents_);
    const auto df = static_cast<double>(document_frequency(token));
    return std::log((n - df + 0.5) / (df + 0.5) + 1.0);
}

double bm25_score(std::span<const std::string> document, std::span<const std::string> query,
                  const CorpusStats& stats) {
    if (document.empty() || stats.average_length() <= 0.0) return 0.0;
    std::unordered_map<std::string_view, std::size_t> tf;
    for (const auto& token : document) ++tf[token];
    const double norm = stats.k1() * (1.0 - stats.b() + stats.b() * static_cast<double>(document.size()) /
                                                             stats.average_length());
    double score = 0.0;
    for (const auto& term : query) {
        auto it = tf.find(term);
        if (it == tf.end()) continue;
        const auto f = static_cast<double>(it->second);
        score += stats.idf(term) * f * (stats.k1() + 1.0) / (f + norm);
    }
    return score;
}

}  // namespace kicrank
