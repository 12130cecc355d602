#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace kicrank {

/// Lowercases ASCII and splits on runs of non-alphanumeric bytes. Bytes >= 0x80
/// are kept inside tokens so UTF-8 words survive intact.
std::vector<std::string> tokenize(std::string_view text);

/// Okapi BM25 corpus statistics.
class CorpusStats {
public:
    static constexpr double kDefaultK1 = 1.5;
    static constexpr double kDefaultB = 0.75;

    explicit CorpusStats(std::span<const std::vector<std::string>> documents, double k1 = kDefaultK1,
                         double b = kDefaultB);

    std::size_t size() const { return num_documents_; }
    double average_length() const { return average_length_; }
    std::size_t document_frequency(const std::string& token) const;
    /// ln((N - df + 0.5) / (df + 0.5) + 1)
    double idf(const std::string& token) const;
    double k1() const { return k1_; }
    double b() const { return b_; }

private:
    std::size_t num_documents_ = 0;
    double average_length_ = 0.0;
    double k1_;
    double b_;
    std::unordered_map<std::string, std::size_t> df_;
};

/// Sum over query tokens (repeats included) of
/// idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |doc| / avgdl)).
double bm25_score(std::span<const std::string> document, std::span<const std::string> query,
                  const CorpusStats& stats);

}  // namespace kicrank
