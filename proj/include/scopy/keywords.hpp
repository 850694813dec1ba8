#pragma once

// Security keyword mining from commit summaries and message filtering.

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace scopy::keywords {

enum class DocLabel { security, non_security, unknown };

struct SummaryDoc {
    std::string commit_id;
    std::string text;
    DocLabel label = DocLabel::unknown;
};

/// Message, then CWE and CVE text when present, one per paragraph.
SummaryDoc make_summary(std::string commit_id, std::string_view message, std::string_view cwe,
                        std::string_view cve_description, DocLabel label);

/// Lowercase alphanumeric runs, grouped by sentence.
std::vector<std::vector<std::string>> sentences(std::string_view text);

bool is_stopword(std::string_view word);

/// Sliding n-word phrases inside each sentence; stopwords are dropped for
/// n = 1 only. Throws BadConfig unless n is 1, 2 or 3.
std::vector<std::string> ngram_tokenize(std::string_view text, int n);

struct KeywordEntry {
    std::string phrase;
    int n = 1;
    long frequency = 0;
    double correlation = 0.0;

    bool operator==(const KeywordEntry&) const = default;
};

class KeywordSet {
public:
    KeywordSet() = default;
    explicit KeywordSet(std::vector<KeywordEntry> entries);

    /// Lowercases and normalizes spacing; returns false for duplicates.
    /// Throws BadConfig for empty phrases or more than three words.
    bool add(KeywordEntry e);
    bool contains(std::string_view phrase) const;

    const std::vector<KeywordEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    std::size_t count(int n) const;

    bool operator==(const KeywordSet&) const = default;

private:
    std::vector<KeywordEntry> entries_;
};

/// The shipped list: 14 one-word, 3 two-word and 3 three-word phrases.
KeywordSet default_keywords();

/// `n<TAB>phrase<TAB>frequency<TAB>correlation`; '#' lines are comments.
KeywordSet load_keywords(const std::filesystem::path& path);
void save_keywords(const KeywordSet& ks, const std::filesystem::path& path);

/// Case-insensitive whole-word phrase matches, in set order.
std::vector<std::string> match(std::string_view message, const KeywordSet& ks);

struct ScoredPhrase {
    std::string phrase;
    int n = 1;
    long security_count = 0;      // occurrences in security docs
    long nonsecurity_count = 0;
    double correlation = 0.0;     // security / (security + nonsecurity)
};

/// Phrases of length 1..3 seen in security docs, sorted by phrase. Throws
/// EmptyCorpus when either side is empty.
std::vector<ScoredPhrase> score_tokens(const std::vector<SummaryDoc>& security_docs,
                                       const std::vector<SummaryDoc>& nonsecurity_docs);

struct LdaOptions {
    int topics = 2;
    double alpha = 0.1;
    double beta = 0.01;
    int iterations = 200;
    std::uint64_t seed = 1;
};

struct LdaModel {
    std::vector<std::string> vocabulary;  // sorted
    Eigen::MatrixXd theta;                // D x K
    Eigen::MatrixXd phi;                  // K x V
    LdaOptions options;

    int topics() const { return static_cast<int>(phi.rows()); }
    /// The m most probable words of topic k, ties broken by word.
    std::vector<std::string> top_words(int k, int m) const;
};

/// Collapsed Gibbs sampling over the 1-gram tokens of each doc. Throws
/// EmptyCorpus and BadConfig (fewer than two topics, or a vocabulary smaller
/// than the topic count).
LdaModel fit_lda(const std::vector<SummaryDoc>& corpus, const LdaOptions& opts);
LdaModel fit_lda(const std::vector<std::vector<std::string>>& docs, const LdaOptions& opts);

struct ExtractOptions {
    long freq_min = 5;
    double corr_min = 0.9;
    int top_m = 10;                         // words kept per screened topic
    std::vector<std::string> seed_terms{"vulnerability", "attack", "cve", "exploit", "malicious"};
};

/// Frequency and correlation filter, plus the top words of every LDA topic
/// whose top words meet a seed term.
KeywordSet extract_keywords(const std::vector<ScoredPhrase>& table, const ExtractOptions& opts,
                            const LdaModel* lda = nullptr);

}  // namespace scopy::keywords
