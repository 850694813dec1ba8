#include "scopy/keywords.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <unordered_map>

namespace scopy::keywords {

namespace {

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> split_words(std::string_view phrase) {
    std::vector<std::string> out;
    for (const auto& s : sentences(phrase)) out.insert(out.end(), s.begin(), s.end());
    return out;
}

std::string join(const std::vector<std::string>& w, std::size_t from, std::size_t n) {
    std::string s = w[from];
    for (std::size_t k = 1; k < n; ++k) s += ' ' + w[from + k];
    return s;
}

// [0,1) from the top 53 bits; identical on every platform.
double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

SummaryDoc make_summary(std::string commit_id, std::string_view message, std::string_view cwe,
                        std::string_view cve_description, DocLabel label) {
    std::string text(message);
    for (auto part : {cwe, cve_description})
        if (!part.empty()) text += "\n\n" + std::string(part);
    return {std::move(commit_id), std::move(text), label};
}

std::vector<std::vector<std::string>> sentences(std::string_view text) {
    std::vector<std::vector<std::string>> out(1);
    std::string word;
    auto flush = [&] {
        if (!word.empty()) out.back().push_back(word);
        word.clear();
    };
    auto end_sentence = [&] {
        flush();
        if (!out.back().empty()) out.emplace_back();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        char c = text[i];
        if (alnum(c)) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            continue;
        }
        bool next_space = i + 1 >= text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
        if (c == '\n' || ((c == '.' || c == '!' || c == '?' || c == ';') && next_space)) end_sentence();
        else flush();
    }
    flush();
    if (out.back().empty()) out.pop_back();
    return out;
}

bool is_stopword(std::string_view word) {
    static const std::set<std::string, std::less<>> words = {
        "a",     "about", "after", "all",   "also",  "am",    "an",    "and",   "any",   "are",   "as",
        "at",    "be",    "been",  "being", "but",   "by",    "can",   "could", "did",   "do",    "does",
        "for",   "from",  "had",   "has",   "have",  "he",    "her",   "his",   "how",   "i",     "if",
        "in",    "into",  "is",    "it",    "its",   "may",   "me",    "more",  "most",  "my",    "no",
        "not",   "of",    "on",    "or",    "other", "our",   "out",   "over",  "same",  "she",   "should",
        "so",    "some",  "such",  "than",  "that",  "the",   "their", "them",  "then",  "there", "these",
        "they",  "this",  "those", "to",    "too",   "up",    "very",  "was",   "we",    "were",  "what",
        "when",  "where", "which", "while", "who",   "will",  "with",  "would", "you",   "your",
    };
    return words.contains(word);
}

std::vector<std::string> ngram_tokenize(std::string_view text, int n) {
    if (n < 1 || n > 3) throw BadConfig("n-gram length must be 1, 2 or 3, got " + std::to_string(n));
    std::vector<std::string> out;
    for (const auto& s : sentences(text)) {
        if (n == 1) {
            for (const auto& w : s)
                if (!is_stopword(w)) out.push_back(w);
            continue;
        }
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i)
            out.push_back(join(s, i, static_cast<std::size_t>(n)));
    }
    return out;
}

KeywordSet::KeywordSet(std::vector<KeywordEntry> entries) {
    for (auto& e : entries) add(std::move(e));
}

bool KeywordSet::add(KeywordEntry e) {
    auto words = split_words(e.phrase);
    if (words.empty() || words.size() > 3) throw BadConfig("keyword phrase must have 1 to 3 words: '" + e.phrase + "'");
    e.phrase = join(words, 0, words.size());
    e.n = static_cast<int>(words.size());
    if (contains(e.phrase)) return false;
    entries_.push_back(std::move(e));
    return true;
}

bool KeywordSet::contains(std::string_view phrase) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.phrase == phrase; });
}

std::size_t KeywordSet::count(int n) const {
    return static_cast<std::size_t>(std::count_if(entries_.begin(), entries_.end(), [&](const auto& e) { return e.n == n; }));
}

KeywordSet default_keywords() {
    static const char* phrases[] = {
        "attack",         "bypass",        "cve",            "dos",         "exploit",
        "injection",      "leakage",       "malicious",      "overflow",    "smuggling",
        "spoofing",       "unauthorized",  "underflow",      "vulnerability",
        "access control", "open redirect", "race condition",
        "denial of service", "out of bound", "dot dot slash",
    };
    KeywordSet ks;
    for (const char* p : phrases) ks.add({p, 0, 0, 1.0});
    return ks;
}

KeywordSet load_keywords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("keyword file " + path.string());
    KeywordSet ks;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, '\t')) cells.push_back(cell);
        auto where = path.string() + ":" + std::to_string(lineno);
        if (cells.size() != 4) throw BadConfig(where + ": expected 4 tab-separated fields");
        KeywordEntry e;
        try {
            e.n = std::stoi(cells[0]);
            e.phrase = cells[1];
            e.frequency = std::stol(cells[2]);
            e.correlation = std::stod(cells[3]);
        } catch (const std::exception&) {
            throw BadConfig(where + ": bad number");
        }
        if (static_cast<int>(split_words(e.phrase).size()) != e.n) throw BadConfig(where + ": n does not match the phrase");
        if (!ks.add(e)) throw BadConfig(where + ": duplicate phrase '" + e.phrase + "'");
    }
    return ks;
}

void save_keywords(const KeywordSet& ks, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw BadConfig("cannot write " + path.string());
    out << std::setprecision(17);
    for (const auto& e : ks.entries()) out << e.n << '\t' << e.phrase << '\t' << e.frequency << '\t' << e.correlation << '\n';
}

std::vector<std::string> match(std::string_view message, const KeywordSet& ks) {
    auto sents = sentences(message);
    std::vector<std::string> out;
    for (const auto& e : ks.entries()) {
        auto words = split_words(e.phrase);
        bool hit = false;
        for (const auto& s : sents) {
            if (s.size() < words.size()) continue;
            for (std::size_t i = 0; i + words.size() <= s.size() && !hit; ++i)
                hit = std::equal(words.begin(), words.end(), s.begin() + static_cast<std::ptrdiff_t>(i));
            if (hit) break;
        }
        if (hit) out.push_back(e.phrase);
    }
    return out;
}

std::vector<ScoredPhrase> score_tokens(const std::vector<SummaryDoc>& security_docs,
                                       const std::vector<SummaryDoc>& nonsecurity_docs) {
    if (security_docs.empty() || nonsecurity_docs.empty()) throw EmptyCorpus("both security and non-security docs are required");
    std::map<std::string, ScoredPhrase> table;
    for (const auto& d : security_docs)
        for (int n = 1; n <= 3; ++n)
            for (auto& p : ngram_tokenize(d.text, n)) {
                auto& row = table[p];
                row.phrase = p;
                row.n = n;
                ++row.security_count;
            }
    for (const auto& d : nonsecurity_docs)
        for (int n = 1; n <= 3; ++n)
            for (auto& p : ngram_tokenize(d.text, n)) {
                auto it = table.find(p);
                if (it != table.end()) ++it->second.nonsecurity_count;
            }
    std::vector<ScoredPhrase> out;
    for (auto& [p, row] : table) {
        row.correlation = static_cast<double>(row.security_count) / static_cast<double>(row.security_count + row.nonsecurity_count);
        out.push_back(row);
    }
    return out;
}

std::vector<std::string> LdaModel::top_words(int k, int m) const {
    std::vector<int> idx(vocabulary.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return phi(k, a) > phi(k, b); });
    std::vector<std::string> out;
    for (int i = 0; i < m && i < static_cast<int>(idx.size()); ++i) out.push_back(vocabulary[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
    return out;
}

LdaModel fit_lda(const std::vector<SummaryDoc>& corpus, const LdaOptions& opts) {
    std::vector<std::vector<std::string>> docs;
    for (const auto& d : corpus) docs.push_back(ngram_tokenize(d.text, 1));
    return fit_lda(docs, opts);
}

LdaModel fit_lda(const std::vector<std::vector<std::string>>& docs, const LdaOptions& opts) {
    if (opts.topics < 2) throw BadConfig("LDA needs at least two topics");
    if (opts.iterations < 0 || !(opts.alpha > 0) || !(opts.beta > 0)) throw BadConfig("LDA hyperparameters must be positive");
    std::set<std::string> vocab_set;
    for (const auto& d : docs) vocab_set.insert(d.begin(), d.end());
    if (docs.empty() || vocab_set.empty()) throw EmptyCorpus("no tokens to model");
    if (vocab_set.size() < static_cast<std::size_t>(opts.topics)) throw BadConfig("vocabulary is smaller than the topic count");

    LdaModel m;
    m.options = opts;
    m.vocabulary.assign(vocab_set.begin(), vocab_set.end());
    std::unordered_map<std::string, int> word_id;
    for (std::size_t i = 0; i < m.vocabulary.size(); ++i) word_id[m.vocabulary[i]] = static_cast<int>(i);

    const int K = opts.topics, V = static_cast<int>(m.vocabulary.size()), D = static_cast<int>(docs.size());
    std::vector<std::vector<int>> w(static_cast<std::size_t>(D)), z(static_cast<std::size_t>(D));
    Eigen::MatrixXi ndk = Eigen::MatrixXi::Zero(D, K), nkw = Eigen::MatrixXi::Zero(K, V);
    Eigen::VectorXi nk = Eigen::VectorXi::Zero(K);
    std::mt19937_64 rng(opts.seed);
    for (int d = 0; d < D; ++d)
        for (const auto& tok : docs[static_cast<std::size_t>(d)]) {
            int word = word_id[tok];
            int k = std::min(K - 1, static_cast<int>(unit(rng) * K));
            w[static_cast<std::size_t>(d)].push_back(word);
            z[static_cast<std::size_t>(d)].push_back(k);
            ++ndk(d, k);
            ++nkw(k, word);
            ++nk[k];
        }

    const double vbeta = V * opts.beta;
    std::vector<double> p(static_cast<std::size_t>(K));
    for (int it = 0; it < opts.iterations; ++it)
        for (int d = 0; d < D; ++d)
            for (std::size_t i = 0; i < w[static_cast<std::size_t>(d)].size(); ++i) {
                int word = w[static_cast<std::size_t>(d)][i];
                int& k = z[static_cast<std::size_t>(d)][i];
                --ndk(d, k);
                --nkw(k, word);
                --nk[k];
                double total = 0;
                for (int t = 0; t < K; ++t) {
                    total += (ndk(d, t) + opts.alpha) * (nkw(t, word) + opts.beta) / (nk[t] + vbeta);
                    p[static_cast<std::size_t>(t)] = total;
                }
                double u = unit(rng) * total;
                k = 0;
                while (k < K - 1 && p[static_cast<std::size_t>(k)] <= u) ++k;
                ++ndk(d, k);
                ++nkw(k, word);
                ++nk[k];
            }

    m.theta = (ndk.cast<double>().array() + opts.alpha).matrix();
    m.phi = (nkw.cast<double>().array() + opts.beta).matrix();
    m.theta.array().colwise() /= m.theta.rowwise().sum().array();
    m.phi.array().colwise() /= m.phi.rowwise().sum().array();
    return m;
}

KeywordSet extract_keywords(const std::vector<ScoredPhrase>& table, const ExtractOptions& opts, const LdaModel* lda) {
    if (opts.freq_min <= 0 || !(opts.corr_min > 0)) throw BadConfig("keyword thresholds must be positive");
    KeywordSet ks;
    for (const auto& row : table)
        if (row.security_count >= opts.freq_min && row.correlation >= opts.corr_min)
            ks.add({row.phrase, row.n, row.security_count, row.correlation});
    if (lda) {
        std::map<std::string, const ScoredPhrase*> by_phrase;
        for (const auto& row : table) by_phrase[row.phrase] = &row;
        for (int k = 0; k < lda->topics(); ++k) {
            auto top = lda->top_words(k, opts.top_m);
            bool seeded = std::any_of(top.begin(), top.end(), [&](const auto& t) {
                return std::find(opts.seed_terms.begin(), opts.seed_terms.end(), t) != opts.seed_terms.end();
            });
            if (!seeded) continue;
            for (const auto& t : top) {
                auto it = by_phrase.find(t);
                KeywordEntry e{t, 1, 0, 0.0};
                if (it != by_phrase.end()) {
                    e.frequency = it->second->security_count;
                    e.correlation = it->second->correlation;
                }
                ks.add(e);
            }
        }
    }
    return ks;
}

}  // namespace scopy::keywords
