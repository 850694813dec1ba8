#pragma once

// Rule-based fix-pattern tagging of security commits.

#include "scopy/ingest.hpp"

#include <array>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace scopy::patterns {

enum class Category { SanityCheck, ApiUsage, RegexUpdate, SecurityProperty, Other };

inline constexpr std::array<Category, 5> all_categories = {Category::SanityCheck, Category::ApiUsage, Category::RegexUpdate,
                                                           Category::SecurityProperty, Category::Other};

std::string_view to_string(Category c);
Category category_from_string(std::string_view s);

struct Evidence {
    std::string file;
    int line = 0;  // post line for added code, pre line for deleted code
    std::string rule_id;

    bool operator==(const Evidence&) const = default;
};

struct PatternLabel {
    Category category = Category::Other;
    std::vector<Evidence> evidence;  // empty only for Other

    bool operator==(const PatternLabel&) const = default;
};

struct SecureApi {
    std::string name;  // dotted; a module name also covers its members
    std::string note;
};

class SecureApiTable {
public:
    SecureApiTable() = default;
    explicit SecureApiTable(std::vector<SecureApi> entries);

    /// Returns false when the name is already present.
    bool add(SecureApi api);
    /// Exact name, or a member of a listed module ("subprocess.run").
    bool covers(std::string_view dotted) const;
    const std::vector<SecureApi>& entries() const { return entries_; }

private:
    std::vector<SecureApi> entries_;
};

/// Every API named as a secure replacement in the fix-pattern study.
SecureApiTable default_secure_apis();

/// `name<TAB>note` per line; '#' starts a comment line. Throws NotFound and
/// BadConfig (duplicates, missing fields).
SecureApiTable load_secure_apis(const std::filesystem::path& path);

/// First matching rule in order SanityCheck, ApiUsage, RegexUpdate,
/// SecurityProperty; Other otherwise.
PatternLabel tag(const ingest::CommitBundle& bundle, const SecureApiTable& apis = default_secure_apis());

/// All rule hits, grouped by category in priority order. tag() keeps the first group.
std::vector<PatternLabel> all_matches(const ingest::CommitBundle& bundle, const SecureApiTable& apis = default_secure_apis());

struct ReportRow {
    Category category;
    long count = 0;
    double proportion = 0.0;  // percent of the corpus
};

/// One row per category in fixed order. Throws EmptyCorpus.
std::vector<ReportRow> report(const std::vector<PatternLabel>& labels);
/// Same, from precomputed counts in category order.
std::vector<ReportRow> report_counts(const std::array<long, 5>& counts);

/// `category<TAB>count<TAB>proportion` with a header line; proportions to two decimals.
std::string report_tsv(const std::vector<ReportRow>& rows);

nlohmann::json to_json(const PatternLabel& l);
PatternLabel pattern_label_from_json(const nlohmann::json& j);

}  // namespace scopy::patterns
