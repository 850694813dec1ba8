#include "scopy/patterns.hpp"

#include "scopy/errors.hpp"
#include "scopy/pysyntax.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace scopy::patterns {

using py::Token;
using py::TokenKind;

namespace {

struct ChangedLine {
    int line;  // pre line for deleted, post line for added
    std::string text;
    std::vector<Token> tokens;
};

struct Block {
    std::vector<ChangedLine> deleted;
    std::vector<ChangedLine> added;
};

bool is_comment_or_blank(const std::string& text) {
    auto p = text.find_first_not_of(" \t");
    return p == std::string::npos || text[p] == '#';
}

std::vector<Block> blocks_of(const ingest::FileChange& fc) {
    std::vector<Block> out;
    for (const auto& h : fc.hunks) {
        int pre = h.pre_start, post = h.post_start;
        if (h.pre_len == 0) ++pre;
        if (h.post_len == 0) ++post;
        Block cur;
        auto flush = [&] {
            if (!cur.deleted.empty() || !cur.added.empty()) out.push_back(std::move(cur));
            cur = {};
        };
        for (const auto& l : h.lines) {
            switch (l.marker) {
                case ingest::LineMarker::context:
                    flush();
                    ++pre;
                    ++post;
                    break;
                case ingest::LineMarker::deleted:
                    if (!is_comment_or_blank(l.text)) cur.deleted.push_back({pre, l.text, py::tokenize_fragment(l.text)});
                    ++pre;
                    break;
                case ingest::LineMarker::added:
                    if (!is_comment_or_blank(l.text)) cur.added.push_back({post, l.text, py::tokenize_fragment(l.text)});
                    ++post;
                    break;
            }
        }
        flush();
    }
    return out;
}

std::string join(const std::vector<Token>& t, std::size_t from, std::size_t to) {
    std::string s;
    for (std::size_t i = from; i < to && i < t.size(); ++i) {
        if (!s.empty()) s += ' ';
        s += t[i].text;
    }
    return s;
}

bool is_header(const std::vector<Token>& t) {
    return !t.empty() && (t[0].is_name("if") || t[0].is_name("elif") || t[0].is_name("while") || t[0].is_name("assert"));
}

// Guard condition of an if/elif/while/assert header.
std::string header_condition(const std::vector<Token>& t) {
    std::size_t end = t.size();
    if (t[0].is_name("assert")) {
        int depth = 0;
        for (std::size_t i = 1; i < t.size(); ++i) {
            if (t[i].is_op("(") || t[i].is_op("[") || t[i].is_op("{")) ++depth;
            if (t[i].is_op(")") || t[i].is_op("]") || t[i].is_op("}")) --depth;
            if (depth == 0 && t[i].is_op(",")) {
                end = i;
                break;
            }
        }
    } else if (end > 1 && t[end - 1].is_op(":")) {
        --end;
    }
    return join(t, 1, end);
}

// Conditions of `a if cond else b` expressions.
std::vector<std::string> ternary_conditions(const std::vector<Token>& t) {
    std::vector<std::string> out;
    for (std::size_t i = 1; i < t.size(); ++i) {
        if (!t[i].is_name("if")) continue;
        for (std::size_t j = i + 1; j < t.size(); ++j)
            if (t[j].is_name("else")) {
                out.push_back(join(t, i + 1, j));
                break;
            }
    }
    return out;
}

// local name -> dotted import path
using ImportMap = std::map<std::string, std::string>;

ImportMap imports_of(std::string_view source) {
    ImportMap m;
    auto toks = py::tokenize_fragment(source);
    auto dotted = [&](std::size_t& i) {
        std::string s;
        while (i < toks.size() && toks[i].kind == TokenKind::name) {
            s += toks[i++].text;
            if (i + 1 < toks.size() && toks[i].is_op(".") && toks[i + 1].kind == TokenKind::name) s += toks[i++].text;
            else break;
        }
        return s;
    };
    for (std::size_t i = 0; i < toks.size(); ++i) {
        if (toks[i].is_name("import") && (i == 0 || toks[i - 1].line != toks[i].line)) {
            ++i;
            while (i < toks.size()) {
                std::string mod = dotted(i);
                std::string local = mod.substr(0, mod.find('.'));
                if (i + 1 < toks.size() && toks[i].is_name("as")) {
                    local = toks[i + 1].text;
                    m[local] = mod;
                    i += 2;
                } else {
                    m[local] = local;
                }
                if (i < toks.size() && toks[i].is_op(",")) ++i;
                else break;
            }
        } else if (toks[i].is_name("from") && (i == 0 || toks[i - 1].line != toks[i].line)) {
            ++i;
            std::string mod = dotted(i);
            if (i >= toks.size() || !toks[i].is_name("import")) continue;
            ++i;
            if (i < toks.size() && toks[i].is_op("(")) ++i;
            while (i < toks.size() && toks[i].kind == TokenKind::name) {
                std::string name = toks[i++].text, local = name;
                if (i + 1 < toks.size() && toks[i].is_name("as")) {
                    local = toks[i + 1].text;
                    i += 2;
                }
                m[local] = mod + "." + name;
                if (i < toks.size() && toks[i].is_op(",")) ++i;
            }
        }
    }
    return m;
}

// Dotted names used or imported on one line, resolved through `imports`.
std::set<std::string> dotted_names(const std::vector<Token>& t, const ImportMap& imports) {
    std::set<std::string> out;
    if (!t.empty() && (t[0].is_name("import") || t[0].is_name("from"))) {
        auto m = imports_of(join(t, 0, t.size()));
        for (auto& [local, full] : m) out.insert(full);
        return out;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i].kind != TokenKind::name || py::is_keyword(t[i].text)) continue;
        if (i > 0 && t[i - 1].is_op(".")) continue;
        std::vector<std::string> parts{t[i].text};
        std::size_t j = i + 1;
        while (j + 1 < t.size() && t[j].is_op(".") && t[j + 1].kind == TokenKind::name) {
            parts.push_back(t[j + 1].text);
            j += 2;
        }
        auto it = imports.find(parts[0]);
        std::string head = it == imports.end() ? parts[0] : it->second;
        // every prefix, so that "yaml.safe_load(x).foo" still yields "yaml.safe_load"
        std::string acc = head;
        out.insert(acc);
        for (std::size_t k = 1; k < parts.size(); ++k) {
            acc += "." + parts[k];
            out.insert(acc);
        }
    }
    return out;
}

bool is_regex_call(const std::vector<Token>& t, std::size_t open_paren) {
    static const std::set<std::string> fns = {"match", "fullmatch", "search", "sub", "subn", "compile", "findall", "finditer"};
    if (open_paren < 2 || !t[open_paren - 2].is_op(".")) return false;
    return t[open_paren - 1].kind == TokenKind::name && fns.contains(t[open_paren - 1].text);
}

// Names and literals passed to regex calls on a line.
std::set<std::string> regex_arguments(const std::vector<Token>& t) {
    std::set<std::string> out;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (!t[i].is_op("(") || !is_regex_call(t, i)) continue;
        int depth = 0;
        for (std::size_t j = i; j < t.size(); ++j) {
            if (t[j].is_op("(")) ++depth;
            else if (t[j].is_op(")") && --depth == 0) break;
            else if (t[j].kind == TokenKind::name || t[j].kind == TokenKind::string) out.insert(t[j].text);
        }
    }
    return out;
}

// Body of a string literal without prefix and quotes.
std::string literal_body(const std::string& lit) {
    auto q = lit.find_first_of("'\"");
    if (q == std::string::npos) return lit;
    std::size_t width = lit.compare(q, 3, std::string(3, lit[q])) == 0 ? 3 : 1;
    if (lit.size() < q + 2 * width) return {};
    return lit.substr(q + width, lit.size() - q - 2 * width);
}

std::set<std::string> strings_of(const std::vector<Token>& t) {
    std::set<std::string> out;
    for (const auto& tok : t)
        if (tok.kind == TokenKind::string) out.insert(tok.text);
    return out;
}

// `.replace(...)` whose literal arguments touch quotes or backslashes.
bool quote_escape_replace(const std::vector<Token>& t) {
    for (std::size_t i = 1; i + 1 < t.size(); ++i) {
        if (!t[i].is_name("replace") || !t[i - 1].is_op(".") || !t[i + 1].is_op("(")) continue;
        int depth = 0;
        for (std::size_t j = i + 1; j < t.size(); ++j) {
            if (t[j].is_op("(")) ++depth;
            else if (t[j].is_op(")") && --depth == 0) break;
            else if (t[j].kind == TokenKind::string && literal_body(t[j].text).find_first_of("'\"\\") != std::string::npos)
                return true;
        }
    }
    return false;
}

bool is_bool(const Token& t) { return t.is_name("True") || t.is_name("False"); }

bool flag_flip(const std::vector<Token>& a, const std::vector<Token>& b) {
    if (a.size() != b.size() || a.empty()) return false;
    bool flipped = false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].text == b[i].text && a[i].kind == b[i].kind) continue;
        if (is_bool(a[i]) && is_bool(b[i])) flipped = true;
        else return false;
    }
    return flipped;
}

// `after` is `before` with extra tokens inside a call or collection.
bool argument_added(const std::vector<Token>& before, const std::vector<Token>& after) {
    if (before.empty() || after.size() <= before.size() || before[0].text != after[0].text) return false;
    bool bracket = std::any_of(before.begin(), before.end(), [](const Token& t) {
        return t.is_op("(") || t.is_op("[") || t.is_op("{");
    });
    if (!bracket) return false;
    std::size_t j = 0;
    int depth = 0;
    for (std::size_t i = 0; i < after.size(); ++i) {
        bool open = after[i].is_op("(") || after[i].is_op("[") || after[i].is_op("{");
        bool close = after[i].is_op(")") || after[i].is_op("]") || after[i].is_op("}");
        if (j < before.size() && after[i].text == before[j].text) {
            ++j;
        } else if (depth == 0 || open || close) {
            return false;  // extra code outside any bracket
        }
        depth += open ? 1 : close ? -1 : 0;
    }
    return j == before.size();
}

bool literal_item(const std::vector<Token>& t) {
    if (t.empty()) return false;
    bool any = false;
    for (const auto& tok : t) {
        if (tok.kind == TokenKind::string || tok.kind == TokenKind::number) any = true;
        else if (!tok.is_op(",")) return false;
    }
    return any;
}

struct FileContext {
    const ingest::FileChange* fc;
    ImportMap pre_imports, post_imports;
    std::vector<std::string> post_lines;
    std::set<int> added_lines;
};

using Hits = std::array<std::vector<Evidence>, 4>;

void check_block(const FileContext& ctx, const Block& b, const SecureApiTable& apis, Hits& hits) {
    const auto& file = ctx.fc->path;
    auto hit = [&](Category c, int line, const char* rule) {
        hits[static_cast<std::size_t>(c)].push_back({file, line, rule});
    };

    // sanity checks
    std::set<std::string> old_headers, old_ternaries;
    for (const auto& d : b.deleted) {
        if (is_header(d.tokens)) old_headers.insert(header_condition(d.tokens));
        for (auto& c : ternary_conditions(d.tokens)) old_ternaries.insert(c);
    }
    for (const auto& a : b.added) {
        if (is_header(a.tokens) && !old_headers.contains(header_condition(a.tokens)))
            hit(Category::SanityCheck, a.line, old_headers.empty() ? "R1.guard" : "R1.condition");
        if (!b.deleted.empty())
            for (auto& c : ternary_conditions(a.tokens))
                if (!old_ternaries.contains(c)) {
                    hit(Category::SanityCheck, a.line, "R1.condition");
                    break;
                }
    }

    // secure APIs
    std::set<std::string> old_names;
    for (const auto& d : b.deleted) {
        auto n = dotted_names(d.tokens, ctx.pre_imports);
        old_names.insert(n.begin(), n.end());
    }
    for (const auto& a : b.added)
        for (const auto& name : dotted_names(a.tokens, ctx.post_imports))
            if (apis.covers(name) && !old_names.contains(name)) {
                hit(Category::ApiUsage, a.line, "R2.api");
                break;
            }

    // regular expressions and escaping
    std::set<std::string> old_strings;
    for (const auto& d : b.deleted) {
        auto s = strings_of(d.tokens);
        old_strings.insert(s.begin(), s.end());
    }
    for (const auto& a : b.added) {
        if (quote_escape_replace(a.tokens)) {
            hit(Category::RegexUpdate, a.line, "R3.escape");
            continue;
        }
        if (b.deleted.empty()) continue;
        std::set<std::string> fresh;
        for (auto& s : strings_of(a.tokens))
            if (!old_strings.contains(s)) fresh.insert(s);
        if (fresh.empty()) continue;
        auto args = regex_arguments(a.tokens);
        bool used = std::any_of(fresh.begin(), fresh.end(), [&](const auto& s) { return args.contains(s); });
        // `name = '...'` where name feeds a regex call elsewhere in the file
        if (!used && a.tokens.size() >= 3 && a.tokens[0].kind == TokenKind::name && a.tokens[1].is_op("=")) {
            const auto& target = a.tokens[0].text;
            for (const auto& line : ctx.post_lines)
                if (regex_arguments(py::tokenize_fragment(line)).contains(target)) {
                    used = true;
                    break;
                }
        }
        if (used) hit(Category::RegexUpdate, a.line, "R3.pattern");
    }

    // security properties
    for (const auto& a : b.added) {
        bool done = false;
        for (const auto& d : b.deleted) {
            if (flag_flip(d.tokens, a.tokens)) {
                hit(Category::SecurityProperty, a.line, "R4.flag");
                done = true;
                break;
            }
            if (argument_added(d.tokens, a.tokens)) {
                hit(Category::SecurityProperty, a.line, "R4.argument");
                done = true;
                break;
            }
        }
        if (done) continue;
        if (b.deleted.empty() && literal_item(a.tokens)) {
            hit(Category::SecurityProperty, a.line, "R4.collection");
            continue;
        }
        if (!a.tokens.empty() && a.tokens[0].is_op("@")) {
            int n = a.line + 1;
            while (n <= static_cast<int>(ctx.post_lines.size())) {
                const auto& text = ctx.post_lines[static_cast<std::size_t>(n - 1)];
                auto p = text.find_first_not_of(" \t");
                if (p == std::string::npos || text[p] == '#' || text[p] == '@') {
                    ++n;
                    continue;
                }
                break;
            }
            if (n <= static_cast<int>(ctx.post_lines.size()) && !ctx.added_lines.contains(n)) {
                auto t = py::tokenize_fragment(ctx.post_lines[static_cast<std::size_t>(n - 1)]);
                std::size_t k = !t.empty() && t[0].is_name("async") ? 1 : 0;
                if (k < t.size() && (t[k].is_name("def") || t[k].is_name("class")))
                    hit(Category::SecurityProperty, a.line, "R4.decorator");
            }
        }
    }
}

}  // namespace

std::string_view to_string(Category c) {
    switch (c) {
        case Category::SanityCheck: return "SanityCheck";
        case Category::ApiUsage: return "ApiUsage";
        case Category::RegexUpdate: return "RegexUpdate";
        case Category::SecurityProperty: return "SecurityProperty";
        case Category::Other: return "Other";
    }
    return "Other";
}

Category category_from_string(std::string_view s) {
    for (auto c : all_categories)
        if (to_string(c) == s) return c;
    throw BadConfig("unknown pattern category '" + std::string(s) + "'");
}

SecureApiTable::SecureApiTable(std::vector<SecureApi> entries) {
    for (auto& e : entries) add(std::move(e));
}

bool SecureApiTable::add(SecureApi api) {
    if (api.name.empty()) throw BadConfig("secure API name is empty");
    if (std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.name == api.name; })) return false;
    entries_.push_back(std::move(api));
    return true;
}

bool SecureApiTable::covers(std::string_view dotted) const {
    for (const auto& e : entries_) {
        if (dotted == e.name) return true;
        if (dotted.size() > e.name.size() && dotted.starts_with(e.name) && dotted[e.name.size()] == '.') return true;
    }
    return false;
}

SecureApiTable default_secure_apis() {
    return SecureApiTable({
        {"re.escape", "regular expression injection"},
        {"shlex.quote", "shell command"},
        {"subprocess", "shell command"},
        {"yaml.safe_load", "path name / deserialization"},
        {"werkzeug.utils.safe_join", "path name"},
        {"werkzeug.utils.secure_filename", "path name"},
        {"django.utils.html.escape", "web application"},
        {"html.unescape", "web application"},
        {"parser.quote", "web application"},
        {"request.server.escape", "web application"},
    });
}

SecureApiTable load_secure_apis(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw NotFound("secure API table " + path.string());
    SecureApiTable t;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto tab = line.find('\t');
        auto where = path.string() + ":" + std::to_string(lineno);
        if (tab == std::string::npos || tab == 0) throw BadConfig(where + ": expected name<TAB>note");
        if (!t.add({line.substr(0, tab), line.substr(tab + 1)})) throw BadConfig(where + ": duplicate API " + line.substr(0, tab));
    }
    return t;
}

std::vector<PatternLabel> all_matches(const ingest::CommitBundle& bundle, const SecureApiTable& apis) {
    Hits hits;
    for (const auto& fc : bundle.files) {
        FileContext ctx{&fc, imports_of(fc.pre_content), imports_of(fc.post_content), ingest::split_lines(fc.post_content), {}};
        ctx.added_lines = ingest::changed_lines(fc).added;
        for (const auto& b : blocks_of(fc)) check_block(ctx, b, apis, hits);
    }
    std::vector<PatternLabel> out;
    for (std::size_t c = 0; c < hits.size(); ++c)
        if (!hits[c].empty()) out.push_back({all_categories[c], hits[c]});
    return out;
}

PatternLabel tag(const ingest::CommitBundle& bundle, const SecureApiTable& apis) {
    auto m = all_matches(bundle, apis);
    return m.empty() ? PatternLabel{} : m.front();
}

std::vector<ReportRow> report_counts(const std::array<long, 5>& counts) {
    long total = 0;
    for (long c : counts) {
        if (c < 0) throw BadConfig("negative pattern count");
        total += c;
    }
    if (total == 0) throw EmptyCorpus("no tagged commits");
    std::vector<ReportRow> rows;
    for (std::size_t i = 0; i < counts.size(); ++i)
        rows.push_back({all_categories[i], counts[i], 100.0 * static_cast<double>(counts[i]) / static_cast<double>(total)});
    return rows;
}

std::vector<ReportRow> report(const std::vector<PatternLabel>& labels) {
    std::array<long, 5> counts{};
    for (const auto& l : labels) ++counts[static_cast<std::size_t>(l.category)];
    return report_counts(counts);
}

std::string report_tsv(const std::vector<ReportRow>& rows) {
    std::string out = "category\tcount\tproportion\n";
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.2f", r.proportion);
        out += std::string(to_string(r.category)) + '\t' + std::to_string(r.count) + '\t' + buf + '\n';
    }
    return out;
}

nlohmann::json to_json(const PatternLabel& l) {
    auto ev = nlohmann::json::array();
    for (const auto& e : l.evidence) ev.push_back({{"file", e.file}, {"line", e.line}, {"rule", e.rule_id}});
    return {{"category", to_string(l.category)}, {"evidence", ev}};
}

PatternLabel pattern_label_from_json(const nlohmann::json& j) {
    PatternLabel l;
    l.category = category_from_string(j.at("category").get<std::string>());
    for (const auto& e : j.value("evidence", nlohmann::json::array()))
        l.evidence.push_back({e.at("file").get<std::string>(), e.at("line").get<int>(), e.at("rule").get<std::string>()});
    if (l.category != Category::Other && l.evidence.empty()) throw BadConfig("pattern label without evidence");
    return l;
}

}  // namespace scopy::patterns
