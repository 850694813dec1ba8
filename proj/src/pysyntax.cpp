#include "scopy/pysyntax.hpp"

#include "scopy/errors.hpp"

#include <algorithm>
#include <array>
#include <map>
#include <optional>
#include <set>

namespace scopy::py {

namespace {

constexpr std::array<std::string_view, 35> kKeywords = {
    "False",  "None",     "True",  "and",    "as",       "assert", "async",  "await", "break",
    "class",  "continue", "def",   "del",    "elif",     "else",   "except", "finally", "for",
    "from",   "global",   "if",    "import", "in",       "is",     "lambda", "nonlocal", "not",
    "or",     "pass",     "raise", "return", "try",      "while",  "with",   "yield"};

// Longest first so that the scan can take the first match.
constexpr std::array<std::string_view, 48> kOperators = {
    "**=", "//=", ">>=", "<<=", "...", "->", ":=", "==", "!=", "<=", ">=", "**", "//", "<<",
    ">>",  "+=",  "-=",  "*=",  "/=",  "%=", "&=", "|=", "^=", "@=", "<>", "+",  "-",  "*",
    "/",   "%",   "@",   "&",   "|",   "^",  "~",  "<",  ">",  "(",  ")",  "[",  "]",  "{",
    "}",   ",",   ":",   ".",   ";",   "="};

bool ident_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool ident_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

struct LogicalLine {
    int indent = 0;
    std::vector<Token> tokens;
};

class Lexer {
public:
    explicit Lexer(std::string_view src, bool lenient = false) : src_(src), lenient_(lenient) {}

    std::vector<LogicalLine> run() {
        std::vector<LogicalLine> out;
        LogicalLine cur;
        bool line_start = true;
        while (pos_ < src_.size()) {
            if (line_start && brackets_.empty()) {
                int indent = 0;
                while (pos_ < src_.size() && (src_[pos_] == ' ' || src_[pos_] == '\t' || src_[pos_] == '\f')) {
                    if (src_[pos_] == '\t') indent = (indent / 8 + 1) * 8;
                    else if (src_[pos_] == ' ') ++indent;
                    ++pos_;
                }
                if (pos_ >= src_.size()) break;
                char c = src_[pos_];
                if (c == '\n' || c == '#' || (c == '\r' && peek(1) == '\n')) {
                    skip_to_eol();
                    continue;
                }
                cur.indent = indent;
                line_start = false;
            }
            char c = src_[pos_];
            if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
                ++pos_;
            } else if (c == '#') {
                while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
            } else if (c == '\\') {
                std::size_t n = pos_ + 1;
                if (n < src_.size() && src_[n] == '\r') ++n;
                if (n >= src_.size() || src_[n] != '\n') {
                    if (!lenient_) fail("unexpected character after line continuation", pos_);
                    ++pos_;
                    continue;
                }
                pos_ = n + 1;
                new_line(pos_);
            } else if (c == '\n') {
                ++pos_;
                new_line(pos_);
                if (brackets_.empty()) {
                    if (!cur.tokens.empty()) out.push_back(std::move(cur));
                    cur = LogicalLine{};
                    line_start = true;
                }
            } else {
                cur.tokens.push_back(next_token());
            }
        }
        if (!brackets_.empty() && !lenient_) {
            auto [ch, off] = brackets_.back();
            fail(std::string("'") + ch + "' was never closed", off);
        }
        if (!cur.tokens.empty()) out.push_back(std::move(cur));
        return out;
    }

private:
    char peek(std::size_t k) const { return pos_ + k < src_.size() ? src_[pos_ + k] : '\0'; }

    void new_line(std::size_t start) {
        ++line_;
        line_begin_ = start;
    }

    void skip_to_eol() {
        while (pos_ < src_.size() && src_[pos_] != '\n') ++pos_;
        if (pos_ < src_.size()) {
            ++pos_;
            new_line(pos_);
        }
    }

    int column_of(std::size_t off) const { return static_cast<int>(off - line_begin_) + 1; }

    [[noreturn]] void fail(const std::string& msg, std::size_t off) const {
        // Recompute the line of `off`; it may precede the current line.
        int line = 1;
        std::size_t begin = 0;
        for (std::size_t i = 0; i < off && i < src_.size(); ++i)
            if (src_[i] == '\n') {
                ++line;
                begin = i + 1;
            }
        throw SyntaxError(msg, line, static_cast<int>(off - begin) + 1);
    }

    Token make(TokenKind kind, std::size_t begin, int start_line, int start_col) {
        Token t;
        t.kind = kind;
        t.text = std::string(src_.substr(begin, pos_ - begin));
        t.line = start_line;
        t.end_line = line_;
        t.column = start_col;
        t.begin = begin;
        t.end = pos_;
        return t;
    }

    bool string_prefix_at(std::size_t& quote_pos) const {
        std::size_t i = pos_;
        while (i < src_.size() && i - pos_ < 2 && std::string_view("rRbBuUfF").find(src_[i]) != std::string_view::npos) ++i;
        if (i < src_.size() && (src_[i] == '\'' || src_[i] == '"')) {
            std::string p;
            for (std::size_t k = pos_; k < i; ++k) p += static_cast<char>(std::tolower(src_[k]));
            static const std::set<std::string> ok = {"", "r", "u", "b", "f", "br", "rb", "fr", "rf"};
            if (ok.count(p)) {
                quote_pos = i;
                return true;
            }
        }
        return false;
    }

    Token lex_string(std::size_t quote_pos) {
        std::size_t begin = pos_;
        int start_line = line_;
        int start_col = column_of(begin);
        char q = src_[quote_pos];
        bool triple = quote_pos + 2 < src_.size() && src_[quote_pos + 1] == q && src_[quote_pos + 2] == q;
        pos_ = quote_pos + (triple ? 3 : 1);
        while (true) {
            if (pos_ >= src_.size()) {
                if (!lenient_) fail("unterminated string literal", begin);
                pos_ = src_.size();
                break;
            }
            char c = src_[pos_];
            if (c == '\\') {
                if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '\n') {
                    pos_ += 2;
                    new_line(pos_);
                } else {
                    pos_ += 2;
                }
                continue;
            }
            if (c == '\n') {
                if (!triple && lenient_) break;
                if (!triple) fail("unterminated string literal", begin);
                ++pos_;
                new_line(pos_);
                continue;
            }
            if (c == q) {
                if (!triple) {
                    ++pos_;
                    break;
                }
                if (peek(1) == q && peek(2) == q) {
                    pos_ += 3;
                    break;
                }
            }
            ++pos_;
        }
        return make(TokenKind::string, begin, start_line, start_col);
    }

    Token next_token() {
        std::size_t begin = pos_;
        int start_line = line_;
        int start_col = column_of(begin);
        unsigned char c = static_cast<unsigned char>(src_[pos_]);

        std::size_t quote_pos = 0;
        if ((c == '\'' || c == '"' || std::isalpha(c)) && string_prefix_at(quote_pos)) return lex_string(quote_pos);

        if (std::isdigit(c) || (c == '.' && std::isdigit(static_cast<unsigned char>(peek(1))))) {
            bool hex = c == '0' && (peek(1) == 'x' || peek(1) == 'X');
            while (pos_ < src_.size()) {
                unsigned char d = static_cast<unsigned char>(src_[pos_]);
                if (std::isalnum(d) || d == '_' || d == '.') {
                    ++pos_;
                } else if ((d == '+' || d == '-') && !hex && (src_[pos_ - 1] == 'e' || src_[pos_ - 1] == 'E')) {
                    ++pos_;
                } else {
                    break;
                }
            }
            return make(TokenKind::number, begin, start_line, start_col);
        }
        if (ident_start(c)) {
            while (pos_ < src_.size() && ident_char(static_cast<unsigned char>(src_[pos_]))) ++pos_;
            return make(TokenKind::name, begin, start_line, start_col);
        }
        for (auto op : kOperators) {
            if (src_.substr(pos_, op.size()) == op) {
                pos_ += op.size();
                if (op == "(" || op == "[" || op == "{") {
                    brackets_.emplace_back(op[0], begin);
                } else if (op == ")" || op == "]" || op == "}") {
                    char open = op == ")" ? '(' : op == "]" ? '[' : '{';
                    if (brackets_.empty() || brackets_.back().first != open) {
                        if (!lenient_) fail(std::string("unmatched '") + std::string(op) + "'", begin);
                    } else {
                        brackets_.pop_back();
                    }
                }
                return make(TokenKind::op, begin, start_line, start_col);
            }
        }
        if (!lenient_) fail(std::string("invalid character '") + static_cast<char>(c) + "'", begin);
        ++pos_;
        return make(TokenKind::op, begin, start_line, start_col);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    int line_ = 1;
    std::size_t line_begin_ = 0;
    std::vector<std::pair<char, std::size_t>> brackets_;
    bool lenient_ = false;
};

// Index of the ':' ending a compound header, skipping lambda colons and
// anything nested in brackets.
std::optional<std::size_t> header_colon(const std::vector<Token>& toks, std::size_t from = 0) {
    int depth = 0;
    int lambdas = 0;
    for (std::size_t i = from; i < toks.size(); ++i) {
        const auto& t = toks[i];
        if (t.kind == TokenKind::op) {
            if (t.text == "(" || t.text == "[" || t.text == "{") ++depth;
            else if (t.text == ")" || t.text == "]" || t.text == "}") --depth;
            else if (t.text == ":" && depth == 0) {
                if (lambdas > 0) --lambdas;
                else return i;
            }
        } else if (t.is_name("lambda") && depth == 0) {
            ++lambdas;
        }
    }
    return std::nullopt;
}

bool soft_keyword_header(const std::vector<Token>& toks, std::string_view kw) {
    if (toks.size() < 3 || !toks[0].is_name(kw)) return false;
    const auto& second = toks[1];
    if (second.kind == TokenKind::op) {
        static const std::set<std::string> allowed = {"(", "[", "{", "-", "*"};
        if (!allowed.count(second.text)) return false;
    }
    auto colon = header_colon(toks);
    if (!colon) return false;
    int depth = 0;
    for (std::size_t i = 0; i < *colon; ++i) {
        const auto& t = toks[i];
        if (t.is_op("(") || t.is_op("[") || t.is_op("{")) ++depth;
        else if (t.is_op(")") || t.is_op("]") || t.is_op("}")) --depth;
        else if (depth == 0 && t.kind == TokenKind::op && t.text.back() == '=' && t.text != "==" &&
                 t.text != "!=" && t.text != "<=" && t.text != ">=")
            return false;
    }
    return true;
}

std::optional<StmtKind> compound_kind(const std::vector<Token>& toks, bool in_match) {
    if (toks.empty() || toks[0].kind != TokenKind::name) return std::nullopt;
    std::string_view w = toks[0].text;
    if (w == "async" && toks.size() > 1) w = toks[1].text;
    static const std::map<std::string_view, StmtKind> kinds = {
        {"if", StmtKind::if_},         {"elif", StmtKind::elif_},     {"else", StmtKind::else_},
        {"while", StmtKind::while_},   {"for", StmtKind::for_},       {"try", StmtKind::try_},
        {"except", StmtKind::except_}, {"finally", StmtKind::finally_}, {"with", StmtKind::with_},
        {"def", StmtKind::def_},       {"class", StmtKind::class_}};
    if (auto it = kinds.find(w); it != kinds.end()) {
        if (toks[0].is_name("async") && it->second != StmtKind::def_ && it->second != StmtKind::for_ &&
            it->second != StmtKind::with_)
            return std::nullopt;
        return it->second;
    }
    if (soft_keyword_header(toks, "match")) return StmtKind::match_;
    if (in_match && soft_keyword_header(toks, "case")) return StmtKind::case_;
    return std::nullopt;
}

class Parser {
public:
    Parser(std::string_view src, std::vector<LogicalLine> lines) : src_(src), lines_(std::move(lines)) {}

    Statement parse() {
        Statement root;
        root.kind = StmtKind::module;
        root.code = "<module>";
        if (!lines_.empty() && lines_[0].indent != 0)
            fail("unexpected indent", lines_[0].tokens.front());
        root.children = block(0, false);
        if (idx_ < lines_.size()) fail("unindent does not match any outer indentation level", lines_[idx_].tokens.front());
        return root;
    }

private:
    [[noreturn]] static void fail(const std::string& msg, const Token& at) {
        throw SyntaxError(msg, at.line, at.column);
    }

    std::string text(const Token& first, const Token& last) const {
        return std::string(src_.substr(first.begin, last.end - first.begin));
    }

    std::vector<Statement> block(int indent, bool in_match) {
        std::vector<Statement> out;
        while (idx_ < lines_.size()) {
            const auto& line = lines_[idx_];
            if (line.indent < indent) break;
            if (line.indent > indent) fail("unexpected indent", line.tokens.front());
            auto kind = compound_kind(line.tokens, in_match);
            if (kind && is_clause(*kind))
                fail("'" + line.tokens.front().text + "' without a matching statement", line.tokens.front());
            statement(indent, in_match, out);
        }
        return out;
    }

    static void finish(Statement& s, const std::vector<Token>& toks) {
        s.span = {toks.front().line, toks.back().end_line};
        s.tokens = toks;
    }

    static bool operand(const Token& t) {
        if (t.kind == TokenKind::number || t.kind == TokenKind::string) return true;
        return t.kind == TokenKind::name && (!is_keyword(t.text) || t.text == "True" || t.text == "False" || t.text == "None");
    }

    static bool soft_keyword(const Token& t) { return t.is_name("match") || t.is_name("case") || t.is_name("type"); }

    // two operands with nothing between them, as in a py2 `print "x"`
    static bool juxtaposed(const Token& a, const Token& b) {
        if (!operand(b)) return false;
        if (a.kind == TokenKind::string && b.kind == TokenKind::string) return false;
        return operand(a) || a.is_op(")") || a.is_op("]") || a.is_op("}");
    }

    std::vector<Statement> simple_statements(const std::vector<Token>& toks, std::size_t from) {
        std::vector<Statement> out;
        std::vector<Token> cur;
        auto flush = [&] {
            if (cur.empty()) return;
            Statement s;
            s.kind = StmtKind::simple;
            s.code = text(cur.front(), cur.back());
            finish(s, cur);
            s.extent = s.span;
            s.docstring = std::all_of(cur.begin(), cur.end(),
                                      [](const Token& t) { return t.kind == TokenKind::string; });
            out.push_back(std::move(s));
            cur.clear();
        };
        for (std::size_t i = from; i < toks.size(); ++i) {
            if (toks[i].is_op(";")) {
                flush();
                continue;
            }
            if (!cur.empty() && juxtaposed(cur.back(), toks[i]) && !(cur.size() == 1 && soft_keyword(cur.back())))
                fail("invalid syntax", toks[i]);
            cur.push_back(toks[i]);
        }
        flush();
        return out;
    }

    void statement(int indent, bool in_match, std::vector<Statement>& out) {
        const auto& line = lines_[idx_];
        if (line.tokens.front().is_op("@")) {
            std::vector<Token> decorators;
            while (idx_ < lines_.size() && lines_[idx_].indent == indent && lines_[idx_].tokens.front().is_op("@")) {
                decorators.insert(decorators.end(), lines_[idx_].tokens.begin(), lines_[idx_].tokens.end());
                ++idx_;
            }
            if (idx_ >= lines_.size() || lines_[idx_].indent != indent)
                fail("decorator not followed by a definition", decorators.front());
            auto kind = compound_kind(lines_[idx_].tokens, false);
            if (kind != StmtKind::def_ && kind != StmtKind::class_)
                fail("decorator not followed by a definition", lines_[idx_].tokens.front());
            out.push_back(compound(indent, *kind, decorators));
            return;
        }
        auto kind = compound_kind(line.tokens, in_match);
        if (!kind) {
            auto stmts = simple_statements(line.tokens, 0);
            ++idx_;
            for (auto& s : stmts) out.push_back(std::move(s));
            return;
        }
        out.push_back(compound(indent, *kind, {}));
        clauses(indent, out.back());
    }

    Statement compound(int indent, StmtKind kind, const std::vector<Token>& decorators) {
        const auto& line = lines_[idx_];
        const auto& toks = line.tokens;
        auto colon = header_colon(toks);
        if (!colon) fail("expected ':'", toks.back());

        Statement s;
        s.kind = kind;
        s.is_async = toks.front().is_name("async");
        std::vector<Token> header = decorators;
        header.insert(header.end(), toks.begin(), toks.begin() + static_cast<long>(*colon) + 1);
        s.code = text(header.front(), header.back());
        finish(s, header);
        if (kind == StmtKind::def_ || kind == StmtKind::class_) {
            std::size_t at = s.is_async ? 2 : 1;
            if (at >= toks.size() || toks[at].kind != TokenKind::name) fail("expected a name", toks.front());
            s.name = toks[at].text;
        }
        ++idx_;

        if (*colon + 1 < toks.size()) {
            if (compound_kind({toks.begin() + static_cast<long>(*colon) + 1, toks.end()}, false))
                fail("compound statement after ':' on the same line", toks[*colon + 1]);
            s.children = simple_statements(toks, *colon + 1);
        } else {
            if (idx_ >= lines_.size() || lines_[idx_].indent <= indent)
                fail("expected an indented block", next_or(toks[*colon]));
            int child_indent = lines_[idx_].indent;
            s.children = block(child_indent, kind == StmtKind::match_);
            if (idx_ < lines_.size() && lines_[idx_].indent > indent)
                fail("unindent does not match any outer indentation level", lines_[idx_].tokens.front());
        }
        return s;
    }

    // First token of the upcoming line, where CPython reports block errors.
    const Token& next_or(const Token& fallback) const {
        return idx_ < lines_.size() ? lines_[idx_].tokens.front() : fallback;
    }

    std::optional<StmtKind> next_clause(int indent) const {
        if (idx_ >= lines_.size() || lines_[idx_].indent != indent) return std::nullopt;
        auto k = compound_kind(lines_[idx_].tokens, false);
        if (k && is_clause(*k)) return k;
        return std::nullopt;
    }

    void clauses(int indent, Statement& owner) {
        switch (owner.kind) {
            case StmtKind::if_: {
                Statement* tail = &owner;
                while (auto k = next_clause(indent)) {
                    if (*k != StmtKind::elif_ && *k != StmtKind::else_) break;
                    tail->children.push_back(compound(indent, *k, {}));
                    tail = &tail->children.back();
                    if (*k == StmtKind::else_) break;
                }
                break;
            }
            case StmtKind::while_:
            case StmtKind::for_:
                if (next_clause(indent) == StmtKind::else_) owner.children.push_back(compound(indent, StmtKind::else_, {}));
                break;
            case StmtKind::try_: {
                bool handlers = false;
                while (next_clause(indent) == StmtKind::except_) {
                    owner.children.push_back(compound(indent, StmtKind::except_, {}));
                    handlers = true;
                }
                if (handlers && next_clause(indent) == StmtKind::else_)
                    owner.children.push_back(compound(indent, StmtKind::else_, {}));
                bool fin = false;
                if (next_clause(indent) == StmtKind::finally_) {
                    owner.children.push_back(compound(indent, StmtKind::finally_, {}));
                    fin = true;
                }
                if (!handlers && !fin) fail("expected 'except' or 'finally' block", next_or(owner.tokens.back()));
                break;
            }
            default: break;
        }
    }

    std::string_view src_;
    std::vector<LogicalLine> lines_;
    std::size_t idx_ = 0;
};

LineRange compute_extents(Statement& s) {
    LineRange r = s.span;
    for (auto& c : s.children) {
        auto cr = compute_extents(c);
        if (cr.empty()) continue;
        if (r.empty()) r = cr;
        r.first = std::min(r.first, cr.first);
        r.last = std::max(r.last, cr.last);
    }
    s.extent = r;
    return r;
}

void collect_units(const Statement& s, std::vector<UnitLocation>& out) {
    for (const auto& c : s.children) {
        if (c.kind == StmtKind::def_) out.push_back({c.name, c.extent, &c});
        else collect_units(c, out);
    }
}

void collect_members(const Statement& parent, ModuleMembers& m, bool top) {
    bool docstring_scope = parent.kind == StmtKind::module || parent.kind == StmtKind::class_;
    for (const auto& c : parent.children) {
        if (c.kind == StmtKind::def_) continue;
        if (c.docstring && docstring_scope) continue;
        if (top) m.top.push_back(&c);
        m.all.push_back(&c);
        collect_members(c, m, false);
    }
}

}  // namespace

bool is_keyword(std::string_view word) {
    return std::find(kKeywords.begin(), kKeywords.end(), word) != kKeywords.end();
}

std::string_view to_string(StmtKind k) {
    switch (k) {
        case StmtKind::module: return "module";
        case StmtKind::simple: return "simple";
        case StmtKind::if_: return "if";
        case StmtKind::elif_: return "elif";
        case StmtKind::else_: return "else";
        case StmtKind::while_: return "while";
        case StmtKind::for_: return "for";
        case StmtKind::try_: return "try";
        case StmtKind::except_: return "except";
        case StmtKind::finally_: return "finally";
        case StmtKind::with_: return "with";
        case StmtKind::def_: return "def";
        case StmtKind::class_: return "class";
        case StmtKind::match_: return "match";
        case StmtKind::case_: return "case";
    }
    return "simple";
}

Statement parse_module(std::string_view source) {
    Parser parser(source, Lexer(source).run());
    Statement root = parser.parse();
    compute_extents(root);
    return root;
}

std::vector<Token> tokenize_fragment(std::string_view text) {
    std::vector<Token> out;
    for (auto& l : Lexer(text, true).run())
        for (auto& t : l.tokens) out.push_back(std::move(t));
    return out;
}

std::vector<UnitLocation> function_units(const Statement& module) {
    std::vector<UnitLocation> out;
    collect_units(module, out);
    return out;
}

bool ModuleMembers::contains(const Statement* s) const {
    return std::find(all.begin(), all.end(), s) != all.end();
}

ModuleMembers module_members(const Statement& module) {
    ModuleMembers m;
    collect_members(module, m, true);
    return m;
}

std::vector<ingest::UnitSpans> discover_unit_spans(std::string_view pre_source, std::string_view post_source) {
    auto pre = parse_module(pre_source);
    auto post = parse_module(post_source);

    std::vector<ingest::UnitSpans> units;
    std::map<std::pair<std::string, int>, std::size_t> index;
    auto add = [&](const Statement& module, bool is_pre) {
        std::map<std::string, int> seen;
        for (const auto& u : function_units(module)) {
            auto key = std::make_pair(u.name, seen[u.name]++);
            auto it = index.find(key);
            if (it == index.end()) {
                it = index.emplace(key, units.size()).first;
                units.push_back({u.name, {}, {}});
            }
            (is_pre ? units[it->second].pre : units[it->second].post).push_back(u.extent);
        }
    };
    add(pre, true);
    add(post, false);

    ingest::UnitSpans module_unit{std::string(ingest::module_unit_name), {}, {}};
    for (const auto* s : module_members(pre).all) module_unit.pre.push_back(s->span);
    for (const auto* s : module_members(post).all) module_unit.post.push_back(s->span);
    if (!module_unit.pre.empty() || !module_unit.post.empty()) units.push_back(std::move(module_unit));
    return units;
}

}  // namespace scopy::py
