// Name-level definitions and reads of a single statement.

#include "scopy/cpg.hpp"

#include <algorithm>

namespace scopy::cpg {

namespace {

using py::Token;
using py::TokenKind;

bool opens(const Token& t) { return t.is_op("(") || t.is_op("[") || t.is_op("{"); }
bool closes(const Token& t) { return t.is_op(")") || t.is_op("]") || t.is_op("}"); }

bool is_plain_name(const Token& t) {
    return t.kind == TokenKind::name && !py::is_keyword(t.text);
}

using Span = std::pair<std::size_t, std::size_t>;  // half-open token range

std::vector<Token> slice(const std::vector<Token>& toks, Span s) {
    return {toks.begin() + static_cast<long>(s.first), toks.begin() + static_cast<long>(s.second)};
}

// Split [from, to) on a depth-0 separator.
std::vector<Span> split_top(const std::vector<Token>& toks, Span range, std::string_view sep) {
    std::vector<Span> out;
    int depth = 0;
    std::size_t start = range.first;
    for (std::size_t i = range.first; i < range.second; ++i) {
        if (opens(toks[i])) ++depth;
        else if (closes(toks[i])) --depth;
        else if (depth == 0 && toks[i].is_op(sep)) {
            out.push_back({start, i});
            start = i + 1;
        }
    }
    out.push_back({start, range.second});
    return out;
}

std::optional<std::size_t> find_top(const std::vector<Token>& toks, Span range, auto pred) {
    int depth = 0;
    for (std::size_t i = range.first; i < range.second; ++i) {
        if (opens(toks[i])) ++depth;
        else if (closes(toks[i])) --depth;
        else if (depth == 0 && pred(toks[i])) return i;
    }
    return std::nullopt;
}

void uses_of(const std::vector<Token>& toks, Span range, std::set<std::string>& out);

// Identifiers inside the {...} fields of an f-string.
void fstring_uses(const Token& t, std::set<std::string>& out) {
    auto q = t.text.find_first_of("'\"");
    if (q == std::string::npos) return;
    std::string prefix = t.text.substr(0, q);
    if (prefix.find_first_of("fF") == std::string::npos) return;
    const std::string& s = t.text;
    for (std::size_t i = q; i < s.size(); ++i) {
        if (s[i] != '{') continue;
        if (i + 1 < s.size() && s[i + 1] == '{') {
            ++i;
            continue;
        }
        int depth = 1;
        std::size_t j = i + 1;
        for (; j < s.size() && depth > 0; ++j) {
            if (s[j] == '{') ++depth;
            else if (s[j] == '}') --depth;
        }
        std::string field = s.substr(i + 1, j - i - 2);
        // Cut format spec / conversion at the first top-level ':' or '!'.
        int d = 0;
        for (std::size_t k = 0; k < field.size(); ++k) {
            char c = field[k];
            if (c == '(' || c == '[' || c == '{') ++d;
            else if (c == ')' || c == ']' || c == '}') --d;
            else if (d == 0 && (c == ':' || (c == '!' && k + 1 < field.size() && field[k + 1] != '='))) {
                field.resize(k);
                break;
            }
        }
        std::vector<Token> inner;
        std::size_t p = 0;
        while (p < field.size()) {
            unsigned char c = static_cast<unsigned char>(field[p]);
            if (std::isalpha(c) || c == '_') {
                std::size_t b = p;
                while (p < field.size() && (std::isalnum(static_cast<unsigned char>(field[p])) || field[p] == '_')) ++p;
                inner.push_back(Token{TokenKind::name, field.substr(b, p - b)});
            } else if (c == '\'' || c == '"') {
                char quote = field[p++];
                while (p < field.size() && field[p] != quote) ++p;
                ++p;
                inner.push_back(Token{TokenKind::string, "''"});
            } else if (!std::isspace(c)) {
                inner.push_back(Token{TokenKind::op, std::string(1, field[p++])});
            } else {
                ++p;
            }
        }
        uses_of(inner, {0, inner.size()}, out);
        i = j - 1;
    }
}

// Names bound locally inside an expression: lambda parameters and
// comprehension targets. They are not reads of outer variables.
std::set<std::string> local_bindings(const std::vector<Token>& toks, Span range) {
    std::set<std::string> local;
    int depth = 0;
    for (std::size_t i = range.first; i < range.second; ++i) {
        const auto& t = toks[i];
        if (opens(t)) ++depth;
        else if (closes(t)) --depth;
        if (t.is_name("lambda")) {
            for (std::size_t j = i + 1; j < range.second && !toks[j].is_op(":"); ++j) {
                if (is_plain_name(toks[j]) && (j == i + 1 || toks[j - 1].is_op(",") || toks[j - 1].is_op("*") ||
                                                toks[j - 1].is_op("**")))
                    local.insert(toks[j].text);
            }
        } else if (t.is_name("for") && depth > 0) {
            for (std::size_t j = i + 1; j < range.second && !toks[j].is_name("in"); ++j)
                if (is_plain_name(toks[j])) local.insert(toks[j].text);
        }
    }
    return local;
}

void uses_of(const std::vector<Token>& toks, Span range, std::set<std::string>& out) {
    auto local = local_bindings(toks, range);
    std::vector<const Token*> brackets;
    std::size_t lambda_params_until = 0;
    for (std::size_t i = range.first; i < range.second; ++i) {
        const auto& t = toks[i];
        if (opens(t)) {
            brackets.push_back(&t);
            continue;
        }
        if (closes(t)) {
            if (!brackets.empty()) brackets.pop_back();
            continue;
        }
        if (t.kind == TokenKind::string) {
            fstring_uses(t, out);
            continue;
        }
        if (t.is_name("lambda")) {
            // Skip the parameter list; defaults are rare enough to ignore.
            std::size_t j = i + 1;
            while (j < range.second && !toks[j].is_op(":")) ++j;
            lambda_params_until = j;
            continue;
        }
        if (i < lambda_params_until) continue;
        if (!is_plain_name(t)) continue;
        if (i > range.first && toks[i - 1].is_op(".")) continue;  // attribute name
        bool kwarg = !brackets.empty() && brackets.back()->is_op("(") && i + 1 < range.second &&
                     toks[i + 1].is_op("=") && (toks[i - 1].is_op("(") || toks[i - 1].is_op(","));
        if (kwarg) continue;
        if (local.count(t.text)) continue;
        out.insert(t.text);
    }
}

// Assignment target: plain names are definitions; the base of a subscript or
// attribute target is both defined (weak update) and read; subscripts are reads.
void target_of(const std::vector<Token>& toks, Span range, DefUse& du) {
    int subscript_depth = 0;
    std::vector<bool> bracket_is_subscript;
    for (std::size_t i = range.first; i < range.second; ++i) {
        const auto& t = toks[i];
        if (opens(t)) {
            bool sub = t.is_op("[") && i > range.first &&
                       (toks[i - 1].kind == TokenKind::name || closes(toks[i - 1]));
            bool call = t.is_op("(") && i > range.first && (toks[i - 1].kind == TokenKind::name || closes(toks[i - 1]));
            bracket_is_subscript.push_back(sub || call);
            if (sub || call) ++subscript_depth;
            continue;
        }
        if (closes(t)) {
            if (!bracket_is_subscript.empty()) {
                if (bracket_is_subscript.back()) --subscript_depth;
                bracket_is_subscript.pop_back();
            }
            continue;
        }
        if (subscript_depth > 0) {
            if (is_plain_name(t) && !(i > range.first && toks[i - 1].is_op("."))) du.uses.insert(t.text);
            continue;
        }
        if (!is_plain_name(t) || (i > range.first && toks[i - 1].is_op("."))) continue;
        bool based = i + 1 < range.second && (toks[i + 1].is_op(".") || toks[i + 1].is_op("["));
        du.defs.insert(t.text);
        if (based) du.uses.insert(t.text);
    }
}

// `a.b.c(...)` / `await a.b(...)` as a whole expression statement: the call
// is made for its effect, so the base object is taken as modified.
std::optional<std::string> mutated_base(const std::vector<Token>& toks) {
    std::size_t i = 0;
    if (!toks.empty() && toks[0].is_name("await")) i = 1;
    if (i + 3 >= toks.size() || !is_plain_name(toks[i]) || !toks[i + 1].is_op(".")) return std::nullopt;
    std::size_t j = i + 1;
    while (j + 1 < toks.size() && toks[j].is_op(".") && toks[j + 1].kind == TokenKind::name) j += 2;
    if (j >= toks.size() || !toks[j].is_op("(") || !toks.back().is_op(")")) return std::nullopt;
    // The call's closing paren must be the final token.
    int depth = 0;
    for (std::size_t k = j; k < toks.size(); ++k) {
        if (opens(toks[k])) ++depth;
        else if (closes(toks[k])) {
            --depth;
            if (depth == 0 && k + 1 != toks.size()) return std::nullopt;
        }
    }
    return toks[i].text;
}

void simple_def_use(const std::vector<Token>& toks, DefUse& du) {
    if (toks.empty()) return;
    const auto& head = toks.front();
    Span all{0, toks.size()};

    if (head.is_name("import")) {
        for (auto part : split_top(toks, {1, toks.size()}, ",")) {
            auto as = find_top(toks, part, [](const Token& t) { return t.is_name("as"); });
            if (as && *as + 1 < part.second) du.defs.insert(toks[*as + 1].text);
            else if (part.first < part.second) du.defs.insert(toks[part.first].text);
        }
        return;
    }
    if (head.is_name("from")) {
        auto imp = find_top(toks, all, [](const Token& t) { return t.is_name("import"); });
        if (!imp) return;
        std::size_t from = *imp + 1;
        std::size_t to = toks.size();
        if (from < to && toks[from].is_op("(")) {
            ++from;
            if (toks[to - 1].is_op(")")) --to;
        }
        for (auto part : split_top(toks, {from, to}, ",")) {
            if (part.first >= part.second || toks[part.first].is_op("*")) continue;
            auto as = find_top(toks, part, [](const Token& t) { return t.is_name("as"); });
            du.defs.insert(as && *as + 1 < part.second ? toks[*as + 1].text : toks[part.first].text);
        }
        return;
    }
    if (head.is_name("global") || head.is_name("nonlocal") || head.is_name("pass") || head.is_name("break") ||
        head.is_name("continue"))
        return;
    if (head.is_name("del") || head.is_name("return") || head.is_name("raise") || head.is_name("assert") ||
        head.is_name("yield")) {
        uses_of(toks, {1, toks.size()}, du.uses);
        return;
    }

    // Walrus targets anywhere in the statement.
    for (std::size_t i = 0; i + 1 < toks.size(); ++i)
        if (toks[i + 1].is_op(":=") && is_plain_name(toks[i])) du.defs.insert(toks[i].text);

    static const std::set<std::string> augmented = {"+=", "-=", "*=", "/=", "//=", "%=", "**=",
                                                    ">>=", "<<=", "&=", "|=", "^=", "@="};
    if (auto aug = find_top(toks, all, [](const Token& t) { return t.kind == TokenKind::op && augmented.count(t.text); })) {
        DefUse target;
        target_of(toks, {0, *aug}, target);
        du.defs.insert(target.defs.begin(), target.defs.end());
        du.uses.insert(target.defs.begin(), target.defs.end());
        du.uses.insert(target.uses.begin(), target.uses.end());
        uses_of(toks, {*aug + 1, toks.size()}, du.uses);
        return;
    }

    auto parts = split_top(toks, all, "=");
    if (parts.size() > 1) {
        for (std::size_t p = 0; p + 1 < parts.size(); ++p) target_of(toks, parts[p], du);
        uses_of(toks, parts.back(), du.uses);
        return;
    }

    // Annotated assignment without value: `x: int` defines nothing at runtime.
    if (auto colon = find_top(toks, all, [](const Token& t) { return t.is_op(":"); })) {
        uses_of(toks, {*colon + 1, toks.size()}, du.uses);
        return;
    }

    uses_of(toks, all, du.uses);
    if (auto base = mutated_base(toks)) du.defs.insert(*base);
}

// Parameters of a def header's outermost parentheses.
void parameters(const std::vector<Token>& toks, std::size_t open, std::size_t close, DefUse& du) {
    for (auto part : split_top(toks, {open + 1, close}, ",")) {
        std::size_t i = part.first;
        while (i < part.second && (toks[i].is_op("*") || toks[i].is_op("**") || toks[i].is_op("/"))) ++i;
        if (i >= part.second) continue;
        if (is_plain_name(toks[i])) du.defs.insert(toks[i].text);
        if (i + 1 < part.second) uses_of(toks, {i + 2, part.second}, du.uses);  // annotation or default
    }
}

}  // namespace

DefUse def_use(const TreeNode& node) {
    DefUse du;
    const auto& toks = node.tokens;
    if (node.synthetic_root || toks.empty()) return du;
    using py::StmtKind;

    // Header tokens without the trailing ':' (for compound statements).
    std::size_t end = toks.size();
    if (node.kind != StmtKind::simple && toks.back().is_op(":")) --end;

    switch (node.kind) {
        case StmtKind::simple: simple_def_use(toks, du); break;
        case StmtKind::if_:
        case StmtKind::elif_:
        case StmtKind::while_:
        case StmtKind::match_:
            uses_of(toks, {1, end}, du.uses);
            break;
        case StmtKind::case_: {
            // Capture patterns: bare names not followed by '(' or '.'.
            for (std::size_t i = 1; i < end; ++i) {
                const auto& t = toks[i];
                if (!is_plain_name(t) || t.text == "_") continue;
                if (toks[i - 1].is_op(".")) continue;
                if (i + 1 < end && (toks[i + 1].is_op("(") || toks[i + 1].is_op("."))) continue;
                du.defs.insert(t.text);
            }
            break;
        }
        case StmtKind::for_: {
            std::size_t start = toks[0].is_name("async") ? 2 : 1;
            auto in = find_top(toks, {start, end}, [](const Token& t) { return t.is_name("in"); });
            if (!in) break;
            target_of(toks, {start, *in}, du);
            uses_of(toks, {*in + 1, end}, du.entry_uses);
            break;
        }
        case StmtKind::with_: {
            std::size_t start = toks[0].is_name("async") ? 2 : 1;
            std::size_t stop = end;
            if (start < stop && toks[start].is_op("(") && toks[stop - 1].is_op(")")) {
                ++start;
                --stop;
            }
            for (auto item : split_top(toks, {start, stop}, ",")) {
                auto as = find_top(toks, item, [](const Token& t) { return t.is_name("as"); });
                uses_of(toks, {item.first, as.value_or(item.second)}, du.uses);
                if (as) target_of(toks, {*as + 1, item.second}, du);
            }
            break;
        }
        case StmtKind::except_: {
            auto as = find_top(toks, {1, end}, [](const Token& t) { return t.is_name("as"); });
            uses_of(toks, {1, as.value_or(end)}, du.uses);
            if (as && *as + 1 < end) du.defs.insert(toks[*as + 1].text);
            break;
        }
        case StmtKind::def_:
        case StmtKind::class_: {
            // Decorators and the keyword precede the name.
            std::size_t kw = 0;
            while (kw < end && !(toks[kw].is_name("def") || toks[kw].is_name("class"))) ++kw;
            uses_of(toks, {0, kw > 0 && toks[kw - 1].is_name("async") ? kw - 1 : kw}, du.uses);
            if (kw + 1 >= end) break;
            if (node.parent >= 0) du.defs.insert(toks[kw + 1].text);
            std::size_t open = kw + 2;
            if (open < end && toks[open].is_op("(")) {
                int depth = 0;
                std::size_t close = open;
                for (; close < end; ++close) {
                    if (opens(toks[close])) ++depth;
                    else if (closes(toks[close]) && --depth == 0) break;
                }
                if (node.kind == StmtKind::def_) parameters(toks, open, close, du);
                else uses_of(toks, {open + 1, close}, du.uses);
                if (close + 1 < end) uses_of(toks, {close + 1, end}, du.uses);  // return annotation
            }
            break;
        }
        default: break;
    }
    return du;
}

}  // namespace scopy::cpg
