#pragma once

// Statement-level front end for Python source: a tokenizer that understands
// strings, brackets, continuations and indentation, and a parser that builds
// a tree with one node per simple statement or compound-statement header.
// Expressions are kept as token lists; nothing below statement level is
// parsed into a tree.

#include "scopy/ingest.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace scopy::py {

using ingest::LineRange;

enum class TokenKind : std::uint8_t { name, number, string, op };

struct Token {
    TokenKind kind;
    std::string text;
    int line = 0;      // 1-based line of the first character
    int end_line = 0;  // line of the last character (strings may span lines)
    int column = 0;    // 1-based
    std::size_t begin = 0;
    std::size_t end = 0;  // byte offsets into the source, half-open

    bool is(TokenKind k, std::string_view t) const { return kind == k && text == t; }
    bool is_op(std::string_view t) const { return is(TokenKind::op, t); }
    bool is_name(std::string_view t) const { return is(TokenKind::name, t); }
};

/// Reserved words; soft keywords (match, case, type, _) are not included.
bool is_keyword(std::string_view word);

enum class StmtKind : std::uint8_t {
    module,
    simple,
    if_,
    elif_,
    else_,
    while_,
    for_,
    try_,
    except_,
    finally_,
    with_,
    def_,
    class_,
    match_,
    case_,
};

std::string_view to_string(StmtKind k);

/// Clause headers continue the statement before them (elif/else/except/finally).
inline bool is_clause(StmtKind k) {
    return k == StmtKind::elif_ || k == StmtKind::else_ || k == StmtKind::except_ ||
           k == StmtKind::finally_;
}

struct Statement {
    StmtKind kind = StmtKind::simple;
    std::string code;            // exact source text; headers end at their ':'
    LineRange span;              // lines of `code`
    LineRange extent;            // span plus every nested statement
    std::vector<Token> tokens;   // tokens of `code` (decorators included for def/class)
    std::string name;            // def/class name
    bool is_async = false;
    bool docstring = false;      // bare string-literal expression statement
    std::vector<Statement> children;  // body statements, then clause headers in order
};

/// Tokens of an arbitrary fragment such as one diff line. Never throws:
/// unbalanced brackets are ignored and an unterminated string runs to the end
/// of its line.
std::vector<Token> tokenize_fragment(std::string_view text);

/// Parses a whole module. Throws SyntaxError with line/column.
Statement parse_module(std::string_view source);

/// A function-level analysis unit: a def that is not nested inside another def.
struct UnitLocation {
    std::string name;
    LineRange extent;
    const Statement* stmt = nullptr;
};

std::vector<UnitLocation> function_units(const Statement& module);

/// Statements that belong to the module unit: everything outside function
/// units, minus bare docstrings at module or class level.
struct ModuleMembers {
    std::vector<const Statement*> top;  // direct members of the module, in source order
    std::vector<const Statement*> all;  // every member at any depth, in source order

    bool contains(const Statement* s) const;
};

ModuleMembers module_members(const Statement& module);

/// Unit spans of both versions matched by (name, occurrence) for change selection.
std::vector<ingest::UnitSpans> discover_unit_spans(std::string_view pre_source,
                                                   std::string_view post_source);

}  // namespace scopy::py
