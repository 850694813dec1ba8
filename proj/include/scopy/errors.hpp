#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace scopy {

/// Base for every error raised by the toolkit. `code()` is the stable,
/// machine-readable reason used in skip logs and HTTP error bodies.
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(what), code_(std::move(code)) {}

    const std::string& code() const noexcept { return code_; }

private:
    std::string code_;
};

#define SCOPY_DEFINE_ERROR(Name)                                                 \
    class Name : public Error {                                                  \
    public:                                                                      \
        explicit Name(const std::string& what) : Error(#Name, what) {}           \
    }

SCOPY_DEFINE_ERROR(MalformedDiff);
SCOPY_DEFINE_ERROR(NotACommitUrl);
SCOPY_DEFINE_ERROR(NotFound);
SCOPY_DEFINE_ERROR(TransportError);
SCOPY_DEFINE_ERROR(AlignmentConflict);
SCOPY_DEFINE_ERROR(NoChange);
SCOPY_DEFINE_ERROR(EmptyGraph);
SCOPY_DEFINE_ERROR(BadConfig);
SCOPY_DEFINE_ERROR(ShapeMismatch);
SCOPY_DEFINE_ERROR(UnlabeledSample);
SCOPY_DEFINE_ERROR(EmptyCorpus);
SCOPY_DEFINE_ERROR(ConflictingWrite);
SCOPY_DEFINE_ERROR(UnknownAnnotator);
SCOPY_DEFINE_ERROR(NoSourceFiles);

#undef SCOPY_DEFINE_ERROR

/// Python source could not be parsed. Line and column are 1-based.
class SyntaxError : public Error {
public:
    SyntaxError(const std::string& msg, int line, int column)
        : Error("SyntaxError", msg + " at line " + std::to_string(line) + ", column " +
                                   std::to_string(column)),
          line_(line), column_(column) {}

    int line() const noexcept { return line_; }
    int column() const noexcept { return column_; }

private:
    int line_;
    int column_;
};

}  // namespace scopy
