#pragma once

#include <stdexcept>
#include <string>

namespace bips {

// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define BIPS_DEFINE_ERROR(Name)          \
  class Name : public Error {            \
   public:                               \
    using Error::Error;                  \
  }

BIPS_DEFINE_ERROR(DuplicateId);
BIPS_DEFINE_ERROR(GridOverflow);
BIPS_DEFINE_ERROR(UnknownTemplate);
BIPS_DEFINE_ERROR(DanglingReference);
BIPS_DEFINE_ERROR(ConfigError);
BIPS_DEFINE_ERROR(ShapeError);
BIPS_DEFINE_ERROR(IoError);
BIPS_DEFINE_ERROR(FormatError);
BIPS_DEFINE_ERROR(NoViableQuestion);
BIPS_DEFINE_ERROR(InsufficientYield);
BIPS_DEFINE_ERROR(NonFiniteError);
BIPS_DEFINE_ERROR(GraphError);
BIPS_DEFINE_ERROR(DomainError);
BIPS_DEFINE_ERROR(GroupTooSmall);
BIPS_DEFINE_ERROR(MissingFragment);
BIPS_DEFINE_ERROR(DataError);
BIPS_DEFINE_ERROR(PolicyError);

#undef BIPS_DEFINE_ERROR

class SyntaxError : public Error {
 public:
  SyntaxError(int line, int column, const std::string& what)
      : Error("line " + std::to_string(line) + ", column " +
              std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  int line() const { return line_; }
  int column() const { return column_; }

 private:
  int line_;
  int column_;
};

}  // namespace bips
