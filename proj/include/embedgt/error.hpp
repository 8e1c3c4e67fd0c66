#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace embedgt {

/// Precondition violated by an argument (shape mismatch, out-of-range value).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Malformed input file. Carries the 1-based line number when known (0 otherwise).
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string &path, std::size_t line, const std::string &what)
      : std::runtime_error(format(path, line, what)), path_(path), line_(line) {}

  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] const std::string &path() const noexcept { return path_; }

private:
  static std::string format(const std::string &path, std::size_t line,
                            const std::string &what) {
    std::string out = path;
    if (line > 0)
      out += ":" + std::to_string(line);
    return out + ": " + what;
  }

  std::string path_;
  std::size_t line_;
};

/// Unrecoverable numerical failure (e.g. covariance factorization after jitter).
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace embedgt
