#pragma once

#include <stdexcept>
#include <string>

namespace ctreg {

/// Thrown when a time lies outside a trajectory's valid evaluation interval.
class DomainError : public std::runtime_error {
public:
  DomainError(const std::string& what, double t, double begin, double end)
      : std::runtime_error(what), t_(t), begin_(begin), end_(end) {}

  double time() const { return t_; }
  double begin() const { return begin_; }
  double end() const { return end_; }

private:
  double t_;
  double begin_;
  double end_;
};

/// Malformed or inconsistent content in an on-disk file.
class FileFormatError : public std::runtime_error {
public:
  FileFormatError(std::string path, int line, std::string reason);

  const std::string& path() const { return path_; }
  int line() const { return line_; }
  const std::string& reason() const { return reason_; }

private:
  std::string path_;
  int line_;
  std::string reason_;
};

}  // namespace ctreg
