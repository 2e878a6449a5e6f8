#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ctc {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// log map evaluated too close to the rotation cut locus (angle ~ pi).
class NearSingularity : public Error {
 public:
  using Error::Error;
};

// Inconsistent inputs: missing pairs, gaps, bad config values.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& path, std::size_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKeyError : public Error {
 public:
  using Error::Error;
};

class EmptySetError : public Error {
 public:
  using Error::Error;
};

}  // namespace ctc
