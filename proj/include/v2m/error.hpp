#pragma once

#include <stdexcept>
#include <string>

namespace v2m {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (chord strings, primer tokens, profile files).
class ParseError : public Error {
 public:
  using Error::Error;
};

// A record or checkpoint that does not satisfy its schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss during optimization.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace v2m
