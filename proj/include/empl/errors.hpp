#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace empl {

// Base of every error raised by the library. The CLI maps each subclass to a
// stable exit code (see cli.hpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Zero-norm vectors under cosine similarity and similar degenerate inputs.
class DegenerateInputError : public Error {
 public:
  using Error::Error;
};

class InvalidConfigError : public Error {
 public:
  using Error::Error;
};

class UnknownClassError : public Error {
 public:
  explicit UnknownClassError(std::uint32_t class_id)
      : Error("unknown class id " + std::to_string(class_id)), class_id_(class_id) {}
  std::uint32_t class_id() const noexcept { return class_id_; }

 private:
  std::uint32_t class_id_;
};

// Malformed episodes: empty unseen set, labels outside the observed pool.
class InvalidTaskError : public Error {
 public:
  using Error::Error;
};

// Malformed geometry inputs (dimension mismatch, missing modality, empty group).
class InvalidInputError : public Error {
 public:
  using Error::Error;
};

class NumericalFailureError : public Error {
 public:
  using Error::Error;
};

// A Langevin chain or the trainer produced a non-finite value.
class DivergenceError : public NumericalFailureError {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : NumericalFailureError(what + " (step " + std::to_string(step) + ")"), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

// Binary file does not match its declared layout.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

// Experiment config rejected; always names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(const std::string& key, const std::string& what)
      : Error("config key '" + key + "': " + what), key_(key) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

}  // namespace empl
