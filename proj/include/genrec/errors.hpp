#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace genrec {

/// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A token sequence has the wrong length or a token outside [0, X).
class MalformedSequence : public Error {
 public:
  using Error::Error;
};

/// Two items share a token sequence in a strict map.
class CollisionError : public Error {
 public:
  CollisionError(std::size_t first_item, std::size_t second_item)
      : Error("items " + std::to_string(first_item) + " and " +
              std::to_string(second_item) + " map to the same token sequence"),
        first_item_(first_item),
        second_item_(second_item) {}

  std::size_t first_item() const noexcept { return first_item_; }
  std::size_t second_item() const noexcept { return second_item_; }

 private:
  std::size_t first_item_;
  std::size_t second_item_;
};

/// Strict map whose item count differs from X^k.
class CoverageError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class EmptyInput : public Error {
 public:
  using Error::Error;
};

/// Not enough distinct points to seed the requested number of centroids.
class DegenerateInput : public Error {
 public:
  using Error::Error;
};

class SubspaceSplitError : public Error {
 public:
  using Error::Error;
};

/// Operation requires the other logit model form.
class FormError : public Error {
 public:
  using Error::Error;
};

class DivergenceError : public Error {
 public:
  using Error::Error;
};

/// Unreadable or inconsistent serialized artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace genrec
