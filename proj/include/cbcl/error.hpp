#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace cbcl {

// Malformed or inconsistent input data. Maps to exit status 2 in the CLI.
class DataError : public std::runtime_error {
 public:
  enum class Kind {
    kMalformedHeader,
    kDimMismatch,
    kUnknownLabel,
    kNonFinite,
    kTruncated,
    kIo,
    kInvalidArgument,
  };

  DataError(Kind kind, const std::string& what,
            std::optional<std::uint64_t> byte_offset = std::nullopt)
      : std::runtime_error(what), kind_(kind), byte_offset_(byte_offset) {}

  Kind kind() const noexcept { return kind_; }
  std::optional<std::uint64_t> byte_offset() const noexcept { return byte_offset_; }

 private:
  Kind kind_;
  std::optional<std::uint64_t> byte_offset_;
};

// Bad command-line usage. Exit status 1.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A violated internal invariant. Exit status 3.
class InvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline void require(bool ok, const std::string& what,
                    DataError::Kind kind = DataError::Kind::kInvalidArgument) {
  if (!ok) throw DataError(kind, what);
}

}  // namespace cbcl
