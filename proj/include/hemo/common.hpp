#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace hemo {

/// Raised when an input violates a documented precondition or invariant.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a referenced file is missing or unreadable.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a structured text file does not follow its declared format.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Class index 1 is the positive (majority) class.
enum class Label : int { loss = 0, win = 1 };

inline constexpr int kClassCount = 2;

inline int class_index(Label l) { return static_cast<int>(l); }
inline Label label_from_index(int i) { return i == 1 ? Label::win : Label::loss; }
inline Label flip(Label l) { return l == Label::win ? Label::loss : Label::win; }

std::string_view to_string(Label l);
Label parse_label(std::string_view text);

std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);

/// Seed fan-out: mixes a list of integer components into a single 64-bit seed.
std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts);

/// Mixes a string component as well (sample ids, parameter names).
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::initializer_list<std::uint64_t> parts = {});

using Rng = std::mt19937_64;

}  // namespace hemo
