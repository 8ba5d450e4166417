#include "hemo/common.hpp"

namespace hemo {

std::string_view to_string(Label l) { return l == Label::win ? "win" : "loss"; }

Label parse_label(std::string_view text) {
  if (text == "win") return Label::win;
  if (text == "loss") return Label::loss;
  throw ParseError("unknown label '" + std::string(text) + "'");
}

std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x6a09e667f3bcc909ULL;
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view tag, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = derive_seed({base, fnv1a64(tag)});
  for (auto p : parts) h = splitmix64(h ^ splitmix64(p));
  return h;
}

}  // namespace hemo
