#include "langxpand/hashing.hpp"

#include <sstream>

#include "langxpand/error.hpp"
#include "langxpand/random.hpp"

namespace langxpand {

std::uint64_t hash_words(std::span<const std::uint64_t> words, std::uint64_t seed) {
  std::uint64_t h = seed;
  for (std::uint64_t w : words) {
    for (int b = 0; b < 8; ++b) {
      h ^= (w >> (8 * b)) & 0xFF;
      h *= kFnvPrime;
    }
  }
  return h;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_ << ' ' << (has_spare_ ? 1 : 0) << ' ' << std::hexfloat << spare_;
  return os.str();
}

Rng Rng::deserialize(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  int spare_flag = 0;
  std::string spare;
  is >> rng.engine_ >> spare_flag >> spare;
  if (!is && !is.eof()) throw DataError("malformed RNG state");
  rng.has_spare_ = spare_flag != 0;
  rng.spare_ = std::strtod(spare.c_str(), nullptr);
  return rng;
}

}  // namespace langxpand
