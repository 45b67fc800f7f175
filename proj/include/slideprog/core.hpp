#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace slideprog {

/// Bad input or configuration. The CLI maps this to exit code 2.
inline constexpr const char* kVersion = "1.0.0";

class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A pipeline stage could not complete. The CLI maps this to exit code 3.
class StageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class PrognosisLabel : std::uint8_t { good = 0, bad = 1 };

inline std::string_view to_string(PrognosisLabel label) {
  return label == PrognosisLabel::bad ? "bad" : "good";
}

inline PrognosisLabel parse_label(std::string_view text) {
  if (text == "good") return PrognosisLabel::good;
  if (text == "bad") return PrognosisLabel::bad;
  throw ValidationError("unknown prognosis label '" + std::string(text) + "'");
}

inline int as_int(PrognosisLabel label) { return static_cast<int>(label); }

/// Pyramid levels. Scaling relative to 40x is exact rational arithmetic.
enum class Magnification : std::uint8_t { x2_5, x10, x20, x40 };

inline constexpr Magnification kAllLevels[] = {Magnification::x40, Magnification::x20,
                                               Magnification::x10, Magnification::x2_5};

/// Magnification expressed as numerator/denominator (2.5 = 5/2).
struct Ratio {
  std::int64_t num;
  std::int64_t den;
};

inline constexpr Ratio ratio_of(Magnification m) {
  switch (m) {
    case Magnification::x2_5: return {5, 2};
    case Magnification::x10: return {10, 1};
    case Magnification::x20: return {20, 1};
    case Magnification::x40: return {40, 1};
  }
  return {0, 1};
}

inline constexpr double value_of(Magnification m) {
  const Ratio r = ratio_of(m);
  return static_cast<double>(r.num) / static_cast<double>(r.den);
}

inline Magnification magnification_from(double value) {
  if (value == 2.5) return Magnification::x2_5;
  if (value == 10.0) return Magnification::x10;
  if (value == 20.0) return Magnification::x20;
  if (value == 40.0) return Magnification::x40;
  throw ValidationError("level not available: magnification " + std::to_string(value));
}

/// "2.5", "10", "20", "40"
inline std::string magnification_label(Magnification m) {
  switch (m) {
    case Magnification::x2_5: return "2.5";
    case Magnification::x10: return "10";
    case Magnification::x20: return "20";
    case Magnification::x40: return "40";
  }
  return "?";
}

inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

/// round_half_up(value * num / den) in exact integer arithmetic.
inline std::int64_t scale_round(std::int64_t value, std::int64_t num, std::int64_t den) {
  return floor_div(2 * value * num + den, 2 * den);
}

/// Rescale an integer pixel coordinate between two magnifications (round half up).
inline std::int64_t rescale(std::int64_t value, Magnification from, Magnification to) {
  const Ratio f = ratio_of(from);
  const Ratio t = ratio_of(to);
  return scale_round(value, t.num * f.den, t.den * f.num);
}

/// Level dimension rule: dim(m) = round(dim(40x) * m / 40).
inline std::int64_t level_dimension(std::int64_t dim_40x, Magnification m) {
  return rescale(dim_40x, Magnification::x40, m);
}

// Deterministic random helpers. The engine is std::mt19937_64; the mappings to
// floating point live here so that streams are identical across standard libraries.

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derive an independent stream seed from a parent seed and a tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  return splitmix64(splitmix64(seed) ^ splitmix64(tag + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag) {
  return derive_seed(seed, fnv1a(tag));
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t bits() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n) by rejection (unbiased).
  std::uint64_t below(std::uint64_t n) {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const std::uint64_t j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace slideprog
