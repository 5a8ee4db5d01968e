#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>

#include "bips/errors.hpp"

namespace bips {

// Exact rational number with a 64-bit numerator and positive denominator,
// always kept in lowest terms. Arithmetic throws DomainError on overflow.
class Rational {
 public:
  constexpr Rational() = default;
  constexpr Rational(std::int64_t n) : num_(n), den_(1) {}  // NOLINT
  Rational(std::int64_t n, std::int64_t d) { assign(n, d); }

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }

  double to_double() const {
    return static_cast<double>(num_) / static_cast<double>(den_);
  }

  bool is_integer() const { return den_ == 1; }

  // Largest integer not greater than this value.
  std::int64_t floor() const {
    std::int64_t q = num_ / den_;
    if (num_ % den_ != 0 && num_ < 0) --q;
    return q;
  }

  friend Rational operator+(const Rational& a, const Rational& b) {
    return from_wide(static_cast<__int128>(a.num_) * b.den_ +
                         static_cast<__int128>(b.num_) * a.den_,
                     static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator-(const Rational& a, const Rational& b) {
    return from_wide(static_cast<__int128>(a.num_) * b.den_ -
                         static_cast<__int128>(b.num_) * a.den_,
                     static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator*(const Rational& a, const Rational& b) {
    return from_wide(static_cast<__int128>(a.num_) * b.num_,
                     static_cast<__int128>(a.den_) * b.den_);
  }
  friend Rational operator/(const Rational& a, const Rational& b) {
    if (b.num_ == 0) throw DomainError("rational division by zero");
    return from_wide(static_cast<__int128>(a.num_) * b.den_,
                     static_cast<__int128>(a.den_) * b.num_);
  }
  Rational operator-() const { return Rational(-num_, den_); }

  Rational& operator+=(const Rational& o) { return *this = *this + o; }
  Rational& operator-=(const Rational& o) { return *this = *this - o; }

  friend bool operator==(const Rational& a, const Rational& b) {
    return a.num_ == b.num_ && a.den_ == b.den_;
  }
  friend std::strong_ordering operator<=>(const Rational& a,
                                          const Rational& b) {
    const __int128 lhs = static_cast<__int128>(a.num_) * b.den_;
    const __int128 rhs = static_cast<__int128>(b.num_) * a.den_;
    return lhs <=> rhs;
  }

  // Canonical text: a terminating decimal when the denominator is of the
  // form 2^a 5^b, otherwise "p/q".
  std::string to_string() const {
    std::int64_t d = den_;
    int twos = 0, fives = 0;
    while (d % 2 == 0) d /= 2, ++twos;
    while (d % 5 == 0) d /= 5, ++fives;
    if (d != 1) return std::to_string(num_) + "/" + std::to_string(den_);
    const int digits = std::max(twos, fives);
    if (digits == 0) return std::to_string(num_);
    __int128 scaled = num_;
    for (int i = 0; i < digits - twos; ++i) scaled *= 2;
    for (int i = 0; i < digits - fives; ++i) scaled *= 5;
    // scaled / 10^digits == num_/den_
    const bool negative = scaled < 0;
    unsigned __int128 mag = negative ? -scaled : scaled;
    std::string digits_str;
    while (mag > 0) {
      digits_str.insert(digits_str.begin(), static_cast<char>('0' + mag % 10));
      mag /= 10;
    }
    while (static_cast<int>(digits_str.size()) <= digits)
      digits_str.insert(digits_str.begin(), '0');
    digits_str.insert(digits_str.end() - digits, '.');
    return negative ? "-" + digits_str : digits_str;
  }

  // Parses "-12", "3.25", ".5", "7/3". Returns nullopt on malformed text.
  static std::optional<Rational> parse(std::string_view s) {
    if (s.empty()) return std::nullopt;
    const auto slash = s.find('/');
    if (slash != std::string_view::npos) {
      auto n = parse(s.substr(0, slash));
      auto d = parse(s.substr(slash + 1));
      if (!n || !d || d->num_ == 0) return std::nullopt;
      try {
        return *n / *d;
      } catch (const DomainError&) {
        return std::nullopt;
      }
    }
    std::size_t i = 0;
    bool negative = false;
    if (s[0] == '-' || s[0] == '+') {
      negative = s[0] == '-';
      ++i;
    }
    __int128 mantissa = 0;
    std::int64_t scale = 1;
    bool seen_digit = false, seen_point = false;
    constexpr __int128 kLimit = static_cast<__int128>(INT64_MAX);
    for (; i < s.size(); ++i) {
      const char c = s[i];
      if (c == '.') {
        if (seen_point) return std::nullopt;
        seen_point = true;
        continue;
      }
      if (c < '0' || c > '9') return std::nullopt;
      seen_digit = true;
      mantissa = mantissa * 10 + (c - '0');
      if (seen_point) {
        if (scale > INT64_MAX / 10) return std::nullopt;
        scale *= 10;
      }
      if (mantissa > kLimit) return std::nullopt;
    }
    if (!seen_digit) return std::nullopt;
    return Rational(static_cast<std::int64_t>(negative ? -mantissa : mantissa),
                    scale);
  }

  friend std::ostream& operator<<(std::ostream& os, const Rational& r) {
    return os << r.to_string();
  }

 private:
  void assign(std::int64_t n, std::int64_t d) {
    if (d == 0) throw DomainError("rational with zero denominator");
    *this = from_wide(n, d);
  }

  static Rational from_wide(__int128 n, __int128 d) {
    if (d == 0) throw DomainError("rational with zero denominator");
    if (d < 0) n = -n, d = -d;
    __int128 a = n < 0 ? -n : n, b = d;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) n /= a, d /= a;
    constexpr __int128 kMax = static_cast<__int128>(INT64_MAX);
    if (n > kMax || n < -kMax || d > kMax)
      throw DomainError("rational overflow");
    Rational r;
    r.num_ = static_cast<std::int64_t>(n);
    r.den_ = static_cast<std::int64_t>(d);
    return r;
  }

  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace bips
