// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/formats.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fp8lab {

namespace {

FormatSpec make_spec(FormatName name, int eb, int mb, int bias, bool has_inf,
                     NanPolicy nan) {
  FormatSpec s{name, eb, mb, bias, has_inf, nan, 0.0, 0.0};
  const int emax_field = (1 << eb) - 1;
  // Top finite code: with IEEE specials the all-ones exponent field is
  // reserved, with a single NaN code only mantissa all-ones is lost.
  if (nan == NanPolicy::ieee) {
    s.max_normal = std::ldexp(double((1 << (mb + 1)) - 1),
                              (emax_field - 1) - bias - mb);
  } else {
    s.max_normal =
        std::ldexp(double((1 << (mb + 1)) - 2), emax_field - bias - mb);
  }
  s.min_subnormal = std::ldexp(1.0, 1 - bias - mb);
  return s;
}

const FormatSpec kE4M3 = make_spec(FormatName::e4m3, 4, 3, 7, false,
                                   NanPolicy::single_code);
const FormatSpec kE5M2 = make_spec(FormatName::e5m2, 5, 2, 15, true,
                                   NanPolicy::ieee);
const FormatSpec kBF16 = make_spec(FormatName::bf16, 8, 7, 127, true,
                                   NanPolicy::ieee);
const FormatSpec kFP16 = make_spec(FormatName::fp16, 5, 10, 15, true,
                                   NanPolicy::ieee);

std::uint16_t overflow_bits(const FormatSpec& fmt, bool negative,
                            Overflow overflow) {
  if (overflow == Overflow::saturate) return max_normal_bits(fmt, negative);
  if (fmt.has_infinity) return infinity_bits(fmt, negative);
  return canonical_nan_bits(fmt);
}

}  // namespace

double FormatSpec::min_normal() const { return std::ldexp(1.0, 1 - bias); }

const FormatSpec& FormatSpec::get(FormatName n) {
  switch (n) {
    case FormatName::e4m3: return kE4M3;
    case FormatName::e5m2: return kE5M2;
    case FormatName::bf16: return kBF16;
    case FormatName::fp16: return kFP16;
  }
  throw std::invalid_argument("unknown format");
}

const char* format_name_str(FormatName n) {
  switch (n) {
    case FormatName::e4m3: return "e4m3";
    case FormatName::e5m2: return "e5m2";
    case FormatName::bf16: return "bf16";
    case FormatName::fp16: return "fp16";
  }
  return "?";
}

FormatName format_name_from_str(const std::string& s) {
  if (s == "e4m3" || s == "E4M3") return FormatName::e4m3;
  if (s == "e5m2" || s == "E5M2") return FormatName::e5m2;
  if (s == "bf16" || s == "BF16") return FormatName::bf16;
  if (s == "fp16" || s == "FP16") return FormatName::fp16;
  throw std::invalid_argument("unknown format name: " + s);
}

std::uint16_t canonical_nan_bits(const FormatSpec& fmt) {
  const int emax_field = (1 << fmt.exponent_bits) - 1;
  if (fmt.nan_policy == NanPolicy::single_code) {
    // exponent and mantissa all ones, sign clear
    return std::uint16_t((emax_field << fmt.mantissa_bits) |
                         ((1 << fmt.mantissa_bits) - 1));
  }
  // quiet-NaN style: top mantissa bit set
  return std::uint16_t((emax_field << fmt.mantissa_bits) |
                       (1 << (fmt.mantissa_bits - 1)));
}

std::uint16_t infinity_bits(const FormatSpec& fmt, bool negative) {
  if (!fmt.has_infinity) throw std::invalid_argument("format has no infinity");
  const int emax_field = (1 << fmt.exponent_bits) - 1;
  std::uint16_t b = std::uint16_t(emax_field << fmt.mantissa_bits);
  if (negative) b |= std::uint16_t(1u << (fmt.width() - 1));
  return b;
}

std::uint16_t max_normal_bits(const FormatSpec& fmt, bool negative) {
  std::uint16_t b;
  const int emax_field = (1 << fmt.exponent_bits) - 1;
  if (fmt.nan_policy == NanPolicy::ieee) {
    b = std::uint16_t(((emax_field - 1) << fmt.mantissa_bits) |
                      ((1 << fmt.mantissa_bits) - 1));
  } else {
    b = std::uint16_t((emax_field << fmt.mantissa_bits) |
                      ((1 << fmt.mantissa_bits) - 2));
  }
  if (negative) b |= std::uint16_t(1u << (fmt.width() - 1));
  return b;
}

std::uint16_t encode_bits(double value, const FormatSpec& fmt,
                          Overflow overflow) {
  const std::uint64_t db = std::bit_cast<std::uint64_t>(value);
  const std::uint16_t sign =
      std::uint16_t((db >> 63) << (fmt.width() - 1));
  const int e_raw = int((db >> 52) & 0x7ff);
  const std::uint64_t m_raw = db & ((std::uint64_t(1) << 52) - 1);

  if (e_raw == 0x7ff) {
    if (m_raw != 0) return canonical_nan_bits(fmt);
    return overflow_bits(fmt, sign != 0, overflow);  // ±inf
  }
  const double a = std::fabs(value);
  if (a == 0.0) return sign;
  if (a > fmt.max_normal) return overflow_bits(fmt, sign != 0, overflow);
  // Subnormal doubles sit far below every supported format's underflow
  // threshold (min_subnormal/2 >= 2^-134).
  if (e_raw == 0) return sign;

  const int E = e_raw - 1023;
  const std::uint64_t M = (std::uint64_t(1) << 52) | m_raw;

  // Quantum of the target grid at this magnitude: 2^(max(E, e_min) - p).
  const int e_min = 1 - fmt.bias;
  const int q_exp = std::max(E, e_min) - fmt.mantissa_bits;
  // steps = |v| / 2^q_exp = M * 2^(E - 52 - q_exp); round to integer RNE.
  const int drop = 52 - (E - q_exp);
  std::uint64_t steps;
  if (drop >= 54) {
    steps = 0;  // below half of the smallest quantum
  } else {
    steps = M >> drop;
    const std::uint64_t rem = M & ((std::uint64_t(1) << drop) - 1);
    const std::uint64_t half = std::uint64_t(1) << (drop - 1);
    if (rem > half || (rem == half && (steps & 1))) ++steps;
  }
  if (steps == 0) return sign;

  const std::uint64_t one = std::uint64_t(1) << fmt.mantissa_bits;
  int binade = q_exp + fmt.mantissa_bits;  // == max(E, e_min)
  if (steps == 2 * one) {                  // mantissa overflowed the binade
    steps = one;
    ++binade;
  }
  int e_field;
  std::uint64_t m_field;
  if (steps >= one) {
    e_field = binade + fmt.bias;
    m_field = steps - one;
  } else {
    e_field = 0;  // subnormal
    m_field = steps;
  }
  return std::uint16_t(sign | std::uint16_t(e_field << fmt.mantissa_bits) |
                       std::uint16_t(m_field));
}

double decode_bits(std::uint16_t bits, const FormatSpec& fmt) {
  const int w = fmt.width();
  if (w < 16 && (bits >> w) != 0)
    throw std::invalid_argument("code bits exceed format width");
  const int sign = (bits >> (w - 1)) & 1;
  const int e_field = (bits >> fmt.mantissa_bits) &
                      ((1 << fmt.exponent_bits) - 1);
  const std::uint32_t m_field = bits & ((1u << fmt.mantissa_bits) - 1);
  const int emax_field = (1 << fmt.exponent_bits) - 1;
  const std::uint32_t m_all = (1u << fmt.mantissa_bits) - 1;

  if (fmt.nan_policy == NanPolicy::single_code) {
    if (e_field == emax_field && m_field == m_all)
      return std::numeric_limits<double>::quiet_NaN();
  } else if (e_field == emax_field) {
    if (m_field == 0)
      return sign ? -std::numeric_limits<double>::infinity()
                  : std::numeric_limits<double>::infinity();
    return std::numeric_limits<double>::quiet_NaN();
  }

  double mag;
  if (e_field == 0) {
    mag = std::ldexp(double(m_field), 1 - fmt.bias - fmt.mantissa_bits);
  } else {
    mag = std::ldexp(double((1u << fmt.mantissa_bits) | m_field),
                     e_field - fmt.bias - fmt.mantissa_bits);
  }
  return sign ? -mag : mag;
}

CodePoint encode(double value, const FormatSpec& fmt, Rounding,
                 Overflow overflow) {
  return CodePoint{encode_bits(value, fmt, overflow), fmt.name};
}

double decode(CodePoint code) {
  return decode_bits(code.bits, FormatSpec::get(code.format));
}

double ulp_at(double mag, const FormatSpec& fmt) {
  mag = std::fabs(mag);
  if (std::isnan(mag)) return std::numeric_limits<double>::quiet_NaN();
  if (mag < fmt.min_normal()) return fmt.min_subnormal;
  if (mag > fmt.max_normal) mag = fmt.max_normal;
  return std::ldexp(1.0, std::ilogb(mag) - fmt.mantissa_bits);
}

std::vector<CodeEntry> enumerate_values(const FormatSpec& fmt) {
  const std::uint32_t n = 1u << fmt.width();
  std::vector<CodeEntry> finite;
  std::vector<CodeEntry> neg_inf, pos_inf, nans;
  finite.reserve(n);
  for (std::uint32_t b = 0; b < n; ++b) {
    CodeEntry e{CodePoint{std::uint16_t(b), fmt.name},
                decode_bits(std::uint16_t(b), fmt)};
    if (std::isnan(e.value)) {
      nans.push_back(e);
    } else if (std::isinf(e.value)) {
      (e.value < 0 ? neg_inf : pos_inf).push_back(e);
    } else {
      finite.push_back(e);
    }
  }
  std::stable_sort(finite.begin(), finite.end(),
                   [w = fmt.width()](const CodeEntry& a, const CodeEntry& b) {
                     if (a.value != b.value) return a.value < b.value;
                     // order -0 before +0
                     return (a.code.bits >> (w - 1)) > (b.code.bits >> (w - 1));
                   });
  std::vector<CodeEntry> out = std::move(finite);
  out.insert(out.end(), neg_inf.begin(), neg_inf.end());
  out.insert(out.end(), pos_inf.begin(), pos_inf.end());
  out.insert(out.end(), nans.begin(), nans.end());
  return out;
}

std::string format_code_table_csv(const FormatSpec& fmt) {
  std::string csv = "bits_hex,sign,exponent_field,mantissa_field,value\n";
  const std::uint32_t n = 1u << fmt.width();
  char buf[64];
  for (std::uint32_t b = 0; b < n; ++b) {
    const int sign = int(b >> (fmt.width() - 1)) & 1;
    const int e_field = int(b >> fmt.mantissa_bits) &
                        ((1 << fmt.exponent_bits) - 1);
    const int m_field = int(b) & ((1 << fmt.mantissa_bits) - 1);
    const double v = decode_bits(std::uint16_t(b), fmt);
    std::snprintf(buf, sizeof buf, fmt.width() == 8 ? "0x%02x" : "0x%04x", b);
    csv += buf;
    csv += ',';
    csv += std::to_string(sign);
    csv += ',';
    csv += std::to_string(e_field);
    csv += ',';
    csv += std::to_string(m_field);
    csv += ',';
    if (std::isnan(v)) {
      csv += "nan";
    } else if (std::isinf(v)) {
      csv += v < 0 ? "-inf" : "inf";
    } else {
      auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
      (void)ec;
      csv.append(buf, p);
    }
    csv += '\n';
  }
  return csv;
}

}  // namespace fp8lab
