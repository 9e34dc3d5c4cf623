// SPDX-License-Identifier: Apache-2.0
//
// Bit-exact software emulation of the minifloat formats E4M3, E5M2, BF16
// and FP16. All arithmetic is carried out in double precision; every
// representable value of every supported format is exact in double, so
// encode/decode introduce exactly one rounding step and nothing else.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fp8lab {

enum class FormatName { e4m3, e5m2, bf16, fp16 };

// E4M3 reserves a single bit pattern per sign for NaN (exponent and
// mantissa all ones) and has no infinities; the other formats follow the
// usual IEEE layout for specials.
enum class NanPolicy { single_code, ieee };

enum class Rounding { nearest_even };

// What happens to a finite value with |v| > max_normal (and to ±inf):
// saturate clamps to ±max_normal, to_special produces the format's
// overflow special (±inf where the format has one, NaN for E4M3).
enum class Overflow { saturate, to_special };

struct FormatSpec {
  FormatName name;
  int exponent_bits;
  int mantissa_bits;
  int bias;
  bool has_infinity;
  NanPolicy nan_policy;
  double max_normal;
  double min_subnormal;

  int width() const { return 1 + exponent_bits + mantissa_bits; }
  // Smallest positive normal, 2^(1 - bias).
  double min_normal() const;

  static const FormatSpec& get(FormatName n);
};

const char* format_name_str(FormatName n);
FormatName format_name_from_str(const std::string& s);

struct CodePoint {
  std::uint16_t bits = 0;
  FormatName format = FormatName::e4m3;
};

// Round-to-nearest-even encoding of a double into the format's code space.
std::uint16_t encode_bits(double value, const FormatSpec& fmt,
                          Overflow overflow = Overflow::saturate);
double decode_bits(std::uint16_t bits, const FormatSpec& fmt);

CodePoint encode(double value, const FormatSpec& fmt,
                 Rounding rounding = Rounding::nearest_even,
                 Overflow overflow = Overflow::saturate);
double decode(CodePoint code);

// Quantization step at the given magnitude: the spacing between adjacent
// representable values in the binade containing |mag| (the subnormal
// quantum below min_normal, the top binade's step above max_normal).
double ulp_at(double mag, const FormatSpec& fmt);

std::uint16_t canonical_nan_bits(const FormatSpec& fmt);
std::uint16_t infinity_bits(const FormatSpec& fmt, bool negative);
std::uint16_t max_normal_bits(const FormatSpec& fmt, bool negative);

struct CodeEntry {
  CodePoint code;
  double value;
};

// All 2^width codes of the format. Finite entries first, sorted ascending
// by value (-0 ordered before +0), then specials: -inf, +inf, NaN codes in
// ascending bit order.
std::vector<CodeEntry> enumerate_values(const FormatSpec& fmt);

// CSV code table (bits_hex, sign, exponent_field, mantissa_field, value),
// one row per code in bit order. Backs the format-dump CLI subcommand.
std::string format_code_table_csv(const FormatSpec& fmt);

}  // namespace fp8lab
