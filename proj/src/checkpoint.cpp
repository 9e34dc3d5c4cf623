// SPDX-License-Identifier: Apache-2.0

#include "fp8lab/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fp8lab {

namespace {

constexpr char kMagic[8] = {'F', '8', 'L', 'A', 'B', 'C', 'K', '1'};

CheckpointDtype dtype_for_format(FormatName f) {
  switch (f) {
    case FormatName::fp16: return CheckpointDtype::fp16;
    case FormatName::bf16: return CheckpointDtype::bf16;
    case FormatName::e4m3: return CheckpointDtype::e4m3;
    case FormatName::e5m2: return CheckpointDtype::e5m2;
  }
  throw std::invalid_argument("bad format");
}

FormatName format_for_dtype(CheckpointDtype d) {
  switch (d) {
    case CheckpointDtype::fp16: return FormatName::fp16;
    case CheckpointDtype::bf16: return FormatName::bf16;
    case CheckpointDtype::e4m3: return FormatName::e4m3;
    case CheckpointDtype::e5m2: return FormatName::e5m2;
    default: throw std::invalid_argument("record is not a code tensor");
  }
}

bool is_code_dtype(CheckpointDtype d) {
  return d == CheckpointDtype::fp16 || d == CheckpointDtype::bf16 ||
         d == CheckpointDtype::e4m3 || d == CheckpointDtype::e5m2;
}

bool wide_codes(CheckpointDtype d) {
  return d == CheckpointDtype::fp16 || d == CheckpointDtype::bf16;
}

template <typename T>
void put(std::string& out, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    for (std::size_t i = sizeof(T); i-- > 0;)
      out.push_back(char(bytes[i]));
  } else {
    const char* p = reinterpret_cast<const char*>(&v);
    out.append(p, sizeof(T));
  }
}

class Parser {
 public:
  explicit Parser(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > data_.size())
      throw std::runtime_error("checkpoint: truncated file");
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    if constexpr (sizeof(T) > 1) {
      if (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        v = std::bit_cast<T>(bytes);
      }
    }
    return v;
  }

  std::string get_bytes(std::size_t n) {
    if (pos_ + n > data_.size())
      throw std::runtime_error("checkpoint: truncated file");
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool done() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::size_t pos_ = 0;
};

std::size_t record_count(const CheckpointRecord& r) {
  std::size_t n = 1;
  for (auto d : r.dims) n *= d;
  return n;
}

}  // namespace

CheckpointRecord CheckpointRecord::tensor(std::string name, const Tensor& t) {
  CheckpointRecord r;
  r.name = std::move(name);
  r.dtype = CheckpointDtype::f64;
  r.dims = t.shape;
  r.f64 = t.data;
  return r;
}

CheckpointRecord CheckpointRecord::scaled(std::string name,
                                          const ScaledTensor& t) {
  CheckpointRecord r;
  r.name = std::move(name);
  r.dtype = dtype_for_format(t.format);
  r.dims = t.shape;
  r.codes = t.codes;
  r.scales = t.scales;
  return r;
}

CheckpointRecord CheckpointRecord::scalar_u64(std::string name,
                                              std::uint64_t v) {
  CheckpointRecord r;
  r.name = std::move(name);
  r.dtype = CheckpointDtype::u64;
  r.dims = {1};
  r.u64 = {v};
  return r;
}

CheckpointRecord CheckpointRecord::vector_f64(std::string name,
                                              const std::vector<double>& v) {
  CheckpointRecord r;
  r.name = std::move(name);
  r.dtype = CheckpointDtype::f64;
  r.dims = {v.size()};
  r.f64 = v;
  return r;
}

Tensor CheckpointRecord::as_tensor() const {
  if (dtype != CheckpointDtype::f64)
    throw std::invalid_argument("record " + name + " is not f64");
  Tensor t;
  t.shape = dims;
  t.data = f64;
  return t;
}

ScaledTensor CheckpointRecord::as_scaled() const {
  ScaledTensor t;
  t.format = format_for_dtype(dtype);
  t.shape = dims;
  t.codes = codes;
  t.scales = scales;
  return t;
}

std::uint64_t CheckpointRecord::as_u64() const {
  if (dtype != CheckpointDtype::u64 || u64.size() != 1)
    throw std::invalid_argument("record " + name + " is not a u64 scalar");
  return u64[0];
}

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const CheckpointRecord& Checkpoint::require(const std::string& name) const {
  const CheckpointRecord* r = find(name);
  if (!r) throw std::runtime_error("checkpoint: missing record " + name);
  return *r;
}

void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, 1);
  put<std::uint32_t>(out, ck.flags);
  put<std::uint64_t>(out, ck.records.size());
  for (const auto& r : ck.records) {
    put<std::uint32_t>(out, std::uint32_t(r.name.size()));
    out += r.name;
    put<std::uint32_t>(out, std::uint32_t(r.dtype));
    put<std::uint32_t>(out, std::uint32_t(r.dims.size()));
    for (auto d : r.dims) put<std::uint64_t>(out, d);
    put<std::uint64_t>(out, r.scales.size());
    for (double s : r.scales) put<double>(out, s);
    const std::size_t n = record_count(r);
    if (r.dtype == CheckpointDtype::f64) {
      if (r.f64.size() != n) throw std::invalid_argument("f64 payload size");
      for (double v : r.f64) put<double>(out, v);
    } else if (r.dtype == CheckpointDtype::u64) {
      if (r.u64.size() != n) throw std::invalid_argument("u64 payload size");
      for (auto v : r.u64) put<std::uint64_t>(out, v);
    } else {
      if (r.codes.size() != n) throw std::invalid_argument("code payload size");
      if (wide_codes(r.dtype)) {
        for (auto c : r.codes) put<std::uint16_t>(out, c);
      } else {
        for (auto c : r.codes) put<std::uint8_t>(out, std::uint8_t(c));
      }
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(out.data(), std::streamsize(out.size()));
  if (!f) throw std::runtime_error("short write to " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  Parser p(std::move(data));
  const std::string magic = p.get_bytes(sizeof kMagic);
  if (std::memcmp(magic.data(), kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  const auto version = p.get<std::uint32_t>();
  if (version != 1) throw std::runtime_error("checkpoint: unknown version");
  Checkpoint ck;
  ck.flags = p.get<std::uint32_t>();
  const auto nrec = p.get<std::uint64_t>();
  ck.records.reserve(nrec);
  for (std::uint64_t i = 0; i < nrec; ++i) {
    CheckpointRecord r;
    const auto name_len = p.get<std::uint32_t>();
    r.name = p.get_bytes(name_len);
    r.dtype = CheckpointDtype(p.get<std::uint32_t>());
    const auto ndim = p.get<std::uint32_t>();
    r.dims.resize(ndim);
    for (auto& d : r.dims) d = std::size_t(p.get<std::uint64_t>());
    const auto nscales = p.get<std::uint64_t>();
    r.scales.resize(nscales);
    for (auto& s : r.scales) s = p.get<double>();
    const std::size_t n = record_count(r);
    if (r.dtype == CheckpointDtype::f64) {
      r.f64.resize(n);
      for (auto& v : r.f64) v = p.get<double>();
    } else if (r.dtype == CheckpointDtype::u64) {
      r.u64.resize(n);
      for (auto& v : r.u64) v = p.get<std::uint64_t>();
    } else if (is_code_dtype(r.dtype)) {
      r.codes.resize(n);
      if (wide_codes(r.dtype)) {
        for (auto& c : r.codes) c = p.get<std::uint16_t>();
      } else {
        for (auto& c : r.codes) c = p.get<std::uint8_t>();
      }
    } else {
      throw std::runtime_error("checkpoint: unknown dtype");
    }
    ck.records.push_back(std::move(r));
  }
  return ck;
}

}  // namespace fp8lab
