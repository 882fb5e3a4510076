// SPDX-License-Identifier: Apache-2.0
#include "mpgd/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>

#include "mpgd/error.hpp"

namespace mpgd {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw Error("tensor: zero dimension in shape");
    n *= d;
  }
  return n;
}

void write_u32_le(std::ofstream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                        static_cast<unsigned char>((v >> 8) & 0xFF),
                        static_cast<unsigned char>((v >> 16) & 0xFF),
                        static_cast<unsigned char>((v >> 24) & 0xFF)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32_le(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw Error("tensor: truncated file");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64_le(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xFF);
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64_le(std::ifstream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  if (!in) throw Error("tensor: truncated file");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

constexpr char kMagic[4] = {'M', 'P', 'G', 'T'};

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != data_.size())
    throw Error("tensor: shape/data size mismatch");
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

Tensor Tensor::full(std::vector<std::size_t> shape, double v) {
  Tensor t(std::move(shape));
  for (double& x : t.data_) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::max_value() const {
  if (data_.empty()) throw Error("tensor: max of empty tensor");
  double m = data_[0];
  for (double v : data_)
    if (v > m) m = v;
  return m;
}

double Tensor::min_value() const {
  if (data_.empty()) throw Error("tensor: min of empty tensor");
  double m = data_[0];
  for (double v : data_)
    if (v < m) m = v;
  return m;
}

Tensor Tensor::reshaped(std::vector<std::size_t> new_shape) const {
  if (shape_product(new_shape) != data_.size())
    throw Error("tensor: reshape changes element count");
  return Tensor(std::move(new_shape), data_);
}

void Tensor::save(const std::filesystem::path& file) const {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw Error("tensor: cannot open for writing: " + file.string());
  out.write(kMagic, 4);
  write_u32_le(out, static_cast<std::uint32_t>(rank()));
  for (std::size_t d : shape_) write_u32_le(out, static_cast<std::uint32_t>(d));
  for (double v : data_) write_f64_le(out, v);
  if (!out) throw Error("tensor: write failed: " + file.string());
}

Tensor Tensor::load(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw Error("tensor: cannot open for reading: " + file.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0)
    throw Error("tensor: bad magic bytes in " + file.string());
  const std::uint32_t rank = read_u32_le(in);
  if (rank > 8) throw Error("tensor: implausible rank in " + file.string());
  std::vector<std::size_t> shape(rank);
  for (auto& d : shape) d = read_u32_le(in);
  const std::size_t n = shape_product(shape);
  std::vector<double> data(n);
  for (auto& v : data) v = read_f64_le(in);
  // Trailing garbage means the file is not what we wrote.
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) throw Error("tensor: trailing bytes in " + file.string());
  Tensor t(std::move(shape), std::move(data));
  if (!t.all_finite()) throw Error("tensor: non-finite values in " + file.string());
  return t;
}

bool operator==(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && a.values() == b.values();
}

}  // namespace mpgd
