#pragma once

// 2-bit ternary storage. Element i of the row-major flattening occupies bits
// 2*(i%4) .. 2*(i%4)+1 of byte i/4. Codes: 00 -> 0, 01 -> +1, 10 -> -1;
// 11 is invalid.

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "ternarylm/error.hpp"

namespace ternarylm {

class PackedTernaryMatrix {
 public:
  static constexpr std::uint8_t code_zero = 0b00;
  static constexpr std::uint8_t code_pos = 0b01;
  static constexpr std::uint8_t code_neg = 0b10;
  static constexpr std::uint8_t code_invalid = 0b11;

  PackedTernaryMatrix() = default;

  /// Validates shape, byte length, code set and zero tail padding.
  PackedTernaryMatrix(std::uint32_t rows, std::uint32_t cols, float alpha, std::vector<std::uint8_t> codes)
      : rows_(rows), cols_(cols), alpha_(alpha), codes_(std::move(codes)) {
    if (rows_ == 0 || cols_ == 0) throw DimensionError("packed matrix must be non-empty");
    if (codes_.size() != byte_length(rows_, cols_)) {
      throw DimensionError("packed matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) + " needs " +
                           std::to_string(byte_length(rows_, cols_)) + " bytes, got " +
                           std::to_string(codes_.size()));
    }
    const std::size_t n = size();
    for (std::size_t i = 0; i < n; ++i) {
      if (code(i) == code_invalid) {
        throw InvariantError("corrupt ternary code 11 at element " + std::to_string(i));
      }
    }
    for (std::size_t i = n; i < codes_.size() * 4; ++i) {
      if (((codes_[i / 4] >> (2 * (i % 4))) & 0b11) != 0) {
        throw InvariantError("non-zero padding bits in packed matrix");
      }
    }
  }

  static std::size_t byte_length(std::size_t rows, std::size_t cols) { return (rows * cols + 3) / 4; }

  std::uint32_t rows() const { return rows_; }
  std::uint32_t cols() const { return cols_; }
  float alpha() const { return alpha_; }
  std::size_t size() const { return static_cast<std::size_t>(rows_) * cols_; }
  std::span<const std::uint8_t> codes() const { return codes_; }

  std::uint8_t code(std::size_t i) const { return (codes_[i / 4] >> (2 * (i % 4))) & 0b11; }

  static int code_to_sign(std::uint8_t c) { return c == code_pos ? 1 : c == code_neg ? -1 : 0; }

  int sign(std::size_t row, std::size_t col) const { return code_to_sign(code(row * cols_ + col)); }

  /// Ternary signs of one row.
  void decode_row(std::size_t row, std::span<std::int8_t> out) const {
    const std::size_t base = row * cols_;
    for (std::size_t j = 0; j < cols_; ++j) out[j] = static_cast<std::int8_t>(code_to_sign(code(base + j)));
  }

  std::vector<std::int8_t> unpack() const {
    std::vector<std::int8_t> signs(size());
    for (std::size_t i = 0; i < signs.size(); ++i) signs[i] = static_cast<std::int8_t>(code_to_sign(code(i)));
    return signs;
  }

  /// rows u32, cols u32, alpha f32, codes; little-endian.
  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out(12 + codes_.size());
    put_u32(out.data(), rows_);
    put_u32(out.data() + 4, cols_);
    put_u32(out.data() + 8, std::bit_cast<std::uint32_t>(alpha_));
    std::memcpy(out.data() + 12, codes_.data(), codes_.size());
    return out;
  }

  static PackedTernaryMatrix deserialize(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < 12) throw CheckpointError("packed layer shorter than its 12-byte header");
    const std::uint32_t rows = get_u32(bytes.data());
    const std::uint32_t cols = get_u32(bytes.data() + 4);
    const float alpha = std::bit_cast<float>(get_u32(bytes.data() + 8));
    const std::size_t expected = byte_length(rows, cols);
    if (rows == 0 || cols == 0 || bytes.size() - 12 != expected) {
      throw CheckpointError("packed layer payload size does not match its " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " header");
    }
    try {
      return PackedTernaryMatrix(rows, cols, alpha, std::vector<std::uint8_t>(bytes.begin() + 12, bytes.end()));
    } catch (const Error& e) {
      throw CheckpointError(std::string("packed layer: ") + e.what());
    }
  }

  static void put_u32(std::uint8_t* p, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<std::uint8_t>(v >> (8 * i));
  }
  static std::uint32_t get_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
    return v;
  }

 private:
  std::uint32_t rows_ = 0;
  std::uint32_t cols_ = 0;
  float alpha_ = 1.0f;
  std::vector<std::uint8_t> codes_;
};

inline PackedTernaryMatrix pack(std::span<const std::int8_t> signs, std::size_t rows, std::size_t cols, float alpha) {
  if (signs.size() != rows * cols) {
    throw DimensionError("pack: " + std::to_string(signs.size()) + " signs for a " + std::to_string(rows) + "x" +
                         std::to_string(cols) + " matrix");
  }
  std::vector<std::uint8_t> codes(PackedTernaryMatrix::byte_length(rows, cols), 0);
  for (std::size_t i = 0; i < signs.size(); ++i) {
    std::uint8_t c = 0;
    switch (signs[i]) {
      case 0: c = PackedTernaryMatrix::code_zero; break;
      case 1: c = PackedTernaryMatrix::code_pos; break;
      case -1: c = PackedTernaryMatrix::code_neg; break;
      default:
        throw InvariantError("pack: non-ternary value " + std::to_string(signs[i]) + " at (" +
                             std::to_string(i / cols) + ", " + std::to_string(i % cols) + ")");
    }
    codes[i / 4] |= static_cast<std::uint8_t>(c << (2 * (i % 4)));
  }
  return PackedTernaryMatrix(static_cast<std::uint32_t>(rows), static_cast<std::uint32_t>(cols), alpha,
                             std::move(codes));
}

/// y[out x b] = alpha * signs * x[in x b]. Sign application is add/subtract
/// only; alpha is applied once per output element.
template <class T>
std::vector<T> packed_matmul(const PackedTernaryMatrix& w, std::span<const T> x, std::size_t batch) {
  const std::size_t out_dim = w.rows(), in_dim = w.cols();
  if (x.size() != in_dim * batch) {
    throw DimensionError("packed_matmul: weight " + std::to_string(out_dim) + "x" + std::to_string(in_dim) +
                         " vs input of " + std::to_string(x.size()) + " values for batch " + std::to_string(batch));
  }
  std::vector<T> y(out_dim * batch, T(0));
  for (std::size_t o = 0; o < out_dim; ++o) {
    T* acc = y.data() + o * batch;
    for (std::size_t j = 0; j < in_dim; ++j) {
      const std::uint8_t c = w.code(o * in_dim + j);
      const T* xr = x.data() + j * batch;
      if (c == PackedTernaryMatrix::code_pos) {
        for (std::size_t b = 0; b < batch; ++b) acc[b] += xr[b];
      } else if (c == PackedTernaryMatrix::code_neg) {
        for (std::size_t b = 0; b < batch; ++b) acc[b] -= xr[b];
      }
    }
    const T a = static_cast<T>(w.alpha());
    for (std::size_t b = 0; b < batch; ++b) acc[b] *= a;
  }
  return y;
}

/// y[n x out] = x[n x in] * (alpha * signs)^T, the activation-major layout
/// the model uses.
template <class T>
std::vector<T> packed_linear(const PackedTernaryMatrix& w, std::span<const T> x, std::size_t n) {
  const std::size_t out_dim = w.rows(), in_dim = w.cols();
  if (x.size() != n * in_dim) {
    throw DimensionError("packed_linear: weight " + std::to_string(out_dim) + "x" + std::to_string(in_dim) +
                         " vs " + std::to_string(x.size()) + " input values");
  }
  std::vector<T> y(n * out_dim);
  std::vector<std::int8_t> signs(in_dim);
  const T a = static_cast<T>(w.alpha());
  for (std::size_t o = 0; o < out_dim; ++o) {
    w.decode_row(o, signs);
    for (std::size_t r = 0; r < n; ++r) {
      const T* xr = x.data() + r * in_dim;
      T acc = 0;
      for (std::size_t j = 0; j < in_dim; ++j) {
        const T v = xr[j];
        acc += signs[j] > 0 ? v : (signs[j] < 0 ? -v : T(0));
      }
      y[r * out_dim + o] = a * acc;
    }
  }
  return y;
}

}  // namespace ternarylm
