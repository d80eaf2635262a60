#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "langxpand/error.hpp"

namespace langxpand {

enum class DType { F32, F64 };

std::string_view to_string(DType d);
DType dtype_from_string(std::string_view s);
std::size_t dtype_size(DType d);

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

// Dense row-major tensor of f32 or f64 values.
class Tensor {
 public:
  Tensor() : Tensor(DType::F32, {0}) {}
  Tensor(DType dtype, Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::vector<double> values);

  DType dtype() const { return data_.index() == 0 ? DType::F32 : DType::F64; }
  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return langxpand::numel(shape_); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_[0]; }
  std::size_t cols() const { return rows() == 0 ? 0 : numel() / rows(); }

  template <class T>
  std::span<T> data() {
    return std::get<std::vector<T>>(data_);
  }
  template <class T>
  std::span<const T> data() const {
    return std::get<std::vector<T>>(data_);
  }

  double get(std::size_t i) const;
  void set(std::size_t i, double v);
  std::vector<double> to_f64() const;
  Tensor cast(DType dtype) const;
  bool all_finite() const;

  // Same dtype, shape and bit pattern.
  bool bit_equal(const Tensor& other) const;
  bool operator==(const Tensor& other) const { return bit_equal(other); }

 private:
  Shape shape_;
  std::variant<std::vector<float>, std::vector<double>> data_;
};

using TensorStore = std::map<std::string, Tensor>;

const Tensor& require_tensor(const TensorStore& store, const std::string& name);
Tensor& require_tensor(TensorStore& store, const std::string& name);

// Container format errors, distinguishable by kind().
class StoreFormatError : public DataError {
 public:
  enum class Kind { BadMagic, Truncated, ShapeMismatch, BadHeader, NonFinite };
  StoreFormatError(Kind kind, const std::string& what) : DataError(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::string_view kStoreMagic = "XCKPT001";

// Layout: 8-byte magic, u64 LE header length, JSON header mapping each name to
// {"dtype","shape","offset","len"} (offset/len in bytes from the start of the
// data section), then the little-endian tensor data in name order.
std::string serialize_store(const TensorStore& store);
TensorStore deserialize_store(std::string_view bytes);
void write_store(const TensorStore& store, const std::filesystem::path& path);
TensorStore read_store(const std::filesystem::path& path);

}  // namespace langxpand
