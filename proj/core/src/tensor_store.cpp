#include "langxpand/tensor_store.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace langxpand {
namespace {

using Kind = StoreFormatError::Kind;

template <class T>
void append_le(std::string& out, std::span<const T> values) {
  const std::size_t start = out.size();
  out.resize(start + values.size_bytes());
  char* dst = out.data() + start;
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(dst, values.data(), values.size_bytes());
  } else {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (const T v : values) {
      auto u = std::bit_cast<U>(v);
      for (std::size_t b = 0; b < sizeof(U); ++b, u >>= 8) *dst++ = static_cast<char>(u & 0xFF);
    }
  }
}

template <class T>
std::vector<T> load_le(std::string_view bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  if constexpr (std::endian::native == std::endian::little) {
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  } else {
    using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
    for (std::size_t i = 0; i < out.size(); ++i) {
      U u = 0;
      for (std::size_t b = 0; b < sizeof(U); ++b) {
        u |= static_cast<U>(static_cast<unsigned char>(bytes[i * sizeof(U) + b])) << (8 * b);
      }
      out[i] = std::bit_cast<T>(u);
    }
  }
  return out;
}

std::uint64_t read_u64_le(std::string_view b) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[static_cast<std::size_t>(i)]);
  return v;
}

struct Entry {
  std::string name;
  DType dtype;
  Shape shape;
  std::uint64_t offset;
  std::uint64_t len;
};

std::vector<Entry> parse_header(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw StoreFormatError(Kind::BadHeader, std::string("bad header JSON: ") + e.what());
  }
  if (!j.is_object()) throw StoreFormatError(Kind::BadHeader, "header must be a JSON object");
  std::vector<Entry> out;
  for (const auto& [name, v] : j.items()) {
    try {
      Entry e{name, dtype_from_string(v.at("dtype").get<std::string>()), v.at("shape").get<Shape>(),
              v.at("offset").get<std::uint64_t>(), v.at("len").get<std::uint64_t>()};
      out.push_back(std::move(e));
    } catch (const StoreFormatError&) {
      throw;
    } catch (const std::exception& ex) {
      throw StoreFormatError(Kind::BadHeader, "bad header entry for '" + name + "': " + ex.what());
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(DType d) { return d == DType::F32 ? "f32" : "f64"; }

DType dtype_from_string(std::string_view s) {
  if (s == "f32") return DType::F32;
  if (s == "f64") return DType::F64;
  throw StoreFormatError(Kind::BadHeader, "unknown dtype '" + std::string(s) + "'");
}

std::size_t dtype_size(DType d) { return d == DType::F32 ? 4 : 8; }

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? "," : "") + std::to_string(shape[i]);
  return s + "]";
}

Tensor::Tensor(DType dtype, Shape shape) : shape_(std::move(shape)) {
  if (dtype == DType::F32) data_ = std::vector<float>(numel(), 0.0f);
  else data_ = std::vector<double>(numel(), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (std::get<0>(data_).size() != numel()) throw UsageError("tensor data length does not match shape " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
  if (std::get<1>(data_).size() != numel()) throw UsageError("tensor data length does not match shape " + shape_string(shape_));
}

double Tensor::get(std::size_t i) const {
  return std::visit([i](const auto& v) { return static_cast<double>(v.at(i)); }, data_);
}

void Tensor::set(std::size_t i, double x) {
  std::visit([i, x](auto& v) { v.at(i) = static_cast<std::decay_t<decltype(v[0])>>(x); }, data_);
}

std::vector<double> Tensor::to_f64() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, data_);
}

Tensor Tensor::cast(DType d) const {
  if (d == dtype()) return *this;
  if (d == DType::F64) return Tensor(shape_, to_f64());
  const auto& src = std::get<1>(data_);
  return Tensor(shape_, std::vector<float>(src.begin(), src.end()));
}

bool Tensor::all_finite() const {
  return std::visit(
      [](const auto& v) {
        for (auto x : v) {
          if (!std::isfinite(x)) return false;
        }
        return true;
      },
      data_);
}

bool Tensor::bit_equal(const Tensor& o) const {
  if (dtype() != o.dtype() || shape_ != o.shape_) return false;
  return std::visit(
      [&](const auto& v) {
        const auto& w = std::get<std::decay_t<decltype(v)>>(o.data_);
        return v.empty() || std::memcmp(v.data(), w.data(), v.size() * sizeof(v[0])) == 0;
      },
      data_);
}

const Tensor& require_tensor(const TensorStore& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw DataError("missing tensor '" + name + "'");
  return it->second;
}

Tensor& require_tensor(TensorStore& store, const std::string& name) {
  auto it = store.find(name);
  if (it == store.end()) throw DataError("missing tensor '" + name + "'");
  return it->second;
}

std::string serialize_store(const TensorStore& store) {
  nlohmann::ordered_json header = nlohmann::ordered_json::object();
  std::string data;
  for (const auto& [name, t] : store) {
    if (!t.all_finite()) throw StoreFormatError(Kind::NonFinite, "tensor '" + name + "' has non-finite values");
    const std::size_t offset = data.size();
    if (t.dtype() == DType::F32) append_le(data, t.data<float>());
    else append_le(data, t.data<double>());
    header[name] = {{"dtype", to_string(t.dtype())}, {"shape", t.shape()}, {"offset", offset}, {"len", data.size() - offset}};
  }
  const std::string h = header.dump();
  std::string out(kStoreMagic);
  std::uint64_t len = h.size();
  for (int i = 0; i < 8; ++i, len >>= 8) out.push_back(static_cast<char>(len & 0xFF));
  out += h;
  out += data;
  return out;
}

TensorStore deserialize_store(std::string_view bytes) {
  if (bytes.size() < kStoreMagic.size() || bytes.substr(0, kStoreMagic.size()) != kStoreMagic) {
    throw StoreFormatError(Kind::BadMagic, "bad magic: not a tensor container");
  }
  if (bytes.size() < 16) throw StoreFormatError(Kind::Truncated, "truncated: missing header length");
  const std::uint64_t hlen = read_u64_le(bytes.substr(8, 8));
  if (hlen > bytes.size() - 16) {
    throw StoreFormatError(Kind::Truncated, "truncated: header declares " + std::to_string(hlen) + " bytes, " +
                                                std::to_string(bytes.size() - 16) + " available");
  }
  const auto entries = parse_header(bytes.substr(16, hlen));
  const std::string_view data = bytes.substr(16 + hlen);

  // Validate every entry before touching tensor bytes.
  for (const auto& e : entries) {
    const std::uint64_t expect = numel(e.shape) * dtype_size(e.dtype);
    if (e.len != expect) {
      throw StoreFormatError(Kind::ShapeMismatch, "tensor '" + e.name + "' declares " + std::to_string(e.len) +
                                                      " bytes but shape " + shape_string(e.shape) + " needs " +
                                                      std::to_string(expect));
    }
    if (e.offset > data.size() || e.len > data.size() - e.offset) {
      throw StoreFormatError(Kind::Truncated, "truncated: tensor '" + e.name + "' extends past end of data");
    }
  }
  TensorStore store;
  for (const auto& e : entries) {
    const auto raw = data.substr(e.offset, e.len);
    Tensor t = e.dtype == DType::F32 ? Tensor(e.shape, load_le<float>(raw)) : Tensor(e.shape, load_le<double>(raw));
    if (!t.all_finite()) throw StoreFormatError(Kind::NonFinite, "tensor '" + e.name + "' has non-finite values");
    store.emplace(e.name, std::move(t));
  }
  return store;
}

void write_store(const TensorStore& store, const std::filesystem::path& path) {
  const std::string bytes = serialize_store(store);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

TensorStore read_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_store(ss.str());
}

}  // namespace langxpand
