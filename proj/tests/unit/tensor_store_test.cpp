#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "langxpand/tensor_store.hpp"
#include "support.hpp"

using namespace langxpand;

namespace {

std::string container(const std::string& header, std::size_t data_bytes) {
  std::string out(kStoreMagic);
  const std::uint64_t len = header.size();
  char le[8];
  for (int i = 0; i < 8; ++i) le[i] = static_cast<char>((len >> (8 * i)) & 0xFF);
  out.append(le, 8);
  out += header;
  out.append(data_bytes, '\0');
  return out;
}

StoreFormatError::Kind kind_of(std::string_view bytes) {
  try {
    deserialize_store(bytes);
  } catch (const StoreFormatError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error";
  return StoreFormatError::Kind::BadHeader;
}

}  // namespace

TEST(TensorStore, RoundtripIsBitIdentical) {
  TensorStore store;
  store["a"] = Tensor({2, 3}, std::vector<float>{1.5f, -2.0f, 3.25f, 0.1f, 1e-30f, -0.0f});
  store["b"] = Tensor({4}, std::vector<double>{std::acos(-1.0), 1e300, -1e-300, 0.0});
  const auto back = deserialize_store(serialize_store(store));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_TRUE(back.at("a").bit_equal(store.at("a")));
  EXPECT_TRUE(back.at("b").bit_equal(store.at("b")));
  EXPECT_EQ(back.at("a").shape(), (Shape{2, 3}));

  langxpand::testing::TempDir dir;
  write_store(store, dir / "s.xckpt");
  EXPECT_EQ(read_store(dir / "s.xckpt"), store);
}

TEST(TensorStore, LayoutIsMagicLengthHeaderData) {
  TensorStore store;
  store["w"] = Tensor({2}, std::vector<float>{1.0f, 2.0f});
  const auto bytes = serialize_store(store);
  ASSERT_EQ(bytes.substr(0, 8), "XCKPT001");
  std::uint64_t hlen = 0;
  for (int i = 7; i >= 0; --i) hlen = (hlen << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
  const auto header = nlohmann::json::parse(bytes.substr(16, hlen));
  EXPECT_EQ(header["w"]["dtype"], "f32");
  EXPECT_EQ(header["w"]["len"], 8);
  EXPECT_EQ(bytes.size(), 16 + hlen + 8);
  float v[2];
  std::memcpy(v, bytes.data() + 16 + hlen + header["w"]["offset"].get<std::size_t>(), 8);
  EXPECT_EQ(v[1], 2.0f);
}

TEST(TensorStore, CorruptedMagicIsReported) {
  TensorStore store;
  store["w"] = Tensor(DType::F32, {3});
  auto bytes = serialize_store(store);
  bytes[0] = 'Y';
  EXPECT_EQ(kind_of(bytes), StoreFormatError::Kind::BadMagic);
  try {
    deserialize_store(bytes);
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
}

TEST(TensorStore, LengthDisagreeingWithShapeIsRejected) {
  const auto bytes = container(R"({"w":{"dtype":"f32","shape":[2,3],"offset":0,"len":20}})", 20);
  EXPECT_EQ(kind_of(bytes), StoreFormatError::Kind::ShapeMismatch);
}

TEST(TensorStore, TruncationIsReported) {
  TensorStore store;
  store["w"] = Tensor(DType::F64, {8});
  const auto bytes = serialize_store(store);
  EXPECT_EQ(kind_of(bytes.substr(0, bytes.size() - 1)), StoreFormatError::Kind::Truncated);
  EXPECT_EQ(kind_of(bytes.substr(0, 12)), StoreFormatError::Kind::Truncated);
}

TEST(TensorStore, NonFiniteValuesAreRejected) {
  TensorStore store;
  store["w"] = Tensor({2}, std::vector<double>{1.0, std::numeric_limits<double>::quiet_NaN()});
  EXPECT_THROW(serialize_store(store), StoreFormatError);
}

TEST(TensorStore, CastRoundsThroughFloat) {
  const Tensor t({3}, std::vector<double>{0.1, 2.0, -3.5});
  const auto f = t.cast(DType::F32);
  EXPECT_EQ(f.dtype(), DType::F32);
  EXPECT_EQ(f.get(0), static_cast<double>(0.1f));
  EXPECT_EQ(f.get(2), -3.5);
}
