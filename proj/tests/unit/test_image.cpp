#include <zlib.h>

#include "helpers.hpp"

using namespace spoof;
using namespace spoof::testing;

TEST(Canvas, BlackIsAllZero) {
  const auto img = new_canvas({3, 224, 224}, InitMode::Black, 1);
  for (float v : img.data()) ASSERT_EQ(v, 0.0f);
}

TEST(Canvas, WhiteIsAllOne) {
  const auto img = new_canvas({1, 2, 2}, InitMode::White, 1);
  EXPECT_EQ(img.data().size(), 4u);
  for (float v : img.data()) EXPECT_EQ(v, 1.0f);
}

TEST(Canvas, UniformRandomIsDeterministicAndBounded) {
  const auto a = new_canvas({1, 4, 4}, InitMode::UniformRandom, 7);
  const auto b = new_canvas({1, 4, 4}, InitMode::UniformRandom, 7);
  const auto c = new_canvas({1, 4, 4}, InitMode::UniformRandom, 8);
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
  for (float v : a.data()) EXPECT_TRUE(v >= 0.0f && v <= 1.0f);
}

TEST(Canvas, ZeroDimensionRejected) {
  EXPECT_SPOOF_ERROR(new_canvas({0, 2, 2}, InitMode::Black, 0), ErrorKind::InvalidDimension);
  EXPECT_SPOOF_ERROR(new_canvas({1, 0, 2}, InitMode::White, 0), ErrorKind::InvalidDimension);
  EXPECT_SPOOF_ERROR(new_canvas({1, 2, 0}, InitMode::UniformRandom, 0), ErrorKind::InvalidDimension);
}

TEST(Canvas, ParseInitMode) {
  EXPECT_EQ(parse_init_mode("black"), InitMode::Black);
  EXPECT_EQ(parse_init_mode("white"), InitMode::White);
  EXPECT_EQ(parse_init_mode("random"), InitMode::UniformRandom);
  EXPECT_SPOOF_ERROR(parse_init_mode("grey"), ErrorKind::Configuration);
}

TEST(ImageType, RejectsOutOfRangeAndWrongLength) {
  EXPECT_SPOOF_ERROR(make_image({1, 1, 2}, {0.0f, 1.5f}), ErrorKind::Validation);
  EXPECT_SPOOF_ERROR(make_image({1, 1, 2}, {0.0f, NAN}), ErrorKind::Validation);
  EXPECT_SPOOF_ERROR(make_image({1, 1, 2}, {0.0f}), ErrorKind::Shape);
  EXPECT_SPOOF_ERROR(make_image({1, 1, 1}, {0.5f}).at(0, 1, 0), ErrorKind::Index);
}

TEST(Proposal, SingleWrite) {
  const auto img = new_canvas({1, 2, 2}, InitMode::Black, 0);
  const auto out = apply_proposal(img, {0, 0, 0, 0.5f});
  EXPECT_EQ(out.at(0, 0, 0), 0.5f);
  EXPECT_EQ(out.at(0, 0, 1), 0.0f);
  EXPECT_EQ(out.at(0, 1, 0), 0.0f);
  EXPECT_EQ(out.at(0, 1, 1), 0.0f);
  for (float v : img.data()) EXPECT_EQ(v, 0.0f) << "input must not change";
}

TEST(Proposal, IdempotentWrite) {
  const auto img = make_image({1, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  EXPECT_EQ(apply_proposal(img, {1, 0, 0, 0.3f}), img);
}

TEST(Proposal, TwoWritesAtDistinctLocations) {
  const auto img = new_canvas({3, 4, 5}, InitMode::Black, 0);
  const PixelProposal p1{1, 2, 0, 0.25f}, p2{3, 4, 2, 0.75f};
  const auto out = apply_proposal(apply_proposal(img, p1), p2);
  std::size_t nonzero = 0;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 4; ++r)
      for (std::size_t w = 0; w < 5; ++w) {
        const float v = out.at(c, r, w);
        if (c == 0 && r == 1 && w == 2) EXPECT_EQ(v, 0.25f);
        else if (c == 2 && r == 3 && w == 4) EXPECT_EQ(v, 0.75f);
        else EXPECT_EQ(v, 0.0f);
        nonzero += v != 0.0f;
      }
  EXPECT_EQ(nonzero, 2u);
}

TEST(Proposal, OutOfBounds) {
  const auto img = new_canvas({1, 2, 2}, InitMode::Black, 0);
  EXPECT_SPOOF_ERROR(apply_proposal(img, {2, 0, 0, 0.5f}), ErrorKind::Index);
  EXPECT_SPOOF_ERROR(apply_proposal(img, {0, 2, 0, 0.5f}), ErrorKind::Index);
  EXPECT_SPOOF_ERROR(apply_proposal(img, {0, 0, 1, 0.5f}), ErrorKind::Index);
  EXPECT_SPOOF_ERROR(apply_proposal(img, {0, 0, 0, 1.5f}), ErrorKind::Validation);
}

TEST(Pcr, Examples) {
  const auto a = make_image({1, 2, 2}, {0.1f, 0.2f, 0.3f, 0.4f});
  EXPECT_EQ(changed_location_ratio(a, a), 0.0);
  const auto inv = make_image({1, 2, 2}, {0.9f, 0.8f, 0.7f, 0.6f});
  EXPECT_EQ(changed_location_ratio(a, inv), 1.0);
  EXPECT_EQ(changed_location_ratio(a, apply_proposal(a, {1, 0, 0, 0.9f})), 0.25);
}

TEST(Pcr, CountsLocationsNotChannels) {
  const auto a = new_canvas({3, 2, 2}, InitMode::Black, 0);
  auto b = apply_proposal(a, {0, 1, 0, 0.5f});
  b = apply_proposal(b, {0, 1, 2, 0.5f});
  EXPECT_EQ(changed_location_ratio(a, b), 0.25);
}

TEST(Pcr, ShapeMismatch) {
  EXPECT_SPOOF_ERROR(changed_location_ratio(new_canvas({1, 2, 2}, InitMode::Black, 0), new_canvas({1, 2, 3}, InitMode::Black, 0)),
                     ErrorKind::Shape);
}

TEST(Pcr, SymmetricAndZeroIffEqual) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto a = random_image({3, 5, 4}, s);
    auto b = a;
    Rng rng(s);
    const auto edits = rng.uniform_index(6);
    for (std::uint64_t k = 0; k < edits; ++k) {
      b = apply_proposal(b, {rng.uniform_index(5), rng.uniform_index(4), rng.uniform_index(3), static_cast<float>(rng.uniform01())});
    }
    EXPECT_EQ(changed_location_ratio(a, b), changed_location_ratio(b, a));
    EXPECT_EQ(changed_location_ratio(a, b) == 0.0, a == b);
  }
}

TEST(Png, ZeroImageRoundTrip) {
  const auto img = new_canvas({1, 3, 5}, InitMode::Black, 0);
  EXPECT_EQ(decode_png(encode_png(img)), img);
}

TEST(Png, EndpointsAndHalf) {
  const auto img = make_image({1, 1, 3}, {1.0f, 0.5f, 0.0f});
  const auto back = decode_png(encode_png(img));
  EXPECT_EQ(back.at(0, 0, 0), 1.0f);
  EXPECT_EQ(quantize_to_byte(0.5f), 128);
  EXPECT_EQ(back.at(0, 0, 1), 128.0f / 255.0f);
  EXPECT_EQ(back.at(0, 0, 2), 0.0f);
}

TEST(Png, RoundTripEqualsQuantizationAndIsProjection) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    for (std::size_t ch : {1u, 3u}) {
      const auto img = random_image({ch, 7 + s, 9}, s);
      const auto once = decode_png(encode_png(img));
      EXPECT_EQ(once, quantize(img));
      EXPECT_EQ(decode_png(encode_png(once)), once);
    }
  }
}

TEST(Png, FileRoundTrip) {
  const auto dir = temp_dir("png");
  const auto img = quantize(random_image({3, 6, 6}, 3));
  write_png(dir / "x.png", img);
  EXPECT_EQ(read_png(dir / "x.png"), img);
  std::filesystem::remove_all(dir);
}

namespace {
// Rewrites the IHDR payload byte at `offset` and fixes the CRC.
std::vector<std::uint8_t> patch_ihdr(std::vector<std::uint8_t> png, std::size_t offset, std::uint8_t value) {
  png[8 + 8 + offset] = value;
  const auto crc = ::crc32(0L, png.data() + 12, 17);
  png[29] = static_cast<std::uint8_t>(crc >> 24);
  png[30] = static_cast<std::uint8_t>(crc >> 16);
  png[31] = static_cast<std::uint8_t>(crc >> 8);
  png[32] = static_cast<std::uint8_t>(crc);
  return png;
}
}  // namespace

TEST(Png, MalformedInputs) {
  const auto good = encode_png(random_image({1, 4, 4}, 1));
  EXPECT_SPOOF_ERROR(decode_png(std::vector<std::uint8_t>{1, 2, 3}), ErrorKind::Format);
  auto bad_crc = good;
  bad_crc[20] ^= 0xFF;
  EXPECT_SPOOF_ERROR(decode_png(bad_crc), ErrorKind::Format);
  EXPECT_SPOOF_ERROR(decode_png(std::span(good).first(good.size() - 20)), ErrorKind::Format);
}

TEST(Png, UnsupportedBitDepthAndColorType) {
  const auto good = encode_png(random_image({1, 4, 4}, 1));
  EXPECT_SPOOF_ERROR(decode_png(patch_ihdr(good, 8, 16)), ErrorKind::UnsupportedFormat);
  EXPECT_SPOOF_ERROR(decode_png(patch_ihdr(good, 9, 6)), ErrorKind::UnsupportedFormat);
}
