#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dca/image.hpp"
#include "dca/random.hpp"

using namespace dca;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

Image random_image(Rng& rng, std::size_t w, std::size_t h, std::size_t c) {
  Image img(w, h, c);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

double region_std(const std::vector<std::uint8_t>& plane, std::size_t w, std::size_t x0, std::size_t x1,
                  std::size_t h) {
  double s = 0, s2 = 0, n = 0;
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = x0; x < x1; ++x) {
      const double v = plane[y * w + x];
      s += v;
      s2 += v * v;
      n += 1;
    }
  const double m = s / n;
  return std::sqrt(s2 / n - m * m);
}

// Plain global histogram equalization onto the plane's [min,max] range.
std::vector<std::uint8_t> global_he(const std::vector<std::uint8_t>& plane) {
  std::vector<long> hist(256, 0);
  for (auto v : plane) ++hist[v];
  const int lo = *std::min_element(plane.begin(), plane.end());
  const int hi = *std::max_element(plane.begin(), plane.end());
  std::vector<long> cdf(256);
  long run = 0;
  for (int v = 0; v < 256; ++v) cdf[v] = run += hist[v];
  std::vector<std::uint8_t> out(plane.size());
  for (std::size_t i = 0; i < plane.size(); ++i)
    out[i] = static_cast<std::uint8_t>(
        std::lround(lo + static_cast<double>(cdf[plane[i]]) * (hi - lo) / static_cast<double>(plane.size())));
  return out;
}

}  // namespace

TEST(Ppm, SingleRedPixel) {
  auto bytes = bytes_of("P6\n1 1\n255\n");
  bytes.insert(bytes.end(), {255, 0, 0});
  Image img = read_ppm(bytes);
  EXPECT_EQ(img.width, 1u);
  EXPECT_EQ(img.height, 1u);
  EXPECT_EQ(img.channels, 3u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{255, 0, 0}));
  EXPECT_EQ(write_ppm(img), bytes);
}

TEST(Ppm, HeaderWithCommentsAndPgm) {
  auto bytes = bytes_of("P5 # gray\n2  1\n# c\n255\n");
  bytes.insert(bytes.end(), {7, 9});
  Image img = read_ppm(bytes);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_EQ(img.pixels, (std::vector<std::uint8_t>{7, 9}));
}

TEST(Ppm, GeneratedCorpusRoundTripsBitwise) {
  Rng rng(20);
  for (int i = 0; i < 20; ++i) {
    const std::size_t channels = i % 2 ? 3 : 1;
    Image img = random_image(rng, 1 + rng.below(40), 1 + rng.below(40), channels);
    const auto bytes = write_ppm(img);
    EXPECT_EQ(read_ppm(bytes), img);
    EXPECT_EQ(write_ppm(read_ppm(bytes)), bytes);
  }
}

TEST(Ppm, MalformedInputReportsOffset) {
  try {
    read_ppm(bytes_of("P3\n1 1\n255\n"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  try {
    read_ppm(bytes_of("P6\n1 1\n65535\n\x01\x02\x03"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 7u);
    EXPECT_NE(std::string(e.what()).find("maxval"), std::string::npos);
  }
  try {
    read_ppm(bytes_of("P6\n2 2\n255\n\x01\x02\x03"));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 14u);
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
  }
  EXPECT_THROW(read_ppm(bytes_of("P6\nx 1\n255\n")), FormatError);
}

TEST(Resize, SameSizeIsIdentity) {
  Rng rng(1);
  Image img = random_image(rng, 17, 17, 3);
  EXPECT_EQ(resize_bilinear(img, 17), img);
}

TEST(Resize, ConstantStaysConstant) {
  Image img(13, 7, 3, 137);
  for (std::size_t target : {1u, 5u, 13u, 64u}) {
    Image out = resize_bilinear(img, target);
    EXPECT_EQ(out.width, target);
    EXPECT_EQ(out.channels, 3u);
    for (auto p : out.pixels) EXPECT_EQ(p, 137);
  }
}

TEST(Resize, CheckerboardMatchesHandOracle) {
  Image img(2, 2, 1);
  img.pixels = {0, 255, 255, 0};
  // Half-pixel sample positions {0, .25, .75, 1} per axis; value 255*(x(1-y)+y(1-x)).
  const std::vector<std::uint8_t> expected{0,   64,  191, 255,  //
                                           64,  96,  159, 191,  //
                                           191, 159, 96,  64,   //
                                           255, 191, 64,  0};
  EXPECT_EQ(resize_bilinear(img, 4).pixels, expected);
}

TEST(Resize, EmptyRejected) { EXPECT_THROW(resize_bilinear(Image{}, 4), std::invalid_argument); }

TEST(Luma, GrayIsExact) {
  for (int v = 0; v < 256; ++v) {
    const auto p = rgb_to_ycbcr(v, v, v);
    EXPECT_EQ(p.y, v);
    EXPECT_EQ(p.cb, 128);
    EXPECT_EQ(p.cr, 128);
    const auto rgb = ycbcr_to_rgb(p.y, p.cb, p.cr);
    EXPECT_EQ(rgb[0], v);
    EXPECT_EQ(rgb[1], v);
    EXPECT_EQ(rgb[2], v);
  }
}

TEST(Clahe, ConstantImageIsInvariant) {
  for (int v : {0, 1, 37, 128, 200, 255})
    for (std::size_t size : {8u, 37u, 64u}) {
      Image img(size, size, 3, static_cast<std::uint8_t>(v));
      Image out = clahe(img, ClaheConfig{});
      for (auto p : out.pixels) ASSERT_LE(std::abs(int(p) - v), 1) << v << " " << size;
    }
}

TEST(Clahe, UnclippedSingleTileEqualsGlobalEqualization) {
  Rng rng(3);
  ClaheConfig c;
  c.tiles = 1;
  c.clip_limit = std::numeric_limits<double>::infinity();
  for (int trial = 0; trial < 10; ++trial) {
    Image img = random_image(rng, 20 + rng.below(30), 20 + rng.below(30), 1);
    // Skew the histogram so equalization actually moves values.
    for (auto& p : img.pixels) p = static_cast<std::uint8_t>(p * p / 255);
    const auto expected = global_he(img.pixels);
    const auto out = clahe(img, c).pixels;
    for (std::size_t i = 0; i < out.size(); ++i) ASSERT_LE(std::abs(int(out[i]) - int(expected[i])), 1);
  }
}

TEST(Clahe, TwoRegionContrastIncreases) {
  Rng rng(4);
  const std::size_t w = 64, h = 64;
  Image img(w, h, 1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      img.at(x, y) = static_cast<std::uint8_t>(x < w / 2 ? 40 + rng.below(21) : 180 + rng.below(31));
  ClaheConfig c;
  c.tiles = 2;
  const auto out = clahe(img, c).pixels;
  EXPECT_GT(region_std(out, w, 0, w / 2, h), region_std(img.pixels, w, 0, w / 2, h));
  EXPECT_GT(region_std(out, w, w / 2, w, h), region_std(img.pixels, w, w / 2, w, h));
}

TEST(Clahe, DeterministicAndTileMapsMonotone) {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    Image img = random_image(rng, 16 + rng.below(60), 16 + rng.below(60), 3);
    ClaheConfig c;
    c.tiles = 1 + rng.below(8);
    c.clip_limit = 1.0 + rng.uniform() * 4.0;
    EXPECT_EQ(clahe(img, c), clahe(img, c));
    const auto luma = luma_plane(img);
    const TileMaps tm = clahe_tile_maps(luma, img.width, img.height, c);
    for (const auto& map : tm.maps)
      for (std::size_t v = 1; v < 256; ++v) ASSERT_GE(map[v], map[v - 1]);
  }
}

TEST(Clahe, RejectsOversizedTilingAndBadConfig) {
  Image img(4, 4, 1, 10);
  ClaheConfig c;
  c.tiles = 5;
  EXPECT_THROW(clahe(img, c), std::invalid_argument);
  c.tiles = 2;
  c.clip_limit = 0.5;
  EXPECT_THROW(clahe(img, c), std::invalid_argument);
  EXPECT_THROW(clahe(Image{}, ClaheConfig{}), std::invalid_argument);
}
