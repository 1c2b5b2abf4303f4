#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vitlab/data.hpp"
#include "vitlab/rng.hpp"

using namespace vitlab;

namespace {

std::vector<unsigned char> bytes_of(const std::string& s) {
  return std::vector<unsigned char>(s.begin(), s.end());
}

}  // namespace

TEST_CASE("decode_ppm 1x1 white pixel") {
  std::string header = "P6\n1 1\n255\n";
  std::vector<unsigned char> data = bytes_of(header);
  data.insert(data.end(), {0xff, 0xff, 0xff});
  Image img = decode_ppm(data);
  CHECK(img.height == 1);
  CHECK(img.width == 1);
  CHECK(img.at(0, 0, 0) == 1.0);
  CHECK(img.at(0, 0, 1) == 1.0);
  CHECK(img.at(0, 0, 2) == 1.0);
}

TEST_CASE("decode_ppm rejects bad input") {
  CHECK_THROWS_AS(decode_ppm(bytes_of("P5\n1 1\n255\n ")), ParseError);
  std::vector<unsigned char> truncated = bytes_of("P6\n2 2\n255\n");
  truncated.insert(truncated.end(), {1, 2, 3});
  CHECK_THROWS_AS(decode_ppm(truncated), ParseError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n0 1\n255\n")), ParseError);
  CHECK_THROWS_AS(decode_ppm(bytes_of("P6\n1 1\n65535\n")), ParseError);
}

TEST_CASE("decode_ppm skips header comments") {
  std::string header = "P6\n# a comment\n2 1\n255\n";
  std::vector<unsigned char> data = bytes_of(header);
  data.insert(data.end(), {0, 0, 0, 255, 0, 0});
  Image img = decode_ppm(data);
  CHECK(img.width == 2);
  CHECK(img.at(0, 1, 0) == 1.0);
}

TEST_CASE("encode_pgm maps 0/1 to 0x00/0xff") {
  std::vector<double> grid{0.0, 1.0, 1.0, 0.0};
  std::vector<unsigned char> out = encode_pgm(grid, 2, 2);
  const std::string header = "P5\n2 2\n255\n";
  REQUIRE(out.size() == header.size() + 4);
  CHECK(std::equal(header.begin(), header.end(), out.begin()));
  CHECK(out[header.size() + 0] == 0x00);
  CHECK(out[header.size() + 1] == 0xff);
  CHECK(out[header.size() + 2] == 0xff);
  CHECK(out[header.size() + 3] == 0x00);
}

TEST_CASE("pgm encode/decode round trip is lossless at 8 bits") {
  Rng rng(9);
  for (int rep = 0; rep < 20; ++rep) {
    const int64_t h = 1 + rng.uniform_int(6);
    const int64_t w = 1 + rng.uniform_int(6);
    std::vector<double> grid(static_cast<size_t>(h * w));
    for (double& v : grid) v = static_cast<double>(rng.uniform_int(256)) / 255.0;
    int64_t h2 = 0, w2 = 0;
    std::vector<double> back = decode_pgm(encode_pgm(grid, h, w), &h2, &w2);
    CHECK(h2 == h);
    CHECK(w2 == w);
    for (size_t i = 0; i < grid.size(); ++i) CHECK(back[i] == grid[i]);
  }
}

TEST_CASE("resize_bilinear identity and constants") {
  Rng rng(4);
  Image img(3, 5);
  for (double& v : img.pixels) v = rng.uniform();
  Image same = resize_bilinear(img, 3, 5);
  for (size_t i = 0; i < img.pixels.size(); ++i) CHECK(same.pixels[i] == img.pixels[i]);

  Image constant(2, 2);
  for (double& v : constant.pixels) v = 0.25;
  Image up = resize_bilinear(constant, 7, 9);
  for (double v : up.pixels) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("resize_bilinear matches the closed-form ramp") {
  // 2x2 ramp along columns: f(y, x) = x; align-corners to width 5 samples x
  // at i/4.
  Image img(2, 2);
  for (int64_t y = 0; y < 2; ++y) {
    for (int64_t x = 0; x < 2; ++x) {
      for (int64_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<double>(x);
    }
  }
  Image out = resize_bilinear(img, 2, 5);
  for (int64_t x = 0; x < 5; ++x) {
    const double expected = static_cast<double>(x) / 4.0;
    CHECK(std::abs(out.at(0, x, 0) - expected) < 1e-9);
    CHECK(std::abs(out.at(1, x, 1) - expected) < 1e-9);
  }
}

TEST_CASE("normalize examples") {
  Image img(1, 2);
  img.at(0, 0, 0) = 0.5;
  img.at(0, 1, 2) = 1.0;
  Tensor t = normalize(img, {0.0, 0.0, 0.0}, {1.0, 1.0, 1.0});
  CHECK(t.at(0) == 0.5);

  Tensor zeroed = normalize(img, {0.5, 0.0, 0.0}, {0.5, 1.0, 1.0});
  CHECK(zeroed.at(0) == 0.0);

  CHECK_THROWS_AS(normalize(img, {0.0, 0.0, 0.0}, {0.0, 1.0, 1.0}), ContractError);
}

TEST_CASE("make_synthetic is deterministic and balanced") {
  SyntheticSpec spec{8, 16, 32, 42};
  Dataset a = make_synthetic(spec);
  Dataset b = make_synthetic(spec);
  REQUIRE(a.size() == 128);
  CHECK(a.num_classes == 8);
  std::vector<int> counts(8, 0);
  for (size_t i = 0; i < a.size(); ++i) {
    ++counts[static_cast<size_t>(a.items[i].label)];
    const Image& ia = a.store[static_cast<size_t>(a.items[i].store_index)];
    const Image& ib = b.store[static_cast<size_t>(b.items[i].store_index)];
    REQUIRE(ia.pixels.size() == ib.pixels.size());
    CHECK(ia.pixels == ib.pixels);
  }
  for (int c : counts) CHECK(c == 16);
}

TEST_CASE("synthetic background patches are exactly uniform") {
  SyntheticSpec spec{8, 4, 32, 7};
  Dataset ds = make_synthetic(spec);
  const int64_t patch = 8;
  for (size_t i = 0; i < ds.size(); ++i) {
    Image img = ds.image(i);
    int64_t uniform_pixels = 0;
    // Top-half patches: zero variance, a single sky color each.
    for (int64_t pr = 0; pr < 2; ++pr) {
      for (int64_t pc = 0; pc < 4; ++pc) {
        for (int64_t c = 0; c < 3; ++c) {
          const double v0 = img.at(pr * patch, pc * patch, c);
          for (int64_t y = 0; y < patch; ++y) {
            for (int64_t x = 0; x < patch; ++x) {
              CHECK(img.at(pr * patch + y, pc * patch + x, c) == v0);
            }
          }
        }
        uniform_pixels += patch * patch;
      }
    }
    CHECK(static_cast<double>(uniform_pixels) >= 0.3 * 32 * 32);
  }
}

TEST_CASE("synthetic byte stream is stable for a fixed seed") {
  SyntheticSpec spec{8, 2, 32, 42};
  auto digest = [&] {
    Dataset ds = make_synthetic(spec);
    std::vector<unsigned char> all;
    for (size_t i = 0; i < ds.size(); ++i) {
      std::vector<unsigned char> ppm = encode_ppm(ds.image(i));
      all.insert(all.end(), ppm.begin(), ppm.end());
    }
    return fnv1a64(std::span<const unsigned char>(all));
  };
  const uint64_t first = digest();
  CHECK(digest() == first);
}

TEST_CASE("load_manifest") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "vitlab_manifest_test";
  fs::create_directories(dir);

  SUBCASE("three lines in order") {
    std::ofstream out(dir / "ok.csv");
    out << "a.ppm,0\nb.ppm,2\nsub/c.ppm,1\n";
    out.close();
    Dataset ds = load_manifest((dir / "ok.csv").string());
    REQUIRE(ds.size() == 3);
    CHECK(ds.items[0].path == "a.ppm");
    CHECK(ds.items[1].label == 2);
    CHECK(ds.items[2].path == "sub/c.ppm");
    CHECK(ds.num_classes == 3);
  }
  SUBCASE("bad label reports line number") {
    std::ofstream out(dir / "bad.csv");
    out << "a.ppm,0\nb.ppm,x\n";
    out.close();
    CHECK_THROWS_WITH_AS(load_manifest((dir / "bad.csv").string()), doctest::Contains("line 2"),
                         ParseError);
  }
  SUBCASE("empty file gives empty dataset") {
    std::ofstream out(dir / "empty.csv");
    out.close();
    Dataset ds = load_manifest((dir / "empty.csv").string());
    CHECK(ds.size() == 0);
  }
  SUBCASE("missing file is an io error") {
    CHECK_THROWS_AS(load_manifest((dir / "missing.csv").string()), IoError);
  }
  SUBCASE("items load their images relative to the manifest") {
    Image px(1, 1);
    px.at(0, 0, 1) = 1.0;
    std::vector<unsigned char> ppm = encode_ppm(px);
    std::ofstream img_out(dir / "green.ppm", std::ios::binary);
    img_out.write(reinterpret_cast<const char*>(ppm.data()),
                  static_cast<std::streamsize>(ppm.size()));
    img_out.close();
    std::ofstream out(dir / "img.csv");
    out << "green.ppm,0\n";
    out.close();
    Dataset ds = load_manifest((dir / "img.csv").string());
    Image back = ds.image(0);
    CHECK(back.height == 1);
    CHECK(back.at(0, 0, 1) == 1.0);
    CHECK(back.at(0, 0, 0) == 0.0);
  }
}
