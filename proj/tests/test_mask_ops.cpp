#include <doctest.h>

#include <stdexcept>

#include "sp/mask_ops.hpp"
#include "sp/rng.hpp"

using sp::Box;
using sp::Tensor;

TEST_CASE("mask_to_box: single pixel and full mask") {
  Tensor m({5, 6});
  m(2, 3) = 1.0;
  const auto box = sp::mask_to_box(m);
  REQUIRE(box.has_value());
  CHECK(*box == Box{3, 2, 3, 2});

  Tensor full = Tensor::from_data({3, 4}, std::vector<double>(12, 1.0));
  CHECK(*sp::mask_to_box(full) == Box{0, 0, 3, 2});

  CHECK_FALSE(sp::mask_to_box(Tensor({4, 4})).has_value());
}

TEST_CASE("mask_to_box: L-shaped mask bounds its extremes") {
  Tensor m({6, 6});
  for (int y = 1; y <= 4; ++y) m(y, 1) = 1.0;
  for (int x = 1; x <= 3; ++x) m(4, x) = 1.0;
  // Pixel-scan oracle.
  int x0 = 6, y0 = 6, x1 = -1, y1 = -1;
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x)
      if (m(y, x) != 0.0) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
  CHECK(*sp::mask_to_box(m) == Box{x0, y0, x1, y1});
}

TEST_CASE("box_iou: identical, disjoint, 1-of-7 overlap") {
  const Box a{0, 0, 1, 1};
  CHECK(sp::box_iou(a, a) == doctest::Approx(1.0));
  CHECK(sp::box_iou(a, Box{5, 5, 6, 6}) == doctest::Approx(0.0));
  CHECK(sp::box_iou(a, Box{1, 1, 2, 2}) == doctest::Approx(1.0 / 7.0));
}

TEST_CASE("mask_iou: identity and symmetry") {
  sp::SplitMix64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a({6, 6}), b({6, 6});
    for (auto& v : a.values()) v = rng.next_below(2) ? 1.0 : 0.0;
    for (auto& v : b.values()) v = rng.next_below(2) ? 1.0 : 0.0;
    CHECK(sp::mask_iou(a, a) == doctest::Approx(sp::mask_area(a) == 0 ? 0.0 : 1.0));
    CHECK(sp::mask_iou(a, b) == doctest::Approx(sp::mask_iou(b, a)));
  }
}

TEST_CASE("rle: round trip and edge patterns") {
  sp::SplitMix64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor m({4, 7});
    for (auto& v : m.values()) v = rng.next_below(2) ? 1.0 : 0.0;
    const auto runs = sp::rle_encode(m);
    std::uint64_t total = 0;
    for (auto r : runs) total += r;
    CHECK(total == m.size());
    const Tensor back = sp::rle_decode(runs, 4, 7);
    CHECK(back.values() == m.values());
  }

  // All-ones starts with an explicit empty 0-run.
  Tensor ones = Tensor::from_data({1, 3}, {1, 1, 1});
  CHECK(sp::rle_encode(ones) == std::vector<std::uint32_t>{0, 3});
  Tensor zeros({1, 3});
  CHECK(sp::rle_encode(zeros) == std::vector<std::uint32_t>{3});

  const std::vector<std::uint32_t> overflow{2, 2};
  const std::vector<std::uint32_t> undershoot{4};
  CHECK_THROWS_AS(sp::rle_decode(overflow, 1, 3), std::invalid_argument);
  CHECK_THROWS_AS(sp::rle_decode(undershoot, 1, 3), std::invalid_argument);
}

TEST_CASE("resize_bilinear: constants, identity, hand-computed 2x upscale") {
  Tensor c = Tensor::from_data({3, 3}, std::vector<double>(9, 0.25));
  const sp::Tensor c_resized = sp::resize_bilinear(c, 7, 5);
  for (double v : c_resized.values()) CHECK(v == doctest::Approx(0.25));

  sp::SplitMix64 rng(17);
  Tensor t({4, 4});
  for (auto& v : t.values()) v = rng.next_double();
  const Tensor same = sp::resize_bilinear(t, 4, 4);
  for (std::size_t i = 0; i < t.size(); ++i)
    CHECK(same.values()[i] == doctest::Approx(t.values()[i]).epsilon(1e-12));

  // 1×2 map [0,1] → 1×4 with half-pixel centers: src_x = (ox+0.5)/2 - 0.5.
  Tensor row = Tensor::from_data({1, 2}, {0.0, 1.0});
  const Tensor up = sp::resize_bilinear(row, 1, 4);
  CHECK(up(0, 0) == doctest::Approx(0.0));
  CHECK(up(0, 1) == doctest::Approx(0.25));
  CHECK(up(0, 2) == doctest::Approx(0.75));
  CHECK(up(0, 3) == doctest::Approx(1.0));
}

TEST_CASE("resize_bilinear: [0,1] inputs stay in [0,1]") {
  sp::SplitMix64 rng(19);
  Tensor t({5, 8});
  for (auto& v : t.values()) v = rng.next_double();
  const Tensor out = sp::resize_bilinear(t, 200, 200);
  for (double v : out.values()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}
