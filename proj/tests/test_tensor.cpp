#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "seqdet/ops.hpp"
#include "seqdet/parallel.hpp"
#include "seqdet/serialize.hpp"
#include "seqdet/tensor.hpp"

using namespace seqdet;

TEST_CASE("tensor shape and data invariants") {
  auto t = Tensorf::zeros({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(shape_numel(t.shape()) == t.numel());
  CHECK_THROWS(Tensorf::from_data({2, 2}, {1.f, 2.f, 3.f}));
}

TEST_CASE("conv2d 1x1 identity kernel leaves input unchanged") {
  Rng rng(1);
  auto in = Tensorf::uniform({2, 1, 5, 7}, rng, -1.f, 1.f);
  auto w = Tensorf::full({1, 1, 1, 1}, 1.f);
  auto b = Tensorf::zeros({1});
  ConvSpec sp{.in_channels = 1, .out_channels = 1, .kh = 1, .kw = 1};
  auto out = conv2d(in, w, b, sp);
  CHECK(out.shape() == in.shape());
  CHECK(oracles::max_abs_diff(out, in) == 0.0);
}

TEST_CASE("conv2d all-ones 3x3 kernel counts valid taps") {
  auto in = Tensorf::full({1, 1, 2, 2}, 1.f);
  auto w = Tensorf::full({1, 1, 3, 3}, 1.f);
  ConvSpec sp{.in_channels = 1, .out_channels = 1, .kh = 3, .kw = 3, .kt = 1,
              .sh = 1, .sw = 1, .ph = 1, .pw = 1};
  auto out = conv2d(in, w, Tensorf(), sp);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(out.at(i) == doctest::Approx(4.f));  // all corners
}

TEST_CASE("conv2d matches the 6-loop oracle, seed 42") {
  Rng rng(42);
  auto in = Tensord::uniform({2, 3, 8, 8}, rng, -1.0, 1.0);
  auto w = Tensord::randn({4, 3, 3, 3}, rng, 0.5);
  auto b = Tensord::randn({4}, rng, 0.5);
  ConvSpec sp{.in_channels = 3, .out_channels = 4, .kh = 3, .kw = 3, .kt = 1,
              .sh = 1, .sw = 1, .ph = 1, .pw = 1};
  auto fast = conv2d(in, w, b, sp);
  auto slow = oracles::conv2d_loops(in, w, b, sp);
  CHECK(oracles::max_rel_diff(fast, slow) < 1e-6);
}

TEST_CASE("conv3d kt=1 equals per-frame conv2d bit for bit") {
  Rng rng(3);
  const std::int64_t T = 3;
  auto in = Tensord::uniform({1, 2, T, 6, 6}, rng, -1.0, 1.0);
  auto w3 = Tensord::randn({4, 2, 1, 3, 3}, rng, 0.3);
  auto b = Tensord::randn({4}, rng, 0.3);
  ConvSpec sp3{.in_channels = 2, .out_channels = 4, .kh = 3, .kw = 3, .kt = 1,
               .sh = 1, .sw = 1, .ph = 1, .pw = 1, .pt = 0};
  auto out3 = conv3d(in, w3, b, sp3);

  auto w2 = reshape(w3, {4, 2, 3, 3});
  for (std::int64_t t = 0; t < T; ++t) {
    auto frame = reshape(narrow(in, 2, t, 1), {1, 2, 6, 6});
    auto out2 = conv2d(frame, w2, b, sp3);
    auto slice = reshape(narrow(out3, 2, t, 1), {1, 4, 6, 6});
    for (std::int64_t i = 0; i < out2.numel(); ++i) CHECK(slice.at(i) == out2.at(i));
  }
}

TEST_CASE("conv3d kt=2 with two frames yields one temporal window") {
  Rng rng(5);
  auto in = Tensorf::uniform({1, 2, 2, 4, 4}, rng, 0.f, 1.f);
  auto w = Tensorf::randn({2, 2, 2, 3, 3}, rng, 0.3f);
  ConvSpec sp{.in_channels = 2, .out_channels = 2, .kh = 3, .kw = 3, .kt = 2,
              .sh = 1, .sw = 1, .ph = 1, .pw = 1, .pt = 0};
  auto out = conv3d(in, w, Tensorf(), sp);
  CHECK(out.shape() == Shape{1, 2, 1, 4, 4});
}

TEST_CASE("conv3d matches the 7-loop oracle, seed 7") {
  Rng rng(7);
  auto in = Tensord::uniform({2, 2, 4, 6, 5}, rng, -1.0, 1.0);
  auto w = Tensord::randn({3, 2, 2, 3, 3}, rng, 0.4);
  auto b = Tensord::randn({3}, rng, 0.4);
  ConvSpec sp{.in_channels = 2, .out_channels = 3, .kh = 3, .kw = 3, .kt = 2,
              .sh = 1, .sw = 1, .ph = 1, .pw = 1, .pt = 0};
  auto fast = conv3d(in, w, b, sp);
  auto slow = oracles::conv3d_loops(in, w, b, sp);
  CHECK(oracles::max_rel_diff(fast, slow) < 1e-6);
}

TEST_CASE("conv agrees with loop oracle on 100 random configurations") {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const bool temporal = rng.bernoulli(0.5);
    ConvSpec sp;
    sp.in_channels = 1 + static_cast<int>(rng.randint(4));
    sp.out_channels = 1 + static_cast<int>(rng.randint(4));
    sp.kh = 1 + 2 * static_cast<int>(rng.randint(2));
    sp.kw = 1 + 2 * static_cast<int>(rng.randint(2));
    sp.sh = 1 + static_cast<int>(rng.randint(2));
    sp.sw = 1 + static_cast<int>(rng.randint(2));
    sp.ph = static_cast<int>(rng.randint(2));
    sp.pw = static_cast<int>(rng.randint(2));
    const std::int64_t N = 1 + rng.randint(2);
    const std::int64_t H = sp.kh + rng.randint(6);
    const std::int64_t W = sp.kw + rng.randint(6);
    if (temporal) {
      sp.kt = 1 + static_cast<int>(rng.randint(3));
      sp.pt = static_cast<int>(rng.randint(2));
      const std::int64_t T = sp.kt + rng.randint(3);
      auto in = Tensord::uniform({N, sp.in_channels, T, H, W}, rng, -1.0, 1.0);
      auto w = Tensord::randn({sp.out_channels, sp.in_channels, sp.kt, sp.kh, sp.kw}, rng, 0.5);
      auto b = Tensord::randn({sp.out_channels}, rng, 0.5);
      CHECK(oracles::max_rel_diff(conv3d(in, w, b, sp),
                                  oracles::conv3d_loops(in, w, b, sp)) < 1e-6);
    } else {
      auto in = Tensord::uniform({N, sp.in_channels, H, W}, rng, -1.0, 1.0);
      auto w = Tensord::randn({sp.out_channels, sp.in_channels, sp.kh, sp.kw}, rng, 0.5);
      auto b = Tensord::randn({sp.out_channels}, rng, 0.5);
      CHECK(oracles::max_rel_diff(conv2d(in, w, b, sp),
                                  oracles::conv2d_loops(in, w, b, sp)) < 1e-6);
    }
  }
}

TEST_CASE("conv results are independent of the worker count") {
  Rng rng(9);
  auto in = Tensorf::uniform({4, 3, 9, 9}, rng, -1.f, 1.f);
  auto w = Tensorf::randn({8, 3, 3, 3}, rng, 0.3f);
  auto b = Tensorf::randn({8}, rng, 0.3f);
  ConvSpec sp{.in_channels = 3, .out_channels = 8, .kh = 3, .kw = 3, .kt = 1,
              .sh = 2, .sw = 2, .ph = 1, .pw = 1};
  set_num_threads(1);
  auto ref = conv2d(in, w, b, sp);
  for (int workers : {2, 3, 4}) {
    set_num_threads(workers);
    auto out = conv2d(in, w, b, sp);
    for (std::int64_t i = 0; i < ref.numel(); ++i) REQUIRE(out.at(i) == ref.at(i));
  }
  set_num_threads(0);
}

TEST_CASE("conv shape errors are descriptive") {
  auto in = Tensorf::zeros({1, 3, 4, 4});
  auto w = Tensorf::zeros({2, 3, 3, 3});
  ConvSpec wrong_c{.in_channels = 4, .out_channels = 2, .kh = 3, .kw = 3};
  CHECK_THROWS_AS(conv2d(in, w, Tensorf(), wrong_c), std::invalid_argument);
  ConvSpec too_big{.in_channels = 3, .out_channels = 2, .kh = 3, .kw = 3,
                   .kt = 1, .sh = 1, .sw = 1, .ph = 0, .pw = 0};
  auto tiny = Tensorf::zeros({1, 3, 2, 2});
  CHECK_THROWS_WITH_AS(conv2d(tiny, w, Tensorf(), too_big),
                       doctest::Contains("zero-sized output"), std::invalid_argument);
}

TEST_CASE("activation fixed points and bounds") {
  auto zero = Tensorf::zeros({1});
  CHECK(sigmoid(zero).item() == doctest::Approx(0.5f));
  CHECK(tanh_act(zero).item() == doctest::Approx(0.f));

  // strict bounds are representable in float up to |x| ~ 8; beyond that the
  // true value rounds onto the bound itself
  Rng rng(17);
  auto x = Tensorf::uniform({1000}, rng, -8.f, 8.f);
  auto s = sigmoid(x);
  auto t = tanh_act(x);
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    CHECK(s.at(i) > 0.f);
    CHECK(s.at(i) < 1.f);
    CHECK(t.at(i) > -1.f);
    CHECK(t.at(i) < 1.f);
    CHECK(std::isfinite(s.at(i)));
  }
}

TEST_CASE("elementwise ops and shape guards") {
  Rng rng(4);
  auto x = Tensorf::uniform({3, 4}, rng, -2.f, 2.f);
  auto ones = Tensorf::full({3, 4}, 1.f);
  auto prod = mul(x, ones);
  CHECK(oracles::max_abs_diff(prod, x) == 0.0);
  auto other = Tensorf::zeros({4, 3});
  CHECK_THROWS_AS(add(x, other), std::invalid_argument);
}

TEST_CASE("upsample2x produces nearest-neighbour blocks") {
  auto in = Tensorf::from_data({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto out = upsample2x(in);
  REQUIRE(out.shape() == Shape{1, 1, 4, 4});
  const float expect[16] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(out.at(i) == expect[i]);
}

TEST_CASE("concat_channels stacks channel counts") {
  auto a = Tensorf::zeros({1, 3, 4, 4});
  auto b = Tensorf::zeros({1, 5, 4, 4});
  CHECK(concat_channels(a, b).shape() == Shape{1, 8, 4, 4});
  auto bad = Tensorf::zeros({1, 5, 3, 4});
  CHECK_THROWS_AS(concat_channels(a, bad), std::invalid_argument);
}

TEST_CASE("maxpool takes window maxima and ignores padding") {
  auto in = Tensorf::from_data({1, 1, 2, 2}, {1.f, 2.f, 3.f, 4.f});
  auto out = maxpool2d(in, 3, 1, 1);
  REQUIRE(out.shape() == Shape{1, 1, 2, 2});
  for (int i = 0; i < 4; ++i) CHECK(out.at(i) == 4.f);
}

TEST_CASE("backward of sum gives all-ones gradient") {
  Rng rng(8);
  auto x = Tensorf::uniform({2, 5}, rng, -1.f, 1.f, true);
  sum_all(x).backward();
  for (auto g : x.grad()) CHECK(g == 1.f);
}

TEST_CASE("backward of sum(x*x) gives 2x and repeated backward accumulates") {
  Rng rng(12);
  auto x = Tensorf::uniform({7}, rng, -1.f, 1.f, true);
  auto loss = sum_all(mul(x, x));
  loss.backward();
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(2.f * x.at(i)));
  loss.backward();  // no zeroing: gradients sum
  for (std::int64_t i = 0; i < x.numel(); ++i)
    CHECK(x.grad()[i] == doctest::Approx(4.f * x.at(i)));
}

TEST_CASE("backward requires a scalar") {
  auto x = Tensorf::zeros({2, 2}, true);
  auto y = mul(x, x);
  CHECK_THROWS_AS(y.backward(), std::invalid_argument);
}

TEST_CASE("tensor archive round-trips values, shapes and dtypes") {
  Rng rng(21);
  TensorArchive arc;
  auto a = Tensorf::uniform({3, 2, 2}, rng, -5.f, 5.f);
  auto d = Tensord::uniform({4}, rng, -5.0, 5.0);
  arc.put("a", a);
  arc.put("d", d);
  arc.meta["note"] = "fixture";
  const std::string path = "archive_roundtrip.bin";
  arc.save(path);
  auto back = TensorArchive::load(path);
  CHECK(back.meta.at("note") == "fixture");
  CHECK(back.dtype_of("a") == "float32");
  CHECK(back.dtype_of("d") == "float64");
  auto a2 = back.get_f32("a");
  REQUIRE(a2.shape() == a.shape());
  for (std::int64_t i = 0; i < a.numel(); ++i) CHECK(a2.at(i) == a.at(i));
  auto d2 = back.get_f64("d");
  for (std::int64_t i = 0; i < d.numel(); ++i) CHECK(d2.at(i) == d.at(i));
  CHECK_THROWS(back.get_f32("missing"));
  std::remove(path.c_str());
}
