#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>

#include "cell_oracles.hpp"
#include "seqdet/cells.hpp"
#include "seqdet/gradcheck.hpp"

using namespace seqdet;

namespace {

template <typename T>
Tensor<T> step_of(const Tensor<T>& h_seq, std::int64_t t) {
  const auto& s = h_seq.shape();
  return reshape(narrow(h_seq, 1, t, 1), {s[0], s[2], s[3], s[4]});
}

double median_ms(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v[v.size() / 2];
}

}  // namespace

TEST_CASE("qrnn with zero weights collapses to all-zero hidden states") {
  auto cell = QrnnCell<double>::zeros(2);
  Rng rng(1);
  auto x = Tensord::uniform({1, 4, 2, 3, 3}, rng, -1.0, 1.0);
  auto [h_seq, st] = qrnn_forward(cell, x);
  CHECK(h_seq.shape() == x.shape());
  for (std::int64_t i = 0; i < h_seq.numel(); ++i) CHECK(h_seq.at(i) == 0.0);
}

TEST_CASE("qrnn saturated forget gate carries the incoming state through") {
  auto cell = QrnnCell<double>::zeros(2);
  for (std::int64_t i = 0; i < cell.b_f.numel(); ++i) cell.b_f.at(i) = 20.0;
  Rng rng(2);
  auto x = Tensord::uniform({1, 3, 2, 4, 4}, rng, -1.0, 1.0);
  TemporalState<double> state;
  state.kind = TemporalKind::kQrnn;
  state.h = Tensord::uniform({1, 2, 4, 4}, rng, -0.9, 0.9);
  state.carried = Tensord::uniform({1, 2, 4, 4}, rng, -1.0, 1.0);
  auto [h_seq, st] = qrnn_forward(cell, x, &state);
  for (std::int64_t t = 0; t < 3; ++t) {
    auto h_t = step_of(h_seq, t);
    for (std::int64_t i = 0; i < h_t.numel(); ++i)
      CHECK(h_t.at(i) == doctest::Approx(state.h.at(i)).epsilon(1e-6));
  }
}

TEST_CASE("qrnn matches the sequential loop oracle, seed 11") {
  Rng rng(11);
  auto cell = QrnnCell<double>::init(2, rng);
  auto x = Tensord::uniform({1, 3, 2, 4, 4}, rng, -1.0, 1.0);
  auto [h_seq, st] = qrnn_forward(cell, x);
  auto ref = oracles::qrnn_loops(cell, x);
  REQUIRE(ref.size() == 3);
  for (std::int64_t t = 0; t < 3; ++t)
    CHECK(oracles::max_rel_diff(step_of(h_seq, t), ref[static_cast<size_t>(t)]) < 1e-6);
}

TEST_CASE("qrnn and convlstm match loop oracles on 50 random configurations") {
  Rng rng(50);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t B = 1 + rng.randint(2);
    const std::int64_t Tn = 1 + rng.randint(3);
    const int C = 1 + static_cast<int>(rng.randint(3));
    const std::int64_t H = 2 + rng.randint(3);
    const std::int64_t W = 2 + rng.randint(3);
    auto x = Tensord::uniform({B, Tn, C, H, W}, rng, -1.0, 1.0);
    if (rng.bernoulli(0.5)) {
      auto cell = QrnnCell<double>::init(C, rng);
      auto [h_seq, st] = qrnn_forward(cell, x);
      auto ref = oracles::qrnn_loops(cell, x);
      for (std::int64_t t = 0; t < Tn; ++t)
        REQUIRE(oracles::max_rel_diff(step_of(h_seq, t), ref[static_cast<size_t>(t)]) < 1e-6);
    } else {
      auto cell = ConvLstmCell<double>::init(C, rng, 3, rng.bernoulli(0.5));
      auto [h_seq, st] = convlstm_forward(cell, x);
      auto ref = oracles::convlstm_loops(cell, x);
      for (std::int64_t t = 0; t < Tn; ++t)
        REQUIRE(oracles::max_rel_diff(step_of(h_seq, t), ref[static_cast<size_t>(t)]) < 1e-6);
    }
  }
}

TEST_CASE("convlstm zero-weight closed form") {
  auto cell = ConvLstmCell<double>::zeros(2);
  Rng rng(3);
  auto x = Tensord::uniform({1, 2, 2, 3, 3}, rng, -1.0, 1.0);
  auto [h_seq, st] = convlstm_forward(cell, x);
  // all gates sigmoid(0) = 0.5: s1 = 0.25, h1 = 0.5*tanh(0.25), s2 = 0.375
  auto h1 = step_of(h_seq, 0);
  const double h1_expect = 0.5 * std::tanh(0.25);
  CHECK(h1_expect == doctest::Approx(0.12245).epsilon(1e-4));
  for (std::int64_t i = 0; i < h1.numel(); ++i) CHECK(h1.at(i) == h1_expect);
  for (std::int64_t i = 0; i < st.s.numel(); ++i) CHECK(st.s.at(i) == 0.375);
}

TEST_CASE("convlstm saturated-low output gate silences the hidden state") {
  auto cell = ConvLstmCell<double>::zeros(2);
  for (std::int64_t i = 0; i < cell.b_o.numel(); ++i) cell.b_o.at(i) = -20.0;
  Rng rng(4);
  auto x = Tensord::uniform({1, 3, 2, 4, 4}, rng, -1.0, 1.0);
  auto [h_seq, st] = convlstm_forward(cell, x);
  for (std::int64_t i = 0; i < h_seq.numel(); ++i) CHECK(std::abs(h_seq.at(i)) < 1e-8);
}

TEST_CASE("convlstm matches the sequential loop oracle, seed 13") {
  Rng rng(13);
  auto cell = ConvLstmCell<double>::init(2, rng);
  auto x = Tensord::uniform({1, 3, 2, 4, 4}, rng, -1.0, 1.0);
  auto [h_seq, st] = convlstm_forward(cell, x);
  auto ref = oracles::convlstm_loops(cell, x);
  for (std::int64_t t = 0; t < 3; ++t)
    CHECK(oracles::max_rel_diff(step_of(h_seq, t), ref[static_cast<size_t>(t)]) < 1e-6);
}

TEST_CASE("reset_state gives back the fresh-stream behaviour and is idempotent") {
  Rng rng(6);
  auto cell = QrnnCell<double>::init(2, rng);
  auto x = Tensord::uniform({1, 2, 2, 4, 4}, rng, -1.0, 1.0);

  auto [h_fresh, st] = qrnn_forward(cell, x);
  auto reset = reset_state(st);
  CHECK(reset.fresh());
  auto reset_twice = reset_state(reset);
  CHECK(reset_twice.fresh());
  CHECK(reset_twice.kind == reset.kind);

  auto [h_after_reset, st2] = qrnn_forward(cell, x, &reset);
  CHECK(oracles::max_abs_diff(h_fresh, h_after_reset) == 0.0);
}

TEST_CASE("streaming over split sequences equals the joint call") {
  Rng rng(8);
  const std::int64_t Tn = 4;
  auto x = Tensord::uniform({1, Tn, 3, 4, 4}, rng, -1.0, 1.0);

  SUBCASE("qrnn, two 2-frame calls") {
    auto cell = QrnnCell<double>::init(3, rng);
    auto [h_joint, st_joint] = qrnn_forward(cell, x);
    auto first = reshape(narrow(x, 1, 0, 2), {1, 2, 3, 4, 4});
    auto second = reshape(narrow(x, 1, 2, 2), {1, 2, 3, 4, 4});
    auto [h1, st1] = qrnn_forward(cell, first);
    auto [h2, st2] = qrnn_forward(cell, second, &st1);
    CHECK(oracles::max_abs_diff(step_of(h_joint, 0), step_of(h1, 0)) < 1e-6);
    CHECK(oracles::max_abs_diff(step_of(h_joint, 1), step_of(h1, 1)) < 1e-6);
    CHECK(oracles::max_abs_diff(step_of(h_joint, 2), step_of(h2, 0)) < 1e-6);
    CHECK(oracles::max_abs_diff(step_of(h_joint, 3), step_of(h2, 1)) < 1e-6);
  }

  SUBCASE("every split point, both cells") {
    auto qcell = QrnnCell<double>::init(3, rng);
    auto lcell = ConvLstmCell<double>::init(3, rng);
    auto [hq_joint, sq] = qrnn_forward(qcell, x);
    auto [hl_joint, sl] = convlstm_forward(lcell, x);
    for (std::int64_t cut = 1; cut < Tn; ++cut) {
      auto a = reshape(narrow(x, 1, 0, cut), {1, cut, 3, 4, 4});
      auto b = reshape(narrow(x, 1, cut, Tn - cut), {1, Tn - cut, 3, 4, 4});
      {
        auto [h1, s1] = qrnn_forward(qcell, a);
        auto [h2, s2] = qrnn_forward(qcell, b, &s1);
        auto merged = concat<double>({h1, h2}, 1);
        REQUIRE(oracles::max_abs_diff(merged, hq_joint) < 1e-6);
      }
      {
        auto [h1, s1] = convlstm_forward(lcell, a);
        auto [h2, s2] = convlstm_forward(lcell, b, &s1);
        auto merged = concat<double>({h1, h2}, 1);
        REQUIRE(oracles::max_abs_diff(merged, hl_joint) < 1e-6);
      }
    }
  }
}

TEST_CASE("f-pool output is a convex mix of previous state and candidate") {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int C = 1 + static_cast<int>(rng.randint(3));
    auto cell = QrnnCell<double>::init(C, rng);
    auto x = Tensord::uniform({1, 4, C, 3, 3}, rng, -1.0, 1.0);
    auto [h_seq, st] = qrnn_forward(cell, x);

    // recompute candidates with the loop oracle, then bound h_t
    const int k = cell.ksize;
    ConvSpec sp3{.in_channels = C, .out_channels = C, .kh = k, .kw = k, .kt = 2,
                 .sh = 1, .sw = 1, .ph = k / 2, .pw = k / 2, .pt = 0};
    for (std::int64_t t = 1; t < 4; ++t) {
      auto window =
          oracles::pair_frames(oracles::frame_of(x, t - 1), oracles::frame_of(x, t));
      auto z = oracles::conv3d_loops(window, cell.w_z, cell.b_z, sp3);
      auto h_prev = step_of(h_seq, t - 1);
      auto h_t = step_of(h_seq, t);
      for (std::int64_t i = 0; i < h_t.numel(); ++i) {
        const double zt = std::tanh(z.at(i));
        const double lo = std::min(h_prev.at(i), zt) - 1e-9;
        const double hi = std::max(h_prev.at(i), zt) + 1e-9;
        REQUIRE(h_t.at(i) >= lo);
        REQUIRE(h_t.at(i) <= hi);
      }
    }
  }
}

TEST_CASE("per-step output shape equals input shape at three pyramid scales") {
  Rng rng(10);
  const std::vector<std::pair<int, std::int64_t>> scales = {{16, 8}, {32, 4}, {64, 2}};
  for (auto [C, S] : scales) {
    auto x = Tensorf::uniform({2, 2, C, S, S}, rng, -1.f, 1.f);
    auto qcell = QrnnCell<float>::init(C, rng);
    auto lcell = ConvLstmCell<float>::init(C, rng);
    auto [hq, s1] = qrnn_forward(qcell, x);
    auto [hl, s2] = convlstm_forward(lcell, x);
    CHECK(hq.shape() == x.shape());
    CHECK(hl.shape() == x.shape());
  }
}

TEST_CASE("cell errors: empty sequence and channel mismatch") {
  Rng rng(12);
  auto qcell = QrnnCell<float>::init(2, rng);
  auto bad_c = Tensorf::zeros({1, 2, 3, 4, 4});
  CHECK_THROWS_WITH_AS(qrnn_forward(qcell, bad_c), doctest::Contains("channel mismatch"),
                       std::invalid_argument);
  auto lcell = ConvLstmCell<float>::init(2, rng);
  CHECK_THROWS_AS(convlstm_forward(lcell, bad_c), std::invalid_argument);
}

TEST_CASE("both cells pass grad_check for inputs and all weights") {
  Rng rng(14);
  SUBCASE("qrnn") {
    auto cell = QrnnCell<double>::init(2, rng);
    std::function<Tensord(std::vector<Tensord>&)> f = [&](std::vector<Tensord>& in) {
      QrnnCell<double> c = cell;
      c.w_h0 = in[1];
      c.b_h0 = in[2];
      c.w_z = in[3];
      c.b_z = in[4];
      c.w_f = in[5];
      c.b_f = in[6];
      auto [h, st] = qrnn_forward(c, in[0]);
      return sum_all(mul(h, h));
    };
    std::vector<Tensord> inputs = {Tensord::uniform({1, 3, 2, 3, 3}, rng, -1.0, 1.0),
                                   cell.w_h0, cell.b_h0, cell.w_z,
                                   cell.b_z,  cell.w_f,  cell.b_f};
    CHECK(grad_check<double>(f, inputs) < 1e-4);
  }
  SUBCASE("convlstm") {
    auto cell = ConvLstmCell<double>::init(2, rng);
    std::function<Tensord(std::vector<Tensord>&)> f = [&](std::vector<Tensord>& in) {
      ConvLstmCell<double> c = cell;
      c.w_i = in[1];
      c.b_i = in[2];
      c.w_f = in[3];
      c.b_f = in[4];
      c.w_o = in[5];
      c.b_o = in[6];
      c.w_c = in[7];
      c.b_c = in[8];
      auto [h, st] = convlstm_forward(c, in[0]);
      return sum_all(mul(h, h));
    };
    std::vector<Tensord> inputs = {Tensord::uniform({1, 2, 2, 3, 3}, rng, -1.0, 1.0),
                                   cell.w_i, cell.b_i, cell.w_f, cell.b_f,
                                   cell.w_o, cell.b_o, cell.w_c, cell.b_c};
    CHECK(grad_check<double>(f, inputs) < 1e-4);
  }
}

TEST_CASE("qrnn forward is not slower than convlstm at equal channels") {
  // architectural throughput claim: two 3D gate convolutions against four
  // 2D convolutions over doubled input channels, batch 1, T=2, float
  Rng rng(15);
  const int C = 64;
  auto x = Tensorf::uniform({1, 2, C, 8, 8}, rng, -1.f, 1.f);
  auto qcell = QrnnCell<float>::init(C, rng);
  auto lcell = ConvLstmCell<float>::init(C, rng);
  NoGradGuard no_grad;

  auto time_one = [&](auto&& fn) {
    std::vector<double> runs;
    for (int i = 0; i < 35; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      fn();
      const auto t1 = std::chrono::steady_clock::now();
      if (i >= 5) runs.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return median_ms(runs);
  };

  const double q = time_one([&] { qrnn_forward(qcell, x); });
  const double l = time_one([&] { convlstm_forward(lcell, x); });
  CHECK(q <= l);
}
