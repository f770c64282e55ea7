#include <benchmark/benchmark.h>

#include "seqdet/cells.hpp"
#include "seqdet/ops.hpp"

using namespace seqdet;

namespace {

// batch 1, T=2, single precision: the configuration the detector runs in.
template <TemporalKind Kind>
void bench_cell(benchmark::State& state) {
  const int channels = static_cast<int>(state.range(0));
  const std::int64_t hw = state.range(1);
  Rng rng(7);
  auto x = Tensorf::uniform({1, 2, channels, hw, hw}, rng, -1.f, 1.f);
  NoGradGuard no_grad;
  if constexpr (Kind == TemporalKind::kQrnn) {
    auto cell = QrnnCell<float>::init(channels, rng);
    for (auto _ : state) {
      auto [h, st] = qrnn_forward(cell, x);
      benchmark::DoNotOptimize(h.data());
    }
  } else {
    auto cell = ConvLstmCell<float>::init(channels, rng);
    for (auto _ : state) {
      auto [h, st] = convlstm_forward(cell, x);
      benchmark::DoNotOptimize(h.data());
    }
  }
}

void BM_QrnnForward(benchmark::State& state) { bench_cell<TemporalKind::kQrnn>(state); }
void BM_ConvLstmForward(benchmark::State& state) { bench_cell<TemporalKind::kConvLstm>(state); }

void BM_Conv2d(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const std::int64_t hw = state.range(1);
  Rng rng(3);
  auto x = Tensorf::uniform({1, c, hw, hw}, rng, -1.f, 1.f);
  auto w = Tensorf::randn({c, c, 3, 3}, rng, 0.1f);
  ConvSpec sp{.in_channels = c, .out_channels = c, .kh = 3, .kw = 3, .kt = 1,
              .sh = 1, .sw = 1, .ph = 1, .pw = 1};
  NoGradGuard no_grad;
  for (auto _ : state) {
    auto y = conv2d(x, w, Tensorf(), sp);
    benchmark::DoNotOptimize(y.data());
  }
}

}  // namespace

BENCHMARK(BM_QrnnForward)->Args({128, 8})->Args({256, 4})->Args({512, 2});
BENCHMARK(BM_ConvLstmForward)->Args({128, 8})->Args({256, 4})->Args({512, 2});
BENCHMARK(BM_Conv2d)->Args({64, 16})->Args({128, 8})->Args({256, 4});

BENCHMARK_MAIN();
