#include <benchmark/benchmark.h>

#include "isplit/gradcam.hpp"
#include "isplit/model.hpp"
#include "isplit/rng.hpp"
#include "isplit/spearman.hpp"
#include "isplit/wire.hpp"

using namespace isplit;

namespace {

TensorF random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  TensorF t({1, size, size});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

void BM_forward_vgg_micro(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Model m = build_model("vgg-micro", {1, size, size}, 8, 1);
  const TensorF img = random_image(size, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, img));
}
BENCHMARK(BM_forward_vgg_micro)->Arg(24)->Arg(32)->Arg(64);

void BM_backward_vgg_micro(benchmark::State& state) {
  const int size = static_cast<int>(state.range(0));
  const Model m = build_model("vgg-micro", {1, size, size}, 8, 1);
  const TensorF img = random_image(size, 2);
  for (auto _ : state) {
    auto trace = forward_retaining(m, img);
    const TensorId loss = trace.tape.softmax_cross_entropy(trace.logits, 3);
    benchmark::DoNotOptimize(trace.tape.backward(loss));
  }
}
BENCHMARK(BM_backward_vgg_micro)->Arg(24)->Arg(32);

void BM_importance_maps_all_layers(benchmark::State& state) {
  const Model m = build_model("vgg-micro", {1, 32, 32}, 8, 1);
  const TensorF img = random_image(32, 3);
  const std::vector<int> layers = cui_layers(m);
  for (auto _ : state)
    benchmark::DoNotOptimize(importance_maps(m, img, 2, layers));
}
BENCHMARK(BM_importance_maps_all_layers);

void BM_frame_roundtrip(benchmark::State& state) {
  Rng rng(7);
  TensorF t({static_cast<int>(state.range(0))});
  for (auto& v : t.data) v = static_cast<float>(rng.uniform());
  const WireFrame f = tensor_frame(MsgType::infer_request, 1, t);
  for (auto _ : state) {
    const auto bytes = encode_frame(f);
    benchmark::DoNotOptimize(decode_frame(bytes));
  }
  state.SetBytesProcessed(state.iterations() * static_cast<long long>(t.numel()) * 4);
}
BENCHMARK(BM_frame_roundtrip)->Arg(1024)->Arg(65536);

void BM_spearman(benchmark::State& state) {
  Rng rng(11);
  std::vector<double> xs, ys;
  for (int i = 0; i < state.range(0); ++i) {
    xs.push_back(rng.uniform());
    ys.push_back(rng.uniform());
  }
  for (auto _ : state) benchmark::DoNotOptimize(spearman_rho(xs, ys));
}
BENCHMARK(BM_spearman)->Arg(100)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
