#include <benchmark/benchmark.h>

#include <vector>

#include "natscan/cnn.hpp"
#include "natscan/image_io.hpp"
#include "natscan/lstm.hpp"
#include "natscan/preprocess.hpp"
#include "natscan/reconstruct.hpp"
#include "natscan/rng.hpp"
#include "natscan/saliency.hpp"
#include "natscan/train.hpp"
#include "natscan/vlm.hpp"

using namespace natscan;

namespace {

const std::filesystem::path kData = NATSCAN_BENCH_DATA_DIR;

template <std::floating_point T>
struct Setup {
  cnn::CnnModel<T> net;
  Tensor<T> image;
  std::vector<Tensor<T>> grids;
  vlm::VlmLayerModel<T> model;

  Setup() {
    net = cnn::load_model<T>(kData / "toy_cnn.vlmw");
    std::vector<Tensor<T>> raw;
    for (const auto& p : io::list_images(kData / "corpus")) {
      auto img = io::read_image(p).cast<T>();
      if (image.size() == 0) image = img;
      raw.push_back(cnn::forward(net, img).at("conv3"));
    }
    auto pre = prep::fit<T>(raw);
    for (const auto& g : raw) grids.push_back(prep::apply(pre, g));
    model = vlm::make_model<T>("conv3", pre, 1);
  }
};

template <std::floating_point T>
Setup<T>& setup() {
  static Setup<T> s;
  return s;
}

template <std::floating_point T>
void BM_LstmStep(benchmark::State& state) {
  const auto d = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(1, "bench");
  auto stack = vlm::random_stack<T>(d, rng);
  auto x = uniform_tensor<T>({d}, -1, 1, rng);
  auto h = Tensor<T>::zeros({stack.hidden_dim()}), c = h;
  for (auto _ : state) benchmark::DoNotOptimize(vlm::lstm_step(stack.lstm1, x, h, c));
}
BENCHMARK(BM_LstmStep<double>)->Arg(16)->Arg(96);
BENCHMARK(BM_LstmStep<float>)->Arg(16)->Arg(96);

template <std::floating_point T>
void BM_CnnForward(benchmark::State& state) {
  auto& s = setup<T>();
  for (auto _ : state) benchmark::DoNotOptimize(cnn::forward(s.net, s.image));
}
BENCHMARK(BM_CnnForward<double>);
BENCHMARK(BM_CnnForward<float>);

template <std::floating_point T>
void BM_UnnaturalnessMap(benchmark::State& state) {
  auto& s = setup<T>();
  for (auto _ : state) benchmark::DoNotOptimize(vlm::unnaturalness_map(s.model, s.grids[0], true));
}
BENCHMARK(BM_UnnaturalnessMap<double>);
BENCHMARK(BM_UnnaturalnessMap<float>);

template <std::floating_point T>
void BM_TrainIteration(benchmark::State& state) {
  auto& s = setup<T>();
  vlm::TrainConfig cfg;
  cfg.lr = 0.1;
  cfg.max_iters = 1;
  cfg.batch = 16;
  for (auto _ : state) {
    benchmark::DoNotOptimize(vlm::train(s.model, std::span<const Tensor<T>>(s.grids), cfg));
  }
}
BENCHMARK(BM_TrainIteration<double>)->Unit(benchmark::kMillisecond);

void BM_ReconstructionObjective(benchmark::State& state) {
  auto& s = setup<double>();
  recon::ReconstructionConfig cfg;
  std::vector<vlm::VlmLayerModel<double>> models{s.model};
  auto taps = cnn::forward(s.net, s.image);
  auto p = recon::make_problem(s.net, {{"conv3", taps.at("conv3")}},
                               std::span<const vlm::VlmLayerModel<double>>(models), cfg);
  for (auto _ : state) benchmark::DoNotOptimize(recon::objective(p, s.image));
}
BENCHMARK(BM_ReconstructionObjective)->Unit(benchmark::kMillisecond);

void BM_GaussianBlur(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(2, "bench");
  auto map = uniform_tensor<double>({n, n}, 0, 1, rng);
  for (auto _ : state) benchmark::DoNotOptimize(sal::gaussian_blur(map, 0.03 * double(n)));
}
BENCHMARK(BM_GaussianBlur)->Arg(32)->Arg(256);

void BM_ShuffledAuc(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng = make_rng(3, "bench");
  auto map = uniform_tensor<double>({64, 64}, 0, 1, rng);
  std::uniform_real_distribution<double> u(0, 1);
  std::vector<sal::Point> pos(n / 10), neg(n);
  for (auto& p : pos) p = {u(rng), u(rng)};
  for (auto& p : neg) p = {u(rng), u(rng)};
  for (auto _ : state) benchmark::DoNotOptimize(sal::shuffled_auc(map, pos, neg));
}
BENCHMARK(BM_ShuffledAuc)->Arg(500)->Arg(5000);

}  // namespace
BENCHMARK_MAIN();
