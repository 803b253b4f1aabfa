#include <benchmark/benchmark.h>

#include "dreamnet/dataset.hpp"
#include "dreamnet/eeg.hpp"
#include "dreamnet/model.hpp"
#include "dreamnet/tensor.hpp"
#include "dreamnet/training.hpp"

using namespace dreamnet;

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.data) v = rng.uniform(-1.0, 1.0);
  return t;
}

// One generated record with EEG, tokenized against its own vocabulary.
struct Fixture {
  Vocab vocab;
  Example example;
  eeg::EegRecording recording;

  explicit Fixture(double mean_words) {
    GeneratorSpec spec = GeneratorSpec::defaults();
    spec.n = 1;
    spec.eeg_fraction = 1.0;
    spec.mean_words = mean_words;
    spec.sd_words = 1.0;
    spec.min_words = 10;
    const auto ds = generate(spec);
    const std::vector<std::string> texts = {ds.records.front().text};
    vocab = build_vocab(texts, 1);
    recording = ds.eeg.begin()->second;
    example = make_examples(ds.records, vocab, 256, featurize_all(ds.eeg)).front();
  }
};

ModelConfig model_config(const Fixture& f, std::size_t d_model) {
  ModelConfig mc;
  mc.vocab_size = f.vocab.size();
  mc.d_model = d_model;
  mc.init_seed = 1;
  return mc;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor(rng, n, n), b = random_tensor(rng, n, n);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(32)->Arg(128)->Arg(256);

static void BM_Predict(benchmark::State& state) {
  static const Fixture f(150);
  DreamNetModel model(model_config(f, static_cast<std::size_t>(state.range(0))));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict(f.example.tokens, &*f.example.features));
}
BENCHMARK(BM_Predict)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

// Forward, loss and backward for one multimodal sample.
static void BM_TrainStep(benchmark::State& state) {
  static const Fixture f(150);
  DreamNetModel model(model_config(f, static_cast<std::size_t>(state.range(0))));
  TrainConfig tc;
  Rng rng(2);
  for (auto _ : state) {
    Graph g;
    Var loss = example_loss(model, g, f.example, tc, Mode::kTrain, &rng);
    g.backward(loss);
    benchmark::DoNotOptimize(g.collect_param_grads());
  }
}
BENCHMARK(BM_TrainStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

static void BM_Featurize(benchmark::State& state) {
  static const Fixture f(20);
  for (auto _ : state) benchmark::DoNotOptimize(eeg::featurize(f.recording));
}
BENCHMARK(BM_Featurize)->Unit(benchmark::kMillisecond);

static void BM_Fft(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<std::complex<double>> x(n);
  for (auto& v : x) v = {rng.uniform(-1.0, 1.0), 0.0};
  for (auto _ : state) benchmark::DoNotOptimize(eeg::fft(x));
}
BENCHMARK(BM_Fft)->Arg(512)->Arg(8192)->Arg(1000);

BENCHMARK_MAIN();
