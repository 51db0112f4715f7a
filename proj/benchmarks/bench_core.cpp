#include <benchmark/benchmark.h>

#include "repr_robust/attack.hpp"
#include "repr_robust/certification.hpp"
#include "repr_robust/dataset.hpp"
#include "repr_robust/encoder.hpp"
#include "repr_robust/fourier.hpp"
#include "repr_robust/measures.hpp"
#include "repr_robust/training.hpp"

namespace {

using namespace repr_robust;

Encoder reference_encoder() {
  EncoderSpec s;
  s.input_side = 16;
  s.hidden = {128};
  s.representation_dim = 32;
  s.normalize_output = true;
  s.seed = 7;
  return Encoder(s);
}

const Dataset& reference_data() {
  static const Dataset d = generate(reference_synth_spec());
  return d;
}

Tensor first_rows(std::size_t n) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * 7 % reference_data().size();
  return reference_data().subset(idx).images;
}

void BM_UPgdBatch(benchmark::State& state) {
  const Encoder f = reference_encoder();
  const Tensor x = first_rows(static_cast<std::size_t>(state.range(0)));
  AttackConfig cfg;
  cfg.iterations = 5;
  for (auto _ : state) benchmark::DoNotOptimize(u_pgd_batch(f, x, cfg).adversarial);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_UPgdBatch)->Arg(1)->Arg(64);

void BM_LowpassRows(benchmark::State& state) {
  const Tensor x = first_rows(64);
  for (auto _ : state) benchmark::DoNotOptimize(lowpass_rows(x, 16, 1, kDefaultLowpassFraction));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_LowpassRows);

void BM_TrainStep(benchmark::State& state) {
  TrainConfig cfg;
  cfg.adversarial = static_cast<AdversarialMode>(state.range(0));
  TrainState s = initial_state(reference_encoder(), cfg);
  const Tensor batch = first_rows(cfg.batch_size);
  std::uint64_t step = 0;
  for (auto _ : state) benchmark::DoNotOptimize(train_step(s, batch, 16, 1, cfg, cfg.lr, ++step));
}
BENCHMARK(BM_TrainStep)->Arg(static_cast<int>(AdversarialMode::None))->Arg(static_cast<int>(AdversarialMode::Targeted));

void BM_CertifyClassifier(benchmark::State& state) {
  const Encoder f = reference_encoder();
  const Tensor x = first_rows(1);
  SmoothingConfig cfg;
  cfg.n = static_cast<std::size_t>(state.range(0));
  const BatchClassifier g = [&](const Tensor& batch) {
    const Tensor r = f.evaluate(clip(batch));
    std::vector<int> out(r.dim(0));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = r.at(i, 0) > r.at(i, 1) ? 0 : 1;
    return out;
  };
  for (auto _ : state) benchmark::DoNotOptimize(certify_classifier(g, x, cfg, 2));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CertifyClassifier)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_DivergenceDistribution(benchmark::State& state) {
  const Encoder f = reference_encoder();
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        build_divergence_distribution(f, reference_data().images, 256, Divergence{}, 1));
  }
}
BENCHMARK(BM_DivergenceDistribution)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
