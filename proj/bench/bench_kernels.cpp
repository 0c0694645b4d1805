// Serial versus OpenMP kernels: covariance update by dimension, and the
// scenario ensemble map.

#include <benchmark/benchmark.h>

#include <random>

#include "rarx/ensemble.hpp"
#include "rarx/grid.hpp"
#include "rarx/kernels.hpp"
#include "rarx/rls.hpp"
#include "rarx/scenario.hpp"

using namespace rarx;

namespace {

struct UpdateInputs {
  Eigen::MatrixXd P;
  Eigen::VectorXd g, h;
  double denom = 0.0;
};

UpdateInputs make_inputs(Eigen::Index n) {
  std::mt19937_64 rng(static_cast<std::uint64_t>(n));
  std::normal_distribution<double> n01;
  Eigen::MatrixXd a(n, n);
  for (auto& x : a.reshaped()) x = n01(rng);
  UpdateInputs in;
  in.P = a * a.transpose() + Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd phi(n);
  for (auto& x : phi) x = n01(rng);
  in.g = in.P * phi;
  in.h = in.P.transpose() * phi;
  in.denom = 1.0 + phi.dot(in.g);
  return in;
}

template <void (*Kernel)(Eigen::MatrixXd&, const Eigen::VectorXd&, const Eigen::VectorXd&, double, double)>
void BM_Covariance(benchmark::State& state) {
  const auto in = make_inputs(state.range(0));
  Eigen::MatrixXd P = in.P;
  for (auto _ : state) {
    P = in.P;
    Kernel(P, in.g, in.h, in.denom, 0.999);
    benchmark::DoNotOptimize(P.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0) * state.range(0));
}

void BM_RlsStep(benchmark::State& state) {
  const int order = static_cast<int>(state.range(0));
  auto s = init_identifier({order, 2, 2, 0.999, 1e4});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01;
  Eigen::VectorXd phi(s.config.regressor_size()), y(2);
  for (auto _ : state) {
    for (auto& x : phi) x = n01(rng);
    for (auto& x : y) x = n01(rng);
    rls_update(s, y, phi);
  }
}

ScenarioConfig short_run() {
  ScenarioConfig c = default_profile();
  c.duration = 2.0;
  c.calibration.duration = 2.0;
  return c;
}

void BM_EnsembleSerial(benchmark::State& state) {
  const auto c = short_run();
  for (auto _ : state) {
    auto out = map_serial(static_cast<std::size_t>(state.range(0)), [&](std::size_t i) {
      ScenarioConfig x = c;
      x.excitation.seed = i;
      return execute_scenario(x).report.max_d;
    });
    benchmark::DoNotOptimize(out.data());
  }
}

void BM_EnsembleParallel(benchmark::State& state) {
  const auto c = short_run();
  for (auto _ : state) {
    auto out = map_parallel(static_cast<std::size_t>(state.range(0)), [&](std::size_t i) {
      ScenarioConfig x = c;
      x.excitation.seed = i;
      return execute_scenario(x).report.max_d;
    });
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["threads"] = ensemble_threads();
}

}  // namespace

BENCHMARK(BM_Covariance<kernels::covariance_update_serial>)->Arg(12)->Arg(48)->Arg(96)->Arg(192)->Arg(384);
BENCHMARK(BM_Covariance<kernels::covariance_update_omp>)->Arg(12)->Arg(48)->Arg(96)->Arg(192)->Arg(384);
BENCHMARK(BM_RlsStep)->Arg(1)->Arg(3)->Arg(6);
BENCHMARK(BM_EnsembleSerial)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_EnsembleParallel)->Arg(4)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
