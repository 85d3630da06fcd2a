// Serial reference vs OpenMP for each kernel. Threads follow OMP_NUM_THREADS.
// The serial donor search and case placements are brute-force scans kept as
// oracles; their OpenMP versions binary-search sorted input, so those pairs
// run at smaller sizes.

#include <algorithm>
#include <cmath>
#include <map>

#include <benchmark/benchmark.h>

#include "framr/kernels.hpp"
#include "framr/random.hpp"

using namespace framr;

namespace {

struct Design {
  Eigen::MatrixXd x;
  Eigen::VectorXd w, v, beta;
};

const Design& design(Eigen::Index n) {
  static std::map<Eigen::Index, Design> cache;
  auto [it, fresh] = cache.try_emplace(n);
  if (fresh) {
    Rng rng(1);
    auto& d = it->second;
    const Eigen::Index p = 12;
    d.x.resize(n, p);
    d.w.resize(n);
    d.v.resize(n);
    d.beta.resize(p);
    for (Eigen::Index i = 0; i < n; ++i) {
      for (Eigen::Index j = 0; j < p; ++j) d.x(i, j) = rng.normal();
      d.w(i) = rng.uniform();
      d.v(i) = rng.normal();
    }
    for (Eigen::Index j = 0; j < p; ++j) d.beta(j) = rng.normal();
  }
  return it->second;
}

std::vector<double> draws(std::size_t n, std::uint64_t seed, double shift = 0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = std::round((rng.normal() + shift) * 10) / 10;
  return v;
}

template <auto Fn>
void gram(benchmark::State& s) {
  const auto& d = design(s.range(0));
  for (auto _ : s) benchmark::DoNotOptimize(Fn(d.x, d.w));
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

template <auto Fn>
void cross(benchmark::State& s) {
  const auto& d = design(s.range(0));
  for (auto _ : s) benchmark::DoNotOptimize(Fn(d.x, d.v));
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

template <auto Fn>
void predictor(benchmark::State& s) {
  const auto& d = design(s.range(0));
  for (auto _ : s) benchmark::DoNotOptimize(Fn(d.x, d.beta));
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

template <auto Fn>
void donors(benchmark::State& s) {
  auto pool = draws(static_cast<std::size_t>(s.range(0)), 2);
  std::sort(pool.begin(), pool.end());
  const auto recipients = draws(static_cast<std::size_t>(s.range(0)) / 3, 3);
  for (auto _ : s) benchmark::DoNotOptimize(Fn(pool, recipients, 5));
  s.SetItemsProcessed(s.iterations() * static_cast<std::int64_t>(recipients.size()));
}

template <auto Fn>
void placements(benchmark::State& s) {
  const auto cases = draws(static_cast<std::size_t>(s.range(0)) / 10, 4, 0.5);
  const auto controls = draws(static_cast<std::size_t>(s.range(0)), 5);
  for (auto _ : s) benchmark::DoNotOptimize(Fn(cases, controls));
  s.SetItemsProcessed(s.iterations() * s.range(0));
}

}  // namespace

#define FRAMR_PAIR(name, fn, small, large)                                                   \
  BENCHMARK(name<kernels::serial::fn>)->Name(#fn "/serial")->Arg(small)->Arg(large); \
  BENCHMARK(name<kernels::omp::fn>)->Name(#fn "/omp")->Arg(small)->Arg(large)

FRAMR_PAIR(gram, weighted_gram, 1 << 14, 1 << 18);
FRAMR_PAIR(cross, cross_product, 1 << 14, 1 << 18);
FRAMR_PAIR(predictor, linear_predictor, 1 << 14, 1 << 18);
FRAMR_PAIR(donors, nearest_donors, 1 << 12, 1 << 15);
FRAMR_PAIR(placements, case_placements, 1 << 12, 1 << 15);

BENCHMARK_MAIN();
