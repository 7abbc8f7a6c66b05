// Serial vs OpenMP kernels. Arguments are the square matrix size.

#include <random>

#include <benchmark/benchmark.h>

#include "iocc/kernels.hpp"

using iocc::Matrix;
namespace k = iocc::kernels;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, unsigned seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto &v : m.flat()) v = n(g);
  return m;
}

template <void (*Fn)(const Matrix &, const Matrix &, Matrix &)> void bm_matmul(benchmark::State &st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  Matrix c;
  for (auto _ : st) {
    Fn(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  st.SetItemsProcessed(st.iterations() * static_cast<long>(n * n * n));
}

template <void (*Fn)(const Matrix &, std::span<const double>, double, std::span<double>)>
void bm_lse(benchmark::State &st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix m = random_matrix(n, n, 3);
  const iocc::Vector g(n, 0.1);
  iocc::Vector out(n);
  for (auto _ : st) {
    Fn(m, g, 0.5, out);
    benchmark::DoNotOptimize(out.data());
  }
}

template <void (*Fn)(const Matrix &, Matrix &)> void bm_gram(benchmark::State &st) {
  const auto n = static_cast<std::size_t>(st.range(0));
  const Matrix a = random_matrix(n, 16, 4);
  Matrix s;
  for (auto _ : st) {
    Fn(a, s);
    benchmark::DoNotOptimize(s.data());
  }
}

} // namespace

BENCHMARK(bm_matmul<k::serial::matmul>)->Name("matmul/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<k::parallel::matmul>)->Name("matmul/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<k::serial::matmul_bt>)->Name("matmul_bt/serial")->Arg(64)->Arg(256);
BENCHMARK(bm_matmul<k::parallel::matmul_bt>)->Name("matmul_bt/parallel")->Arg(64)->Arg(256);
BENCHMARK(bm_lse<k::serial::row_lse>)->Name("row_lse/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_lse<k::parallel::row_lse>)->Name("row_lse/parallel")->Arg(256)->Arg(1024);
BENCHMARK(bm_lse<k::serial::col_lse>)->Name("col_lse/serial")->Arg(256)->Arg(1024);
BENCHMARK(bm_lse<k::parallel::col_lse>)->Name("col_lse/parallel")->Arg(256)->Arg(1024);
BENCHMARK(bm_gram<k::serial::cosine_gram>)->Name("cosine_gram/serial")->Arg(200)->Arg(1000);
BENCHMARK(bm_gram<k::parallel::cosine_gram>)->Name("cosine_gram/parallel")->Arg(200)->Arg(1000);

BENCHMARK_MAIN();
