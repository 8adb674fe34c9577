// Serial vs OpenMP generator kernels on a truncated predator-prey space.

#include "mbvi/kernels.hpp"

#include <CLI11.hpp>
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <random>

using namespace mbvi;

namespace {

template <class F>
double time_per_call(F&& f, int reps) {
  f();  // warm up
  const auto t0 = std::chrono::steady_clock::now();
  for (int k = 0; k < reps; ++k) f();
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / reps;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Benchmark of the serial and OpenMP generator kernels"};
  int bound = 150, reps = 200;
  app.add_option("--bound", bound, "truncation bound per species")->check(CLI::PositiveNumber);
  app.add_option("--reps", reps, "calls per measurement")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const std::vector<double> c{0.5, 0.025, 0.025, 0.5};
  const TruncatedStateSpace space = truncate(models::predator_prey(c, {20, 20}), {bound, bound});
  const long n = static_cast<long>(space.size());
  Eigen::VectorXd f(n), a(n), b(n);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (long i = 0; i < n; ++i) f[i] = u(rng);

  std::printf("states %ld, threads %d, reps %d\n", n, omp_get_max_threads(), reps);
  std::printf("%-10s %14s %14s %9s %10s\n", "kernel", "serial [ms]", "parallel [ms]", "speedup", "max diff");
  {
    const double s = time_per_call([&] { kernels::serial::apply_backward(space, f, a); }, reps);
    const double p = time_per_call([&] { kernels::parallel::apply_backward(space, f, b); }, reps);
    std::printf("%-10s %14.4f %14.4f %9.2f %10.2g\n", "backward", 1e3 * s, 1e3 * p, s / p, (a - b).cwiseAbs().maxCoeff());
  }
  {
    const double s = time_per_call([&] { kernels::serial::apply_forward(space, f, a); }, reps);
    const double p = time_per_call([&] { kernels::parallel::apply_forward(space, f, b); }, reps);
    std::printf("%-10s %14.4f %14.4f %9.2f %10.2g\n", "forward", 1e3 * s, 1e3 * p, s / p, (a - b).cwiseAbs().maxCoeff());
  }
  return 0;
}
