#include "mbvi/kernels.hpp"

namespace mbvi::kernels {

namespace {

// Below this many states the threading overhead dominates.
constexpr long kParallelThreshold = 4096;

inline double backward_entry(const TruncatedStateSpace& space, const double* f, long x) {
  double acc = 0.0;
  const double fx = f[x];
  for (int c = 0; c < space.class_count(); ++c) {
    const long y = space.target(c)[static_cast<std::size_t>(x)];
    if (y >= 0) acc += space.rate(c)[static_cast<std::size_t>(x)] * (f[y] - fx);
  }
  return acc;
}

inline double forward_entry(const TruncatedStateSpace& space, const double* p, long y) {
  const auto offsets = space.in_offsets();
  const auto source = space.in_source();
  const auto cls = space.in_class();
  double acc = -p[y] * space.exit_rate()[static_cast<std::size_t>(y)];
  for (std::size_t k = offsets[static_cast<std::size_t>(y)]; k < offsets[static_cast<std::size_t>(y) + 1]; ++k) {
    const long x = source[k];
    acc += p[x] * space.rate(cls[k])[static_cast<std::size_t>(x)];
  }
  return acc;
}

}  // namespace

namespace serial {

void apply_backward(const TruncatedStateSpace& space, Vec f, OutVec out) {
  const long n = static_cast<long>(space.size());
  for (long x = 0; x < n; ++x) out[x] = backward_entry(space, f.data(), x);
}

void apply_forward(const TruncatedStateSpace& space, Vec p, OutVec out) {
  const long n = static_cast<long>(space.size());
  for (long y = 0; y < n; ++y) out[y] = forward_entry(space, p.data(), y);
}

}  // namespace serial

namespace parallel {

void apply_backward(const TruncatedStateSpace& space, Vec f, OutVec out) {
  const long n = static_cast<long>(space.size());
  const double* fd = f.data();
  double* od = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (long x = 0; x < n; ++x) od[x] = backward_entry(space, fd, x);
}

void apply_forward(const TruncatedStateSpace& space, Vec p, OutVec out) {
  const long n = static_cast<long>(space.size());
  const double* pd = p.data();
  double* od = out.data();
#pragma omp parallel for schedule(static) if (n > kParallelThreshold)
  for (long y = 0; y < n; ++y) od[y] = forward_entry(space, pd, y);
}

}  // namespace parallel

}  // namespace mbvi::kernels
