#pragma once

#include "mbvi/exact.hpp"

#include <Eigen/Dense>

namespace mbvi::kernels {

using Vec = Eigen::Ref<const Eigen::VectorXd>;
using OutVec = Eigen::Ref<Eigen::VectorXd>;

/// Reference implementations, single threaded.
namespace serial {

/// out(x) = sum_c rate_c(x) (f(x + v_c) - f(x))
void apply_backward(const TruncatedStateSpace& space, Vec f, OutVec out);
/// out(y) = sum_{x -> y} p(x) rate(x, y) - p(y) exit(y)
void apply_forward(const TruncatedStateSpace& space, Vec p, OutVec out);

}  // namespace serial

/// OpenMP versions; identical results to the serial ones (each output entry is written by one thread
/// with the same summation order).
namespace parallel {

void apply_backward(const TruncatedStateSpace& space, Vec f, OutVec out);
void apply_forward(const TruncatedStateSpace& space, Vec p, OutVec out);

}  // namespace parallel

}  // namespace mbvi::kernels
