#pragma once

#include <random>

#include "merit/autodiff.hpp"

namespace merit::testing {

inline ad::Tensor random_tensor(std::mt19937_64& rng, ad::Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor t(std::move(shape));
  for (auto& v : t.data()) v = u(rng);
  return t;
}

}  // namespace merit::testing

#include "merit/verify.hpp"

namespace merit::testing {

using verify::store_grad_check;

}  // namespace merit::testing
