// Copyright (c) 2026, The graphormer-kit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "graphormer/autodiff.hpp"

namespace graphormer::ad {

/// Scalar-valued function of several tensors, recorded on the given tape.
template <typename Scalar>
using MultiFunction = std::function<Var<Scalar>(Tape<Scalar>&, std::span<const Var<Scalar>>)>;

template <typename Scalar>
using Function = std::function<Var<Scalar>(Tape<Scalar>&, Var<Scalar>)>;

/// Central differences on every coordinate of every input versus the tape
/// gradient. Returns max |g_fd - g_ad| / max(1, |g_fd|, |g_ad|).
template <typename Scalar>
double finite_difference_check(const MultiFunction<Scalar>& f, const std::vector<Matrix<Scalar>>& inputs,
                               double h = 1e-5) {
  std::vector<Matrix<Scalar>> analytic;
  {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    for (const auto& x : inputs) vars.push_back(tape.leaf(x));
    auto out = f(tape, vars);
    tape.backward(out);
    for (const auto& v : vars) {
      analytic.push_back(tape.requires_grad(v) && tape.grad(v).size() ? tape.grad(v)
                                                                      : Matrix<Scalar>::Zero(v.rows(), v.cols()));
    }
  }

  auto evaluate = [&](const std::vector<Matrix<Scalar>>& xs) {
    Tape<Scalar> tape;
    std::vector<Var<Scalar>> vars;
    for (const auto& x : xs) vars.push_back(tape.constant(x));
    return static_cast<double>(f(tape, vars).value()(0, 0));
  };

  double worst = 0.0;
  std::vector<Matrix<Scalar>> probe = inputs;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
      const Scalar orig = inputs[k].data()[i];
      probe[k].data()[i] = orig + Scalar(h);
      const double up = evaluate(probe);
      probe[k].data()[i] = orig - Scalar(h);
      const double down = evaluate(probe);
      probe[k].data()[i] = orig;
      const double fd = (up - down) / (2.0 * h);
      const double ad = static_cast<double>(analytic[k].data()[i]);
      worst = std::max(worst, std::abs(fd - ad) / std::max({1.0, std::abs(fd), std::abs(ad)}));
    }
  }
  return worst;
}

template <typename Scalar>
double finite_difference_check(const Function<Scalar>& f, const Matrix<Scalar>& x, double h = 1e-5) {
  MultiFunction<Scalar> wrapped = [&f](Tape<Scalar>& t, std::span<const Var<Scalar>> v) { return f(t, v[0]); };
  return finite_difference_check<Scalar>(wrapped, std::vector<Matrix<Scalar>>{x}, h);
}

}  // namespace graphormer::ad
