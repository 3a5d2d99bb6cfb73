// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <random>
#include <string>

#include "pointbox/nn/ops.hpp"

namespace pointbox::nn {

enum class Init { kaiming, unit_fan_in, small_normal, zeros };

/// Fills with N(0, std) where std depends on `init` and the fan-in.
template <typename T>
void initialize(Tensor<T>& t, Init init, int fan_in, std::mt19937_64& rng, double small_std = 0.01) {
  double std_dev = 0.0;
  switch (init) {
    case Init::kaiming: std_dev = std::sqrt(2.0 / fan_in); break;
    case Init::unit_fan_in: std_dev = std::sqrt(1.0 / fan_in); break;
    case Init::small_normal: std_dev = small_std; break;
    case Init::zeros: break;
  }
  std::normal_distribution<double> dist(0.0, 1.0);
  for (T& v : t.data) v = init == Init::zeros ? T(0) : static_cast<T>(dist(rng) * std_dev);
}

template <typename T>
struct Conv2d {
  Parameter<T> weight;
  Parameter<T> bias;
  int stride = 1;
  int pad = 1;

  Conv2d() = default;
  Conv2d(const std::string& name, int in, int out, int kernel, int stride_, std::mt19937_64& rng,
         Init init = Init::kaiming)
      : weight(name + ".weight", Tensor<T>({out, in, kernel, kernel})),
        bias(name + ".bias", Tensor<T>({out})),
        stride(stride_),
        pad(kernel / 2) {
    initialize(weight.value, init, in * kernel * kernel, rng);
  }

  Var operator()(Tape<T>& tape, Var x) {
    return conv2d(tape, x, tape.parameter(weight), tape.parameter(bias), stride, pad);
  }
  void collect(ParameterList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

template <typename T>
struct GroupNorm {
  Parameter<T> gamma;
  Parameter<T> beta;
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(const std::string& name, int channels, int groups_)
      : gamma(name + ".gamma", Tensor<T>({channels}, T(1))),
        beta(name + ".beta", Tensor<T>({channels})),
        groups(groups_) {}

  Var operator()(Tape<T>& tape, Var x) {
    return group_norm(tape, x, tape.parameter(gamma), tape.parameter(beta), groups);
  }
  void collect(ParameterList<T>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <typename T>
struct Linear {
  Parameter<T> weight;
  Parameter<T> bias;

  Linear() = default;
  Linear(const std::string& name, int in, int out, std::mt19937_64& rng, Init init = Init::kaiming,
         double small_std = 0.01)
      : weight(name + ".weight", Tensor<T>({out, in})), bias(name + ".bias", Tensor<T>({out})) {
    initialize(weight.value, init, in, rng, small_std);
  }

  Var operator()(Tape<T>& tape, Var x) {
    return linear(tape, x, tape.parameter(weight), tape.parameter(bias));
  }
  void collect(ParameterList<T>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

}  // namespace pointbox::nn
