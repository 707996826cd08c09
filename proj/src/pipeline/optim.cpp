// Copyright 2026 The dialect-lid Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>

#include "lid/pipeline/pipeline.hpp"

namespace lid::pipeline {

NamedGradients named_gradients(const nn::ParamStore& params, const ad::GradientMap& grads) {
  NamedGradients out;
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    if (const Vector* g = grads.find(e.tensor)) out.emplace(e.name, *g);
  }
  return out;
}

void adam_step(nn::ParamStore& params, const NamedGradients& grads, AdamState& state, Scalar lr,
               Scalar weight_decay) {
  for (const auto& [name, g] : grads) {
    if (!params.contains(name)) throw std::invalid_argument("gradient for unknown parameter " + name);
    if (g.size() != params.at(name).numel()) throw std::invalid_argument("gradient size mismatch for " + name);
    if (!g.allFinite()) throw Error(ErrorCode::kNumericalFault, "non-finite gradient for " + name);
  }
  ++state.step;
  const Scalar t = static_cast<Scalar>(state.step);
  const Scalar c1 = 1 - std::pow(kAdamBeta1, t);
  const Scalar c2 = 1 - std::pow(kAdamBeta2, t);
  for (const auto& e : params.entries()) {
    if (!e.trainable) continue;
    Vector& w = params.at(e.name).mutable_values();
    auto [mit, fresh_m] = state.m.try_emplace(e.name, Vector::Zero(w.size()));
    auto [vit, fresh_v] = state.v.try_emplace(e.name, Vector::Zero(w.size()));
    Vector& m = mit->second;
    Vector& v = vit->second;
    const auto git = grads.find(e.name);
    if (git != grads.end()) {
      m = kAdamBeta1 * m + (1 - kAdamBeta1) * git->second;
      v = kAdamBeta2 * v + (1 - kAdamBeta2) * git->second.cwiseAbs2();
    } else {
      m *= kAdamBeta1;
      v *= kAdamBeta2;
    }
    if (weight_decay != 0) w *= 1 - lr * weight_decay;
    w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kAdamEpsilon);
  }
}

}  // namespace lid::pipeline
