// Copyright 2026 The compt2i Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "compt2i/error.hpp"

namespace compt2i {

inline double Cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: size mismatch");
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw InvalidArgument("cosine: zero-norm input");
  return a.dot(b) / (na * nb);
}

// Given dL/dcos, adds dL/da and dL/db.
inline void CosineBackward(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                           double d_cos, Eigen::VectorXd& da,
                           Eigen::VectorXd& db) {
  const double na = a.norm();
  const double nb = b.norm();
  const double c = a.dot(b) / (na * nb);
  da += d_cos * (b / (na * nb) - c * a / (na * na));
  db += d_cos * (a / (na * nb) - c * b / (nb * nb));
}

}  // namespace compt2i
