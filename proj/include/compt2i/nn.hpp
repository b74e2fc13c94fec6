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

// Minimal dense layers with hand-written backward passes and Adam.
// Gradients accumulate into Param::grad until ZeroGrad().

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/rng.hpp"
#include "json.hpp"

namespace compt2i {

struct Param {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd m;
  Eigen::MatrixXd v;

  Param() = default;
  Param(int rows, int cols)
      : value(Eigen::MatrixXd::Zero(rows, cols)),
        grad(Eigen::MatrixXd::Zero(rows, cols)),
        m(Eigen::MatrixXd::Zero(rows, cols)),
        v(Eigen::MatrixXd::Zero(rows, cols)) {}

  void ZeroGrad() { grad.setZero(); }
};

inline void FillNormal(Param& p, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < p.value.size(); ++i)
    p.value.data()[i] = stddev * rng.Normal();
}

class Linear {
 public:
  Param weight;  // out x in
  Param bias;    // out x 1

  Linear() = default;
  Linear(int in, int out, Rng& rng, double gain = 1.0)
      : weight(out, in), bias(out, 1) {
    FillNormal(weight, rng, gain / std::sqrt(static_cast<double>(in)));
  }

  int in() const { return static_cast<int>(weight.value.cols()); }
  int out() const { return static_cast<int>(weight.value.rows()); }

  Eigen::VectorXd Forward(const Eigen::VectorXd& x) const {
    return weight.value * x + bias.value.col(0);
  }

  // Accumulates parameter gradients; returns dL/dx.
  Eigen::VectorXd Backward(const Eigen::VectorXd& x, const Eigen::VectorXd& dy) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy;
    return weight.value.transpose() * dy;
  }

  // dL/dx only, parameters untouched.
  Eigen::VectorXd InputGrad(const Eigen::VectorXd& dy) const {
    return weight.value.transpose() * dy;
  }

  std::vector<Param*> Params() { return {&weight, &bias}; }
};

inline Eigen::VectorXd Relu(const Eigen::VectorXd& x) {
  return x.cwiseMax(0.0);
}

inline Eigen::VectorXd ReluBackward(const Eigen::VectorXd& pre,
                                    const Eigen::VectorXd& dy) {
  return (pre.array() > 0.0).select(dy, 0.0);
}

// Token-embedding table read out as the mean over a token sequence.
class MeanEmbedding {
 public:
  Param table;  // vocab x dim

  MeanEmbedding() = default;
  MeanEmbedding(int vocab, int dim, Rng& rng) : table(vocab, dim) {
    FillNormal(table, rng, 1.0 / std::sqrt(static_cast<double>(dim)));
  }

  int dim() const { return static_cast<int>(table.value.cols()); }

  Eigen::VectorXd Forward(const std::vector<int>& ids) const {
    if (ids.empty()) throw InvalidArgument("empty token sequence");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(dim());
    for (int id : ids) out += table.value.row(id).transpose();
    return out / static_cast<double>(ids.size());
  }

  void Backward(const std::vector<int>& ids, const Eigen::VectorXd& dy) {
    const double inv = 1.0 / static_cast<double>(ids.size());
    for (int id : ids) table.grad.row(id) += inv * dy.transpose();
  }

  std::vector<Param*> Params() { return {&table}; }
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  void Step(const std::vector<Param*>& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, t_);
    const double c2 = 1.0 - std::pow(config_.beta2, t_);
    for (Param* p : params) {
      p->m = config_.beta1 * p->m + (1.0 - config_.beta1) * p->grad;
      p->v = config_.beta2 * p->v +
             (1.0 - config_.beta2) * p->grad.cwiseProduct(p->grad);
      p->value.array() -= config_.learning_rate * (p->m.array() / c1) /
                          ((p->v.array() / c2).sqrt() + config_.epsilon);
    }
  }

  int steps() const { return t_; }

 private:
  AdamConfig config_;
  int t_ = 0;
};

inline void ZeroGrads(const std::vector<Param*>& params) {
  for (Param* p : params) p->ZeroGrad();
}

inline std::vector<Param*> Concat(std::vector<Param*> a,
                                  const std::vector<Param*>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

// Weights only; optimizer moments are not checkpointed.
inline nlohmann::json ParamToJson(const Param& p) {
  return {{"rows", p.value.rows()},
          {"cols", p.value.cols()},
          {"data", std::vector<double>(p.value.data(),
                                       p.value.data() + p.value.size())}};
}

inline Param ParamFromJson(const nlohmann::json& j) {
  Param p(j.at("rows").get<int>(), j.at("cols").get<int>());
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != p.value.size())
    throw IoError("parameter size mismatch in checkpoint");
  std::copy(data.begin(), data.end(), p.value.data());
  return p;
}

inline nlohmann::json ToJson(const Linear& l) {
  return {{"weight", ParamToJson(l.weight)}, {"bias", ParamToJson(l.bias)}};
}

inline Linear LinearFromJson(const nlohmann::json& j) {
  Linear l;
  l.weight = ParamFromJson(j.at("weight"));
  l.bias = ParamFromJson(j.at("bias"));
  return l;
}

}  // namespace compt2i
