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

// Training objectives for the direction networks, each with its gradient.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "compt2i/cosine.hpp"
#include "compt2i/error.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/image.hpp"

namespace compt2i {

enum class ContrastiveVariant { kExcludeSelf, kStandardInfoNce };

inline const char* VariantName(ContrastiveVariant v) {
  return v == ContrastiveVariant::kExcludeSelf ? "exclude-self" : "standard-infonce";
}

inline ContrastiveVariant VariantFromName(const std::string& s) {
  if (s == "exclude-self") return ContrastiveVariant::kExcludeSelf;
  if (s == "standard-infonce") return ContrastiveVariant::kStandardInfoNce;
  throw ConfigError("unknown contrastive variant: " + s);
}

struct BatchLoss {
  double value = 0.0;
  std::vector<Eigen::VectorXd> d_image;
  std::vector<Eigen::VectorXd> d_text;
};

// Mean over i of -log(exp(c_ii) / sum_j exp(c_ij)) on plain cosines
// c_ij = cos(image_i, text_j). kExcludeSelf leaves j = i out of the denominator.
inline BatchLoss ContrastiveLoss(const std::vector<Eigen::VectorXd>& image,
                                 const std::vector<Eigen::VectorXd>& text,
                                 ContrastiveVariant variant) {
  const int b = static_cast<int>(image.size());
  if (b < 2) throw InvalidArgument("contrastive loss needs a batch of >= 2");
  if (static_cast<int>(text.size()) != b)
    throw InvalidArgument("contrastive loss: batch size mismatch");
  Eigen::MatrixXd c(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) c(i, j) = Cosine(image[i], text[j]);

  BatchLoss out;
  out.d_image.assign(b, Eigen::VectorXd::Zero(image[0].size()));
  out.d_text.assign(b, Eigen::VectorXd::Zero(text[0].size()));
  Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(b, b);
  for (int i = 0; i < b; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < b; ++j)
      if (variant == ContrastiveVariant::kStandardInfoNce || j != i)
        mx = std::max(mx, c(i, j));
    double z = 0.0;
    for (int j = 0; j < b; ++j)
      if (variant == ContrastiveVariant::kStandardInfoNce || j != i)
        z += std::exp(c(i, j) - mx);
    out.value += (-(c(i, i) - mx) + std::log(z)) / b;
    dc(i, i) -= 1.0 / b;
    for (int j = 0; j < b; ++j)
      if (variant == ContrastiveVariant::kStandardInfoNce || j != i)
        dc(i, j) += std::exp(c(i, j) - mx) / z / b;
  }
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      if (dc(i, j) != 0.0)
        CosineBackward(image[i], text[j], dc(i, j), out.d_image[i], out.d_text[j]);
  return out;
}

// Replacement objective when the contrastive term is ablated: mean cosine
// distance of each fake image to its own caption.
inline BatchLoss MatchedCosineDistance(const std::vector<Eigen::VectorXd>& image,
                                       const std::vector<Eigen::VectorXd>& text) {
  const int b = static_cast<int>(image.size());
  if (b < 1 || static_cast<int>(text.size()) != b)
    throw InvalidArgument("cosine distance loss: batch size mismatch");
  BatchLoss out;
  out.d_image.assign(b, Eigen::VectorXd::Zero(image[0].size()));
  out.d_text.assign(b, Eigen::VectorXd::Zero(text[0].size()));
  for (int i = 0; i < b; ++i) {
    out.value += (1.0 - Cosine(image[i], text[i])) / b;
    CosineBackward(image[i], text[i], -1.0 / b, out.d_image[i], out.d_text[i]);
  }
  return out;
}

// max(|s| - theta, 0); the gradient is s/|s| above the threshold.
inline double NormPenalty(const Direction& s, double theta) {
  if (!(theta > 0.0)) throw InvalidArgument("theta must be positive");
  return std::max(s.Norm() - theta, 0.0);
}

inline Eigen::MatrixXd NormPenaltyGrad(const Direction& s, double theta) {
  const double n = s.Norm();
  if (n <= theta || n == 0.0) return Eigen::MatrixXd::Zero(s.values.rows(), s.values.cols());
  return s.values / n;
}

// Triplet margin on cosines to the attribute text.
inline double SemanticMatchingLoss(double cos_pos, double cos_neg, double alpha) {
  return std::max(cos_neg - cos_pos + alpha, 0.0);
}

struct SemanticMatchingResult {
  double value = 0.0;
  Eigen::VectorXd d_pos;
  Eigen::VectorXd d_neg;
};

inline SemanticMatchingResult SemanticMatchingLoss(const Eigen::VectorXd& pos,
                                                   const Eigen::VectorXd& neg,
                                                   const Eigen::VectorXd& text,
                                                   double alpha) {
  SemanticMatchingResult r;
  r.d_pos = Eigen::VectorXd::Zero(pos.size());
  r.d_neg = Eigen::VectorXd::Zero(neg.size());
  Eigen::VectorXd d_text = Eigen::VectorXd::Zero(text.size());
  const double cp = Cosine(pos, text);
  const double cn = Cosine(neg, text);
  r.value = SemanticMatchingLoss(cp, cn, alpha);
  if (r.value > 0.0) {
    CosineBackward(pos, text, -1.0, r.d_pos, d_text);
    CosineBackward(neg, text, 1.0, r.d_neg, d_text);
  }
  return r;
}

// Per-pixel channel-summed |pos - neg|, min-max rescaled to [0, 1].
inline ScalarMap PixelDiffNormalized(const Image& pos, const Image& neg) {
  if (!pos.SameShape(neg)) throw InvalidArgument("pixel diff: shape mismatch");
  ScalarMap d(pos.height, pos.width);
  for (std::size_t p = 0; p < pos.pixels(); ++p)
    for (int ch = 0; ch < 3; ++ch)
      d.data[p] += std::abs(pos.data[p * 3 + ch] - neg.data[p * 3 + ch]);
  const auto [lo, hi] = std::minmax_element(d.data.begin(), d.data.end());
  const double mn = *lo;
  const double range = *hi - mn;
  if (range < 1e-8) {
    std::fill(d.data.begin(), d.data.end(), 0.0);
    return d;
  }
  for (auto& v : d.data) v = (v - mn) / range;
  return d;
}

// Given dL/d(normalized map), returns dL/dpos (dL/dneg is its negation).
inline Image PixelDiffNormalizedBackward(const Image& pos, const Image& neg,
                                         const ScalarMap& grad) {
  Image g(pos.height, pos.width);
  const std::size_t n = pos.pixels();
  std::vector<double> raw(n, 0.0);
  for (std::size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < 3; ++ch)
      raw[p] += std::abs(pos.data[p * 3 + ch] - neg.data[p * 3 + ch]);
  const auto lo = std::min_element(raw.begin(), raw.end()) - raw.begin();
  const auto hi = std::max_element(raw.begin(), raw.end()) - raw.begin();
  const double range = raw[hi] - raw[lo];
  if (range < 1e-8) return g;
  std::vector<double> d_raw(n, 0.0);
  double d_min = 0.0, d_range = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    const double y = (raw[p] - raw[lo]) / range;
    d_raw[p] += grad.data[p] / range;
    d_min -= grad.data[p] / range;
    d_range -= grad.data[p] * y / range;
  }
  d_raw[hi] += d_range;
  d_raw[lo] += d_min - d_range;
  for (std::size_t p = 0; p < n; ++p)
    for (int ch = 0; ch < 3; ++ch) {
      const double diff = pos.data[p * 3 + ch] - neg.data[p * 3 + ch];
      g.data[p * 3 + ch] = d_raw[p] * ((diff > 0) - (diff < 0));
    }
  return g;
}

inline constexpr double kBceEpsilon = 1e-6;

// Mean binary cross-entropy of the diff map (prediction) against the mask.
inline double SpatialConstraintLoss(const ScalarMap& diff, const Mask& mask,
                                    ScalarMap* grad = nullptr) {
  if (diff.height != mask.height || diff.width != mask.width)
    throw InvalidArgument("spatial loss: shape mismatch");
  const double n = static_cast<double>(diff.data.size());
  if (grad) *grad = ScalarMap(diff.height, diff.width);
  double loss = 0.0;
  for (std::size_t p = 0; p < diff.data.size(); ++p) {
    const double raw = diff.data[p];
    const double x = std::clamp(raw, kBceEpsilon, 1.0 - kBceEpsilon);
    const double y = mask.data[p] ? 1.0 : 0.0;
    loss -= (y * std::log(x) + (1.0 - y) * std::log(1.0 - x)) / n;
    if (grad && raw > kBceEpsilon && raw < 1.0 - kBceEpsilon)
      grad->data[p] = (-(y / x) + (1.0 - y) / (1.0 - x)) / n;
  }
  return loss;
}

// sum_i sum_{j != i} <a_i/|a_i|, a_j/|a_j|>, with gradients per direction.
inline double OrthogonalityPenalty(const std::vector<Direction>& dirs,
                                   std::vector<Eigen::MatrixXd>* grads = nullptr) {
  if (dirs.size() < 2) throw InvalidArgument("orthogonality needs >= 2 directions");
  std::vector<Eigen::VectorXd> flat;
  for (const auto& d : dirs) {
    if (d.Norm() == 0.0) throw InvalidArgument("orthogonality: zero-norm direction");
    flat.push_back(Flatten(d.values));
  }
  std::vector<Eigen::VectorXd> g(flat.size(), Eigen::VectorXd::Zero(flat[0].size()));
  double total = 0.0;
  for (std::size_t i = 0; i < flat.size(); ++i)
    for (std::size_t j = 0; j < flat.size(); ++j) {
      if (i == j) continue;
      total += Cosine(flat[i], flat[j]);
      if (grads) CosineBackward(flat[i], flat[j], 1.0, g[i], g[j]);
    }
  if (grads) {
    grads->clear();
    for (std::size_t i = 0; i < g.size(); ++i)
      grads->push_back(Unflatten(g[i], dirs[i].values.rows(), dirs[i].values.cols()));
  }
  return total;
}

}  // namespace compt2i
