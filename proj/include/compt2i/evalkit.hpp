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

// Evaluation metrics. Every rate keeps its numerator and denominator.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "compt2i/cosine.hpp"
#include "compt2i/dualenc.hpp"
#include "compt2i/error.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/lexattr.hpp"
#include "compt2i/losses.hpp"
#include "compt2i/nn.hpp"
#include "compt2i/rng.hpp"
#include "compt2i/tokens.hpp"

namespace compt2i {

struct Rate {
  std::size_t correct = 0;
  std::size_t total = 0;

  double value() const {
    return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
  }
  void Add(bool ok) {
    correct += ok ? 1 : 0;
    ++total;
  }
};

inline Json ToJson(const Rate& r) {
  return {{"correct", r.correct}, {"total", r.total}, {"rate", r.value()}};
}

inline Rate RateFromJson(const Json& j) {
  return {j.at("correct").get<std::size_t>(), j.at("total").get<std::size_t>()};
}

// Linear-interpolated percentile, q in [0, 100].
inline double Percentile(std::vector<double> v, double q) {
  if (v.empty()) throw InvalidArgument("percentile of an empty set");
  std::sort(v.begin(), v.end());
  const double pos = q / 100.0 * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

// ---------------------------------------------------------------------------
// R-Precision.

struct CandidatePool {
  std::vector<Eigen::VectorXd> embeddings;
  // Composition key per candidate; candidates sharing the query's key are
  // never drawn as distractors.
  std::vector<std::string> keys;
};

// Query i succeeds when its matched caption scores strictly above each of
// n_candidates - 1 distractors drawn from the pool.
inline Rate RPrecisionFromEmbeddings(const std::vector<Eigen::VectorXd>& images,
                                     const std::vector<Eigen::VectorXd>& matched,
                                     const std::vector<std::string>& matched_keys,
                                     const CandidatePool& pool, int n_candidates,
                                     std::uint64_t seed) {
  if (images.size() != matched.size() || images.size() != matched_keys.size())
    throw InvalidArgument("r-precision: input size mismatch");
  if (n_candidates < 2) throw InvalidArgument("r-precision needs >= 2 candidates");
  Rng rng(MixSeed(seed, "r-precision"));
  Rate rate;
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<std::size_t> eligible;
    for (std::size_t k = 0; k < pool.keys.size(); ++k)
      if (pool.keys[k] != matched_keys[i]) eligible.push_back(k);
    const std::size_t need = static_cast<std::size_t>(n_candidates - 1);
    if (eligible.size() < need)
      throw InvalidArgument("r-precision: distractor pool smaller than n_candidates - 1");
    for (std::size_t k = 0; k < need; ++k)
      std::swap(eligible[k], eligible[k + rng.Index(eligible.size() - k)]);
    const double target = Cosine(images[i], matched[i]);
    bool first = true;
    for (std::size_t k = 0; k < need; ++k) {
      COMPT2I_CHECK(pool.keys[eligible[k]] != matched_keys[i],
                    "matched caption drawn as a distractor");
      if (Cosine(images[i], pool.embeddings[eligible[k]]) >= target) {
        first = false;
        break;
      }
    }
    rate.Add(first);
  }
  return rate;
}

inline Rate RPrecision(const DualEncoder& eval_encoder, const std::vector<Image>& images,
                       const std::vector<std::vector<std::string>>& captions,
                       const std::vector<std::string>& keys,
                       const std::vector<std::vector<std::string>>& pool_captions,
                       const std::vector<std::string>& pool_keys, int n_candidates,
                       std::uint64_t seed) {
  RequireRole(eval_encoder, EncoderRole::kEval, "r-precision");
  std::vector<Eigen::VectorXd> ie, te;
  for (const auto& img : images) ie.push_back(eval_encoder.EmbedImage(img));
  for (const auto& c : captions) te.push_back(eval_encoder.EmbedText(c));
  CandidatePool pool;
  pool.keys = pool_keys;
  for (const auto& c : pool_captions) pool.embeddings.push_back(eval_encoder.EmbedText(c));
  return RPrecisionFromEmbeddings(ie, te, keys, pool, n_candidates, seed);
}

// ---------------------------------------------------------------------------
// Frechet distance between Gaussian fits of two feature sets.

struct FrechetResult {
  double value = 0.0;
  // Sum of |negative eigenvalues| removed before square roots.
  double clipped = 0.0;
  double trace = 0.0;
  bool shrunk = false;
};

inline constexpr double kCovarianceShrinkage = 0.1;

namespace detail {

inline Eigen::MatrixXd Covariance(const Eigen::MatrixXd& x, const Eigen::VectorXd& mu,
                                  bool& shrunk) {
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  const double denom = std::max<double>(1.0, static_cast<double>(x.rows()) - 1.0);
  Eigen::MatrixXd cov = (c.transpose() * c) / denom;
  if (x.rows() < x.cols() + 1) {
    const double avg = cov.trace() / static_cast<double>(cov.rows());
    cov = (1.0 - kCovarianceShrinkage) * cov +
          kCovarianceShrinkage * avg *
              Eigen::MatrixXd::Identity(cov.rows(), cov.cols());
    shrunk = true;
  }
  return cov;
}

// Symmetric PSD square root; negative eigenvalues are clipped and their
// magnitude added to `clipped`.
inline Eigen::MatrixXd SqrtPsd(const Eigen::MatrixXd& m, double& clipped) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i)
    if (ev(i) < 0.0) {
      clipped += -ev(i);
      ev(i) = 0.0;
    }
  return es.eigenvectors() * ev.cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace detail

// |mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
inline FrechetResult FrechetDistance(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.cols() != b.cols()) throw InvalidArgument("frechet: feature width mismatch");
  if (a.rows() < 1 || b.rows() < 1) throw InvalidArgument("frechet: empty feature set");
  FrechetResult r;
  const Eigen::VectorXd mu_a = a.colwise().mean();
  const Eigen::VectorXd mu_b = b.colwise().mean();
  const Eigen::MatrixXd sa = detail::Covariance(a, mu_a, r.shrunk);
  const Eigen::MatrixXd sb = detail::Covariance(b, mu_b, r.shrunk);
  const Eigen::MatrixXd ra = detail::SqrtPsd(sa, r.clipped);
  double scratch = 0.0;
  const Eigen::MatrixXd inner = ra * sb * ra;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  double tr_sqrt = 0.0;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) {
    const double ev = es.eigenvalues()(i);
    if (ev < 0.0) scratch += -ev;
    else tr_sqrt += std::sqrt(ev);
  }
  r.clipped += scratch;
  r.trace = sa.trace() + sb.trace();
  r.value = (mu_a - mu_b).squaredNorm() + r.trace - 2.0 * tr_sqrt;
  return r;
}

inline Eigen::MatrixXd StackRows(const std::vector<Eigen::VectorXd>& rows) {
  if (rows.empty()) return {};
  Eigen::MatrixXd m(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(i) = rows[i].transpose();
  return m;
}

// ---------------------------------------------------------------------------
// Affine-softmax classifier on standardized features.

struct SoftmaxConfig {
  int epochs = 300;
  double learning_rate = 0.05;
  double l2 = 1e-4;
};

struct SoftmaxClassifier {
  Eigen::MatrixXd weight;  // classes x features
  Eigen::VectorXd bias;
  Eigen::VectorXd mean;
  Eigen::VectorXd scale;

  Eigen::VectorXd Logits(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd xs = (x - mean).cwiseQuotient(scale);
    return weight * xs + bias;
  }
  int Predict(const Eigen::VectorXd& x) const {
    Eigen::Index arg;
    Logits(x).maxCoeff(&arg);
    return static_cast<int>(arg);
  }
};

inline SoftmaxClassifier TrainSoftmaxClassifier(const std::vector<Eigen::VectorXd>& x,
                                                const std::vector<int>& y, int n_classes,
                                                const SoftmaxConfig& config = {}) {
  if (x.empty() || x.size() != y.size())
    throw InvalidArgument("classifier: bad training set");
  std::vector<int> counts(n_classes, 0);
  for (int label : y) {
    if (label < 0 || label >= n_classes)
      throw InvalidArgument("classifier: label out of range");
    ++counts[label];
  }
  for (int c = 0; c < n_classes; ++c)
    if (counts[c] == 0)
      throw InvalidArgument("classifier: class " + std::to_string(c) +
                            " absent from training labels");
  const Eigen::MatrixXd xm = StackRows(x);
  SoftmaxClassifier clf;
  clf.mean = xm.colwise().mean();
  const Eigen::MatrixXd centered = xm.rowwise() - clf.mean.transpose();
  clf.scale = (centered.array().square().colwise().mean().sqrt() + 1e-8).matrix().transpose();
  const Eigen::MatrixXd xs = centered.array().rowwise() / clf.scale.transpose().array();
  const int m = static_cast<int>(xm.cols());
  Param w(n_classes, m), b(n_classes, 1);
  Adam adam({config.learning_rate});
  const double n = static_cast<double>(x.size());
  for (int e = 0; e < config.epochs; ++e) {
    Eigen::MatrixXd logits = xs * w.value.transpose();
    logits.rowwise() += b.value.col(0).transpose();
    Eigen::MatrixXd p(logits.rows(), logits.cols());
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
      p.row(i) = (logits.row(i).array() - logits.row(i).maxCoeff()).exp();
      p.row(i) /= p.row(i).sum();
      p(i, y[i]) -= 1.0;
    }
    w.grad = p.transpose() * xs / n + config.l2 * w.value;
    b.grad.col(0) = p.colwise().sum().transpose() / n;
    adam.Step({&w, &b});
  }
  clf.weight = w.value;
  clf.bias = b.value.col(0);
  return clf;
}

inline Rate ClassifierAccuracy(const SoftmaxClassifier& clf,
                               const std::vector<Eigen::VectorXd>& x,
                               const std::vector<int>& y) {
  Rate r;
  for (std::size_t i = 0; i < x.size(); ++i) r.Add(clf.Predict(x[i]) == y[i]);
  return r;
}

// Normalized token counts.
inline Eigen::VectorXd BagOfWords(const TokenVocab& vocab,
                                  const std::vector<std::string>& tokens) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(vocab.size());
  for (int id : vocab.Ids(tokens)) v(id) += 1.0;
  return tokens.empty() ? v : Eigen::VectorXd(v / static_cast<double>(tokens.size()));
}

// Text-only ceiling: train on 80% of captions, score the remaining 20%.
inline Rate TextUpperBound(const TokenVocab& vocab,
                           const std::vector<std::vector<std::string>>& captions,
                           const std::vector<int>& labels, int n_classes,
                           std::uint64_t seed, const SoftmaxConfig& config = {}) {
  if (captions.size() != labels.size() || captions.size() < 5)
    throw InvalidArgument("text upper bound: need >= 5 labelled captions");
  std::vector<std::size_t> order(captions.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(MixSeed(seed, "text-upper-bound"));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.Index(i)]);
  const std::size_t n_train = (order.size() * 4) / 5;
  std::vector<Eigen::VectorXd> xt, xv;
  std::vector<int> yt, yv;
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto& xs = k < n_train ? xt : xv;
    auto& ys = k < n_train ? yt : yv;
    xs.push_back(BagOfWords(vocab, captions[order[k]]));
    ys.push_back(labels[order[k]]);
  }
  return ClassifierAccuracy(TrainSoftmaxClassifier(xt, yt, n_classes, config), xv, yv);
}

// ---------------------------------------------------------------------------
// Attribute-direction metrics.

// pos = G(z + a) must show the attribute and neg = G(z - a) must not.
template <class DirectionFn>
Rate AttributeAccuracy(const Generator& g, const std::vector<AttributePhrase>& attrs,
                       DirectionFn&& direction, int n_trials, std::uint64_t seed) {
  if (n_trials < 1) throw InvalidArgument("attribute accuracy needs >= 1 trial");
  if (attrs.empty()) throw InvalidArgument("attribute accuracy needs attributes");
  Rng rng(MixSeed(seed, "attribute-accuracy"));
  Rate r;
  for (int t = 0; t < n_trials; ++t) {
    const LatentCode z = SampleLatent(g, rng);
    const AttributePhrase& p = attrs[rng.Index(attrs.size())];
    const Direction a = direction(z, p);
    const auto pos = ReadAttributes(g, Render(g, z + a));
    const auto neg = ReadAttributes(g, Render(g, z - a));
    r.Add(pos.values[p.slot] == p.value && neg.values[p.slot] != p.value);
  }
  return r;
}

// Fraction of (attribute, z) draws whose learned direction has cosine >=
// `threshold` with the oracle direction at z.
template <class DirectionFn>
Rate DirectionRecovery(const Generator& g, const std::vector<AttributePhrase>& attrs,
                       DirectionFn&& direction, int n_samples, double threshold,
                       std::uint64_t seed, std::vector<double>* cosines = nullptr) {
  Rng rng(MixSeed(seed, "direction-recovery"));
  Rate r;
  for (int t = 0; t < n_samples; ++t) {
    const LatentCode z = SampleLatent(g, rng);
    const AttributePhrase& p = attrs[rng.Index(attrs.size())];
    const Eigen::VectorXd learned = Flatten(direction(z, p).values);
    const Eigen::VectorXd oracle =
        Flatten(OracleAttributeDirection(g, p.slot, p.value, z).values);
    const double c = (learned.norm() == 0.0 || oracle.norm() == 0.0)
                         ? 0.0
                         : Cosine(learned, oracle);
    if (cosines) cosines->push_back(c);
    r.Add(c >= threshold);
  }
  return r;
}

// Mean normalized pos/neg difference outside the attribute's slot mask.
template <class DirectionFn>
double MeanDiffOutsideMask(const Generator& g, const std::vector<AttributePhrase>& attrs,
                           const std::vector<Mask>& masks, DirectionFn&& direction,
                           int n_samples, std::uint64_t seed) {
  Rng rng(MixSeed(seed, "diff-outside-mask"));
  double total = 0.0;
  for (int t = 0; t < n_samples; ++t) {
    const LatentCode z = SampleLatent(g, rng);
    const AttributePhrase& p = attrs[rng.Index(attrs.size())];
    const Direction a = direction(z, p);
    const ScalarMap d = PixelDiffNormalized(Render(g, z + a), Render(g, z - a));
    const Mask& m = masks[p.slot];
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.data.size(); ++i)
      if (!m.data[i]) {
        s += d.data[i];
        ++n;
      }
    total += n ? s / static_cast<double>(n) : 0.0;
  }
  return total / n_samples;
}

// ---------------------------------------------------------------------------
// Report.

struct MetricReport {
  Rate r_precision;
  FrechetResult frechet;
  Rate composition_accuracy;
  Rate text_upper_bound;
  Rate attribute_accuracy;
  double s_norm_p95 = 0.0;
  std::size_t n_frechet_real = 0;
  std::size_t n_frechet_fake = 0;
  std::string config_hash;
  std::string variant;
};

inline Json ToJson(const MetricReport& m) {
  return {{"variant", m.variant},
          {"config_hash", m.config_hash},
          {"r_precision", ToJson(m.r_precision)},
          {"frechet",
           {{"value", m.frechet.value},
            {"clipped", m.frechet.clipped},
            {"trace", m.frechet.trace},
            {"shrunk", m.frechet.shrunk},
            {"n_real", m.n_frechet_real},
            {"n_fake", m.n_frechet_fake}}},
          {"composition_accuracy", ToJson(m.composition_accuracy)},
          {"text_upper_bound", ToJson(m.text_upper_bound)},
          {"attribute_accuracy", ToJson(m.attribute_accuracy)},
          {"s_norm_p95", m.s_norm_p95}};
}

inline MetricReport MetricReportFromJson(const Json& j) {
  MetricReport m;
  m.variant = j.value("variant", std::string());
  m.config_hash = j.at("config_hash").get<std::string>();
  m.r_precision = RateFromJson(j.at("r_precision"));
  const auto& f = j.at("frechet");
  m.frechet.value = f.at("value").get<double>();
  m.frechet.clipped = f.at("clipped").get<double>();
  m.frechet.trace = f.at("trace").get<double>();
  m.frechet.shrunk = f.at("shrunk").get<bool>();
  m.n_frechet_real = f.at("n_real").get<std::size_t>();
  m.n_frechet_fake = f.at("n_fake").get<std::size_t>();
  m.composition_accuracy = RateFromJson(j.at("composition_accuracy"));
  m.text_upper_bound = RateFromJson(j.at("text_upper_bound"));
  m.attribute_accuracy = RateFromJson(j.at("attribute_accuracy"));
  m.s_norm_p95 = j.at("s_norm_p95").get<double>();
  return m;
}

}  // namespace compt2i
