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

#include "compt2i/evalkit.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "trained_world.hpp"

namespace compt2i {
namespace {

using testing::SharedWorld;

Eigen::MatrixXd Gaussian(Rng& rng, int n, int m, double mean = 0.0, double sd = 1.0) {
  return Eigen::MatrixXd::NullaryExpr(n, m, [&] { return mean + sd * rng.Normal(); });
}

Eigen::VectorXd OneHot(int n, int k) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(n);
  v(k) = 1.0;
  return v;
}

TEST(Frechet, IdenticalSetsGiveZero) {
  Rng rng(1);
  const Eigen::MatrixXd x = Gaussian(rng, 500, 32);
  const auto r = FrechetDistance(x, x);
  EXPECT_NEAR(r.value, 0.0, 1e-6);
  EXPECT_FALSE(r.shrunk);
}

TEST(Frechet, Symmetric) {
  Rng rng(2);
  for (int t = 0; t < 5; ++t) {
    const Eigen::MatrixXd a = Gaussian(rng, 300, 8, 0.0, 1.0 + t);
    const Eigen::MatrixXd b = Gaussian(rng, 200, 8, 0.5, 2.0);
    EXPECT_NEAR(FrechetDistance(a, b).value, FrechetDistance(b, a).value, 1e-8);
  }
}

TEST(Frechet, UnivariateClosedForm) {
  Rng rng(3);
  const auto r = FrechetDistance(Gaussian(rng, 100000, 1, 0.0, 1.0),
                                 Gaussian(rng, 100000, 1, 1.0, 2.0));
  EXPECT_NEAR(r.value, 2.0, 0.1);
}

TEST(Frechet, MeanShiftAddsSquaredDistance) {
  Rng rng(4);
  const Eigen::MatrixXd a = Gaussian(rng, 400, 6);
  Eigen::RowVectorXd delta(6);
  delta << 1, -2, 0.5, 0, 3, -1;
  const Eigen::MatrixXd b = a.rowwise() + delta;
  EXPECT_NEAR(FrechetDistance(a, b).value, delta.squaredNorm(), 1e-6);
}

TEST(Frechet, ClippingStaysNegligibleAndValueNonNegative) {
  Rng rng(5);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd a = Gaussian(rng, 500, 32);
    const Eigen::MatrixXd b = Gaussian(rng, 500, 32, 0.1 * t, 1.0 + 0.1 * t);
    const auto r = FrechetDistance(a, b);
    EXPECT_GE(r.value, -1e-8);
    EXPECT_LT(r.clipped, 1e-6 * r.trace);
  }
}

TEST(Frechet, ShrinksRankDeficientCovariances) {
  Rng rng(6);
  const auto r = FrechetDistance(Gaussian(rng, 10, 32), Gaussian(rng, 10, 32));
  EXPECT_TRUE(r.shrunk);
  EXPECT_GE(r.value, -1e-8);
  EXPECT_TRUE(std::isfinite(r.value));
}

TEST(Frechet, Errors) {
  Rng rng(7);
  EXPECT_THROW(FrechetDistance(Gaussian(rng, 10, 3), Gaussian(rng, 10, 4)), Error);
  EXPECT_THROW(FrechetDistance(Eigen::MatrixXd(0, 3), Gaussian(rng, 10, 3)), Error);
}

// Oracle encoder: both modalities embed the composition one-hot.
TEST(RPrecision, OracleEmbeddingsAlwaysRankFirst) {
  const int n = 24;
  std::vector<Eigen::VectorXd> img, txt;
  std::vector<std::string> keys;
  CandidatePool pool;
  for (int rep = 0; rep < 5; ++rep)
    for (int k = 0; k < n; ++k) {
      pool.embeddings.push_back(OneHot(n, k));
      pool.keys.push_back("c" + std::to_string(k));
    }
  for (int k = 0; k < n; ++k) {
    img.push_back(OneHot(n, k));
    txt.push_back(OneHot(n, k));
    keys.push_back("c" + std::to_string(k));
  }
  const Rate r = RPrecisionFromEmbeddings(img, txt, keys, pool, 100, 1);
  EXPECT_EQ(r.correct, r.total);
  EXPECT_EQ(r.total, 24u);
}

TEST(RPrecision, RandomEmbeddingsGiveChance) {
  Rng rng(8);
  const int n = 4000;
  std::vector<Eigen::VectorXd> img, txt;
  std::vector<std::string> keys;
  for (int i = 0; i < n; ++i) {
    img.push_back(Eigen::VectorXd::NullaryExpr(32, [&] { return rng.Normal(); }));
    txt.push_back(Eigen::VectorXd::NullaryExpr(32, [&] { return rng.Normal(); }));
    keys.push_back("q" + std::to_string(i));
  }
  CandidatePool pool;
  for (int i = 0; i < 1000; ++i) {
    pool.embeddings.push_back(Eigen::VectorXd::NullaryExpr(32, [&] { return rng.Normal(); }));
    pool.keys.push_back("p" + std::to_string(i));
  }
  const double p = 0.01, sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(RPrecisionFromEmbeddings(img, txt, keys, pool, 100, 2).value(), p, 3 * sigma);
}

TEST(RPrecision, SameCompositionNeverCountsAsDistractor) {
  // Every pool entry with the query's key is an exact copy of the image;
  // were any drawn, the query would fail.
  std::vector<Eigen::VectorXd> img{OneHot(200, 0)}, txt{0.5 * OneHot(200, 0) + 0.5 * OneHot(200, 1)};
  CandidatePool pool;
  for (int k = 0; k < 50; ++k) {
    pool.embeddings.push_back(OneHot(200, 0));
    pool.keys.push_back("same");
  }
  for (int k = 2; k < 101; ++k) {
    pool.embeddings.push_back(OneHot(200, k));
    pool.keys.push_back("o" + std::to_string(k));
  }
  EXPECT_EQ(RPrecisionFromEmbeddings(img, txt, {"same"}, pool, 100, 3).correct, 1u);
  pool.embeddings.pop_back();
  pool.keys.pop_back();
  EXPECT_THROW(RPrecisionFromEmbeddings(img, txt, {"same"}, pool, 100, 3), Error);
  EXPECT_THROW(RPrecisionFromEmbeddings(img, txt, {"same"}, pool, 1, 3), Error);
  EXPECT_THROW(RPrecisionFromEmbeddings(img, {}, {"same"}, pool, 10, 3), Error);
}

TEST(RPrecision, RequiresTheEvaluationEncoder) {
  const auto& w = SharedWorld();
  const Image img = w.reals[0];
  const auto cap = w.world.dataset.records[0].caption.tokens;
  try {
    RPrecision(w.encoders.train.encoder, {img}, {cap}, {"k"}, {cap, cap}, {"a", "b"}, 2, 1);
    FAIL() << "expected a role error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kRole);
  }
  EXPECT_NO_THROW(
      RPrecision(w.encoders.eval.encoder, {img}, {cap}, {"k"}, {cap, cap}, {"a", "b"}, 2, 1));
}

TEST(Classifier, AbsentClassIsAnError) {
  const std::vector<Eigen::VectorXd> x{OneHot(3, 0), OneHot(3, 1)};
  EXPECT_THROW(TrainSoftmaxClassifier(x, {0, 1}, 3), Error);
  EXPECT_THROW(TrainSoftmaxClassifier(x, {0, 5}, 3), Error);
  EXPECT_THROW(TrainSoftmaxClassifier(x, {0}, 2), Error);
  EXPECT_NO_THROW(TrainSoftmaxClassifier(x, {0, 1}, 2));
}

// With features that are the oracle reader's composition one-hot, the
// classifier's accuracy is the exact-match rate.
TEST(Classifier, OracleFeaturesGiveExactMatchRate) {
  const auto& w = SharedWorld();
  const Generator& g = w.generator;
  const int n = static_cast<int>(g.schema.NumCompositions());
  auto features = [&](const Image& img) {
    return OneHot(n, static_cast<int>(CompositionIndex(g.schema, ReadAttributes(g, img))));
  };
  std::vector<Eigen::VectorXd> xt;
  std::vector<int> yt;
  for (int k = 0; k < n; ++k) {
    xt.push_back(features(Render(g, CanonicalLatent(g, CompositionAt(g.schema, k)))));
    yt.push_back(k);
  }
  const auto clf = TrainSoftmaxClassifier(xt, yt, n);
  Rng rng(9);
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> ys;
  std::size_t exact = 0;
  for (int t = 0; t < 300; ++t) {
    const Image img = Render(g, SampleLatent(g, rng));
    const int label = static_cast<int>(rng.Index(n));
    exact += ReadAttributes(g, img) == CompositionAt(g.schema, label);
    xs.push_back(features(img));
    ys.push_back(label);
  }
  EXPECT_EQ(ClassifierAccuracy(clf, xs, ys).correct, exact);
}

TEST(Classifier, RandomFeaturesGiveChance) {
  Rng rng(10);
  const int classes = 9;
  std::vector<Eigen::VectorXd> xt, xs;
  std::vector<int> yt, ys;
  for (int i = 0; i < 900; ++i) {
    xt.push_back(Eigen::VectorXd::NullaryExpr(32, [&] { return rng.Normal(); }));
    yt.push_back(i % classes);
  }
  const int n = 3000;
  for (int i = 0; i < n; ++i) {
    xs.push_back(Eigen::VectorXd::NullaryExpr(32, [&] { return rng.Normal(); }));
    ys.push_back(static_cast<int>(rng.Index(classes)));
  }
  const auto clf = TrainSoftmaxClassifier(xt, yt, classes);
  const double p = 1.0 / classes, sigma = std::sqrt(p * (1 - p) / n);
  EXPECT_NEAR(ClassifierAccuracy(clf, xs, ys).value(), p, 3 * sigma);
}

TEST(Classifier, SeparableClustersAreLearned) {
  Rng rng(11);
  std::vector<Eigen::VectorXd> x;
  std::vector<int> y;
  for (int i = 0; i < 300; ++i) {
    const int c = i % 3;
    x.push_back(5.0 * OneHot(4, c) + 0.3 * Eigen::VectorXd::NullaryExpr(4, [&] { return rng.Normal(); }));
    y.push_back(c);
  }
  EXPECT_EQ(ClassifierAccuracy(TrainSoftmaxClassifier(x, y, 3), x, y).value(), 1.0);
}

TEST(TextUpperBound, HeldOutCaptionsAreNearlyPerfect) {
  const auto& w = SharedWorld();
  const auto classes = UnseenClasses(w.world);
  EXPECT_EQ(classes.size(), 9u);
  std::vector<std::vector<std::string>> captions;
  std::vector<int> labels;
  for (auto i : w.world.split.test_ids) {
    captions.push_back(w.world.dataset.records[i].caption.tokens);
    labels.push_back(classes.at(w.world.dataset.records[i].assignment));
  }
  const Rate r = TextUpperBound(BuildTokenVocab(w.generator.schema), captions, labels, 9, 1);
  EXPECT_EQ(r.total, captions.size() - (captions.size() * 4) / 5);
  EXPECT_GE(r.value(), 0.9);
  EXPECT_THROW(TextUpperBound(BuildTokenVocab(w.generator.schema), {captions[0]}, {0}, 1, 1),
               Error);
}

TEST(AttributeAccuracy, OracleDirectionsAndZero) {
  const auto& w = SharedWorld();
  const Generator& g = w.generator;
  auto oracle = [&](const LatentCode& z, const AttributePhrase& p) {
    return OracleAttributeDirection(g, p.slot, p.value, z);
  };
  auto zero = [&](const LatentCode&, const AttributePhrase&) {
    return Direction{Eigen::MatrixXd::Zero(g.layers(), g.dims()), DirectionKind::kAttribute};
  };
  const Rate good = AttributeAccuracy(g, w.vocab.phrases, oracle, 500, 1);
  EXPECT_EQ(good.total, 500u);
  EXPECT_GE(good.value(), 0.99);
  EXPECT_EQ(AttributeAccuracy(g, w.vocab.phrases, zero, 500, 1).correct, 0u);
  EXPECT_THROW(AttributeAccuracy(g, w.vocab.phrases, zero, 0, 1), Error);
  std::vector<double> cosines;
  const Rate rec = DirectionRecovery(g, w.vocab.phrases, oracle, 100, 0.8, 2, &cosines);
  EXPECT_EQ(cosines.size(), 100u);
  for (double c : cosines) EXPECT_TRUE(c == 0.0 || std::abs(c - 1.0) < 1e-12);
  EXPECT_EQ(DirectionRecovery(g, w.vocab.phrases, zero, 100, 0.8, 2).correct, 0u);
  EXPECT_GE(rec.value(), 0.5);
}

TEST(Percentile, Interpolates) {
  EXPECT_EQ(Percentile({3, 1, 2}, 50), 2.0);
  EXPECT_EQ(Percentile({1, 2, 3, 4}, 0), 1.0);
  EXPECT_EQ(Percentile({1, 2, 3, 4}, 100), 4.0);
  EXPECT_NEAR(Percentile({1, 2, 3, 4}, 95), 3.85, 1e-12);
  EXPECT_THROW(Percentile({}, 50), Error);
}

TEST(MetricReport, JsonKeepsCountsAndRoundTrips) {
  MetricReport m;
  m.r_precision = {37, 90};
  m.frechet = {1.5, 1e-12, 20.0, false};
  m.composition_accuracy = {4, 90};
  m.text_upper_bound = {18, 18};
  m.attribute_accuracy = {480, 500};
  m.s_norm_p95 = 1.7;
  m.n_frechet_real = 500;
  m.n_frechet_fake = 500;
  m.config_hash = "abc";
  m.variant = "full";
  const Json j = ToJson(m);
  EXPECT_EQ(j.at("r_precision").at("correct"), 37);
  EXPECT_EQ(j.at("r_precision").at("total"), 90);
  EXPECT_EQ(ToJson(MetricReportFromJson(j)), j);
  EXPECT_EQ(Rate{}.value(), 0.0);
  for (const char* key : {"r_precision", "composition_accuracy", "text_upper_bound",
                          "attribute_accuracy"}) {
    EXPECT_GE(j.at(key).at("rate").get<double>(), 0.0);
    EXPECT_LE(j.at(key).at("rate").get<double>(), 1.0);
  }
}

}  // namespace
}  // namespace compt2i
