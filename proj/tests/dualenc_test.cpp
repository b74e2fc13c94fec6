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

#include "compt2i/dualenc.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "compt2i/pipeline.hpp"
#include "test_util.hpp"

namespace compt2i {
namespace {

using testing::RelErr;

DualEncoder FreshEncoder(EncoderRole role = EncoderRole::kTrain, std::uint64_t seed = 1) {
  return DualEncoder::Init(BuildTokenVocab(FacesLite()), 64, DualEncoderConfig{}, role, seed);
}

Image RandImage(Rng& rng) {
  Image img(64, 64);
  for (auto& v : img.data) v = rng.Uniform();
  return img;
}

const std::vector<std::string> kCaption =
    Tokenize("the face has red hair and blue eyes with pale skin and is wearing lipstick");

TEST(DualEncoder, DeterministicEmbeddings) {
  Rng rng(1);
  const Image img = RandImage(rng);
  const DualEncoder a = FreshEncoder(), b = FreshEncoder();
  EXPECT_EQ(a.EmbedImage(img), b.EmbedImage(img));
  EXPECT_EQ(a.EmbedText(kCaption), b.EmbedText(kCaption));
  EXPECT_EQ(a.EmbedImage(img).size(), 32);
  EXPECT_EQ(a.EmbedText(kCaption).size(), 32);
  EXPECT_NEAR(Cosine(a.EmbedImage(img), a.EmbedImage(img)), 1.0, 1e-15);
}

TEST(DualEncoder, EmptyCaptionIsAnError) {
  EXPECT_THROW(FreshEncoder().EmbedText({}), Error);
}

TEST(DualEncoder, UnknownTokensMapToUnk) {
  const DualEncoder e = FreshEncoder();
  EXPECT_EQ(e.EmbedText({"zebra"}), e.EmbedText({"<unk>"}));
  EXPECT_EQ(e.EmbedText({"zebra", "hair"}), e.EmbedText({"okapi", "hair"}));
}

TEST(DualEncoder, ImageSizeMismatchIsAnError) {
  EXPECT_THROW(FreshEncoder().EmbedImage(Image(32, 32)), Error);
  DualEncoderConfig c;
  c.patch = 7;
  EXPECT_THROW(DualEncoder::Init(BuildTokenVocab(FacesLite()), 64, c, EncoderRole::kTrain, 1), Error);
}

TEST(DualEncoder, PixelGradientMatchesFiniteDifferences) {
  Rng rng(2);
  const DualEncoder e = FreshEncoder();
  double worst = 0.0;
  for (int t = 0; t < 20; ++t) {
    const Image img = RandImage(rng);
    Eigen::VectorXd w(32);
    for (int i = 0; i < 32; ++i) w(i) = rng.Normal();
    const Image g = e.ImageInputGrad(img, w);
    const std::size_t i = rng.Index(img.data.size());
    auto f = [&](double v) {
      Image copy = img;
      copy.data[i] = v;
      return w.dot(e.EmbedImage(copy));
    };
    const double eps = 1e-4;
    const double numeric = (f(img.data[i] + eps) - f(img.data[i] - eps)) / (2 * eps);
    worst = std::max(worst, RelErr(g.data[i], numeric));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(DualEncoder, ImageTowerParameterGradients) {
  Rng rng(3);
  DualEncoder e = FreshEncoder();
  const Image img = RandImage(rng);
  const Eigen::VectorXd f = e.PatchFeatures(img);
  Eigen::VectorXd w(32);
  for (int i = 0; i < 32; ++i) w(i) = rng.Normal();
  auto params = Concat(e.img1.Params(), e.img2.Params());
  ZeroGrads(params);
  e.BackwardImageFeatures(f, w);
  const double worst = testing::WorstParamGradError(
      params, [&] { return w.dot(e.EmbedFeatures(f)); }, 20, rng);
  EXPECT_LT(worst, 1e-4);
}

TEST(DualEncoder, TextTowerParameterGradients) {
  Rng rng(4);
  DualEncoder e = FreshEncoder();
  const auto ids = e.TokenIds(kCaption);
  Eigen::VectorXd w(32);
  for (int i = 0; i < 32; ++i) w(i) = rng.Normal();
  auto params = Concat(e.tok.Params(), e.txt.Params());
  ZeroGrads(params);
  e.BackwardText(ids, w);
  // Sample only token rows that occur in the caption for the table.
  double worst = testing::WorstParamGradError(
      e.txt.Params(), [&] { return w.dot(e.EmbedTextIds(ids)); }, 20, rng);
  for (int t = 0; t < 20; ++t) {
    const int row = ids[rng.Index(ids.size())];
    const int col = static_cast<int>(rng.Index(e.tok.dim()));
    double& x = e.tok.table.value(row, col);
    const double x0 = x, eps = 1e-6;
    x = x0 + eps;
    const double up = w.dot(e.EmbedTextIds(ids));
    x = x0 - eps;
    const double down = w.dot(e.EmbedTextIds(ids));
    x = x0;
    worst = std::max(worst, RelErr(e.tok.table.grad(row, col), (up - down) / (2 * eps)));
  }
  EXPECT_LT(worst, 1e-4);
}

// Symmetric InfoNCE written out directly.
double BruteInfoNce(const std::vector<Eigen::VectorXd>& img,
                    const std::vector<Eigen::VectorXd>& txt, double scale) {
  const std::size_t b = img.size();
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    double row = 0.0, col = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      row += std::exp(scale * Cosine(img[i], txt[j]));
      col += std::exp(scale * Cosine(img[j], txt[i]));
    }
    const double pos = scale * Cosine(img[i], txt[i]);
    total += 0.5 * ((std::log(row) - pos) + (std::log(col) - pos));
  }
  return total / static_cast<double>(b);
}

TEST(SymmetricInfoNce, MatchesBruteForceAndGradients) {
  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    const int b = 2 + static_cast<int>(rng.Index(7));
    std::vector<Eigen::VectorXd> img, txt;
    for (int i = 0; i < b; ++i) {
      img.push_back(Eigen::VectorXd::NullaryExpr(6, [&] { return rng.Normal(); }));
      txt.push_back(Eigen::VectorXd::NullaryExpr(6, [&] { return rng.Normal(); }));
    }
    const double scale = 1.0 + 20.0 * rng.Uniform();
    const auto r = SymmetricInfoNce(img, txt, scale);
    EXPECT_NEAR(r.loss, BruteInfoNce(img, txt, scale), 1e-10);
    const double eps = 1e-6;
    const double d_scale =
        (BruteInfoNce(img, txt, scale * std::exp(eps)) - BruteInfoNce(img, txt, scale * std::exp(-eps))) /
        (2 * eps);
    EXPECT_LT(RelErr(r.d_log_scale, d_scale), 1e-5);
    const int k = static_cast<int>(rng.Index(b)), i = static_cast<int>(rng.Index(6));
    auto f = [&](const Eigen::VectorXd& v) {
      auto copy = txt;
      copy[k] = v;
      return BruteInfoNce(img, copy, scale);
    };
    EXPECT_LT(RelErr(r.d_text[k](i), testing::CentralDiff(f, txt[k], i, 1e-6)), 1e-5);
  }
}

TEST(SymmetricInfoNce, BatchOfOneIsAnError) {
  const std::vector<Eigen::VectorXd> one{Eigen::Vector2d(1, 0)};
  EXPECT_THROW(SymmetricInfoNce(one, one, 10.0), Error);
}

TEST(TrainDualEncoder, RejectsDegenerateBatches) {
  Rng rng(6);
  const std::vector<EncoderPair> pairs{{RandImage(rng), kCaption, {}}, {RandImage(rng), kCaption, {}}};
  DualEncoderConfig c;
  c.batch_size = 1;
  EXPECT_THROW(TrainDualEncoder(pairs, BuildTokenVocab(FacesLite()), c, EncoderRole::kTrain, 1), Error);
  EXPECT_THROW(TrainDualEncoder({pairs[0]}, BuildTokenVocab(FacesLite()), {}, EncoderRole::kTrain, 1),
               Error);
}

TEST(DualEncoder, CheckpointKeepsRoleAndWeights) {
  Rng rng(7);
  const DualEncoder e = FreshEncoder(EncoderRole::kEval, 3);
  const DualEncoder back = DualEncoderFromJson(ToJson(e));
  EXPECT_EQ(back.role, EncoderRole::kEval);
  const Image img = RandImage(rng);
  EXPECT_EQ(back.EmbedImage(img), e.EmbedImage(img));
  EXPECT_EQ(back.EmbedText(kCaption), e.EmbedText(kCaption));
  EXPECT_EQ(back.scale(), e.scale());
}

TEST(DualEncoder, RoleGuard) {
  const DualEncoder e = FreshEncoder(EncoderRole::kEval);
  try {
    RequireRole(e, EncoderRole::kTrain, "a training loss");
    FAIL() << "expected a role error";
  } catch (const Error& err) {
    EXPECT_EQ(err.kind(), ErrorKind::kRole);
    EXPECT_EQ(ExitCodeFor(err.kind()), 4);
  }
  EXPECT_NO_THROW(RequireRole(e, EncoderRole::kEval, "r-precision"));
  EXPECT_STREQ(RoleName(EncoderRole::kTrain), "train-encoder");
  EXPECT_STREQ(RoleName(EncoderRole::kEval), "eval-encoder");
}

// Encoders trained on faces-lite, shared by the slower tests below.
class TrainedEncoders : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    ExperimentConfig c;
    world_ = new WorldData(MakeWorldData(c));
    gen_ = new Generator(BuildExperimentGenerator(c));
    reals_ = new std::vector<Image>(RenderReals(*gen_, world_->dataset, c.seed));
    EffectiveConfigs e;
    e.train_encoder = c.encoder;
    e.eval_encoder = c.encoder;
    bundle_ = new EncoderBundle(TrainEncoders(e, *world_, *reals_, c.seed));
  }
  static void TearDownTestSuite() {
    delete bundle_;
    delete reals_;
    delete gen_;
    delete world_;
  }
  static WorldData* world_;
  static Generator* gen_;
  static std::vector<Image>* reals_;
  static EncoderBundle* bundle_;
};
WorldData* TrainedEncoders::world_ = nullptr;
Generator* TrainedEncoders::gen_ = nullptr;
std::vector<Image>* TrainedEncoders::reals_ = nullptr;
EncoderBundle* TrainedEncoders::bundle_ = nullptr;

TEST_F(TrainedEncoders, LossDecreasesAndScaleStaysClamped) {
  for (const auto* t : {&bundle_->train, &bundle_->eval}) {
    ASSERT_EQ(t->log.size(), 40u);
    EXPECT_LT(t->log.back().mean_loss, t->log.front().mean_loss);
    for (const auto& l : t->log) {
      EXPECT_GE(l.scale, 1.0 - 1e-12);
      EXPECT_LE(l.scale, 100.0 + 1e-9);
    }
  }
  EXPECT_EQ(bundle_->train.encoder.role, EncoderRole::kTrain);
  EXPECT_EQ(bundle_->eval.encoder.role, EncoderRole::kEval);
}

TEST_F(TrainedEncoders, CanonicalRetrievalTopOne) {
  const auto& schema = gen_->schema;
  const auto comps = AllCompositions(schema);
  int hits = 0;
  for (const auto& a : comps) {
    const auto e = bundle_->eval.encoder.EmbedImage(Render(*gen_, CanonicalLatent(*gen_, a)));
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t k = 0; k < comps.size(); ++k) {
      const double c =
          Cosine(e, bundle_->eval.encoder.EmbedText(RenderCaption(schema, comps[k], 0).tokens));
      if (c > best_cos) {
        best_cos = c;
        best = k;
      }
    }
    hits += comps[best] == a;
  }
  EXPECT_GE(hits / 24.0, 0.9) << hits << "/24";
}

TEST_F(TrainedEncoders, MatchedBeatsMismatchedOnHeldOutRecords) {
  // The train encoder never saw test-split records.
  const DualEncoder& enc = bundle_->train.encoder;
  const auto& ids = world_->split.test_ids;
  double matched = 0.0, mismatched = 0.0;
  for (std::size_t k = 0; k < ids.size(); ++k) {
    const auto img = enc.EmbedImage((*reals_)[ids[k]]);
    matched += Cosine(img, enc.EmbedText(world_->dataset.records[ids[k]].caption.tokens));
    const auto other = ids[(k + ids.size() / 2) % ids.size()];
    mismatched += Cosine(img, enc.EmbedText(world_->dataset.records[other].caption.tokens));
  }
  EXPECT_GT(matched / ids.size(), mismatched / ids.size());
}

}  // namespace
}  // namespace compt2i
