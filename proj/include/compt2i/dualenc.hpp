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

// Small image/text dual encoder trained with symmetric InfoNCE.
//
// image: 8x8 patch means (3 channels) -> Linear -> ReLU -> Linear
// text:  mean token embedding -> Linear

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "compt2i/cosine.hpp"
#include "compt2i/error.hpp"
#include "compt2i/hash.hpp"
#include "compt2i/image.hpp"
#include "compt2i/nn.hpp"
#include "compt2i/rng.hpp"
#include "compt2i/tokens.hpp"
#include "json.hpp"

namespace compt2i {

enum class EncoderRole { kTrain, kEval };

inline const char* RoleName(EncoderRole r) {
  return r == EncoderRole::kTrain ? "train-encoder" : "eval-encoder";
}

inline EncoderRole RoleFromName(const std::string& s) {
  if (s == "train-encoder") return EncoderRole::kTrain;
  if (s == "eval-encoder") return EncoderRole::kEval;
  throw RoleError("unknown encoder role: " + s);
}

struct DualEncoderConfig {
  int embed_dim = 32;
  int hidden = 64;
  int token_dim = 32;
  int patch = 8;
  int epochs = 40;
  int batch_size = 32;
  double learning_rate = 3e-3;
  double init_scale = 1.0 / 0.07;
  double min_scale = 1.0;
  double max_scale = 100.0;
  // Probability that a training pair's caption is replaced, for one epoch,
  // by a random non-empty subset of its attribute phrases.
  double phrase_dropout = 0.5;
};

inline nlohmann::json ToJson(const DualEncoderConfig& c) {
  return {{"embed_dim", c.embed_dim},       {"hidden", c.hidden},
          {"token_dim", c.token_dim},       {"patch", c.patch},
          {"epochs", c.epochs},             {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate}, {"init_scale", c.init_scale},
          {"min_scale", c.min_scale},       {"max_scale", c.max_scale},
          {"phrase_dropout", c.phrase_dropout}};
}

inline DualEncoderConfig DualEncoderConfigFromJson(const nlohmann::json& j) {
  DualEncoderConfig c;
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.hidden = j.value("hidden", c.hidden);
  c.token_dim = j.value("token_dim", c.token_dim);
  c.patch = j.value("patch", c.patch);
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.min_scale = j.value("min_scale", c.min_scale);
  c.max_scale = j.value("max_scale", c.max_scale);
  c.phrase_dropout = j.value("phrase_dropout", c.phrase_dropout);
  return c;
}

class DualEncoder {
 public:
  EncoderRole role = EncoderRole::kTrain;
  DualEncoderConfig config;
  TokenVocab vocab;
  int image_size = 0;
  Linear img1;
  Linear img2;
  MeanEmbedding tok;
  Linear txt;
  Param log_scale{1, 1};

  static DualEncoder Init(const TokenVocab& vocab, int image_size,
                          const DualEncoderConfig& config, EncoderRole role,
                          std::uint64_t seed) {
    if (config.patch < 1 || image_size % config.patch != 0)
      throw InvalidArgument("patch size must divide the image size");
    DualEncoder e;
    e.role = role;
    e.config = config;
    e.vocab = vocab;
    e.image_size = image_size;
    Rng rng(MixSeed(seed, "dual-encoder-init"));
    const int cells = image_size / config.patch;
    const int n_feat = cells * cells * 3;
    e.img1 = Linear(n_feat, config.hidden, rng, std::sqrt(2.0));
    e.img2 = Linear(config.hidden, config.embed_dim, rng);
    e.tok = MeanEmbedding(vocab.size(), config.token_dim, rng);
    e.txt = Linear(config.token_dim, config.embed_dim, rng);
    e.log_scale.value(0, 0) = std::log(config.init_scale);
    return e;
  }

  int cells() const { return image_size / config.patch; }
  double scale() const { return std::exp(log_scale.value(0, 0)); }

  Eigen::VectorXd PatchFeatures(const Image& img) const {
    if (img.height != image_size || img.width != image_size)
      throw InvalidArgument("encoder: image size mismatch");
    const int n = cells();
    const int p = config.patch;
    Eigen::VectorXd f = Eigen::VectorXd::Zero(n * n * 3);
    const double inv = 1.0 / (p * p);
    for (int r = 0; r < image_size; ++r)
      for (int c = 0; c < image_size; ++c) {
        const int cell = (r / p) * n + (c / p);
        for (int ch = 0; ch < 3; ++ch) f(cell * 3 + ch) += inv * img.at(r, c, ch);
      }
    return f;
  }

  Image PatchFeaturesBackward(const Eigen::VectorXd& df) const {
    const int n = cells();
    const int p = config.patch;
    const double inv = 1.0 / (p * p);
    Image g(image_size, image_size);
    for (int r = 0; r < image_size; ++r)
      for (int c = 0; c < image_size; ++c) {
        const int cell = (r / p) * n + (c / p);
        for (int ch = 0; ch < 3; ++ch) g.at(r, c, ch) = inv * df(cell * 3 + ch);
      }
    return g;
  }

  Eigen::VectorXd EmbedFeatures(const Eigen::VectorXd& f) const {
    return img2.Forward(Relu(img1.Forward(f)));
  }

  Eigen::VectorXd EmbedImage(const Image& img) const {
    return EmbedFeatures(PatchFeatures(img));
  }

  std::vector<int> TokenIds(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw InvalidArgument("empty caption");
    return vocab.Ids(tokens);
  }

  Eigen::VectorXd EmbedTextIds(const std::vector<int>& ids) const {
    return txt.Forward(tok.Forward(ids));
  }

  Eigen::VectorXd EmbedText(const std::vector<std::string>& tokens) const {
    return EmbedTextIds(TokenIds(tokens));
  }

  // dL/dpixels for a given dL/dembedding; parameters untouched.
  Image ImageInputGrad(const Image& img, const Eigen::VectorXd& d_emb) const {
    const Eigen::VectorXd pre = img1.Forward(PatchFeatures(img));
    const Eigen::VectorXd dh = ReluBackward(pre, img2.InputGrad(d_emb));
    return PatchFeaturesBackward(img1.InputGrad(dh));
  }

  void BackwardImageFeatures(const Eigen::VectorXd& f,
                             const Eigen::VectorXd& d_emb) {
    const Eigen::VectorXd pre = img1.Forward(f);
    const Eigen::VectorXd dh = ReluBackward(pre, img2.Backward(Relu(pre), d_emb));
    img1.Backward(f, dh);
  }

  void BackwardText(const std::vector<int>& ids, const Eigen::VectorXd& d_emb) {
    tok.Backward(ids, txt.Backward(tok.Forward(ids), d_emb));
  }

  std::vector<Param*> Params() {
    auto p = Concat(img1.Params(), img2.Params());
    p = Concat(p, tok.Params());
    p = Concat(p, txt.Params());
    p.push_back(&log_scale);
    return p;
  }
};

// ---------------------------------------------------------------------------
// Symmetric InfoNCE over a batch of (image, text) embeddings.

struct InfoNceResult {
  double loss = 0.0;
  std::vector<Eigen::VectorXd> d_image;
  std::vector<Eigen::VectorXd> d_text;
  double d_log_scale = 0.0;
};

inline InfoNceResult SymmetricInfoNce(const std::vector<Eigen::VectorXd>& img,
                                      const std::vector<Eigen::VectorXd>& txt,
                                      double scale) {
  const int b = static_cast<int>(img.size());
  if (b < 2) throw InvalidArgument("contrastive loss needs a batch of >= 2");
  if (txt.size() != img.size()) throw InvalidArgument("batch size mismatch");
  Eigen::MatrixXd cos(b, b);
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j) cos(i, j) = Cosine(img[i], txt[j]);
  const Eigen::MatrixXd logits = scale * cos;

  auto softmax_rows = [](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd p(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double mx = x.row(i).maxCoeff();
      p.row(i) = (x.row(i).array() - mx).exp();
      p.row(i) /= p.row(i).sum();
    }
    return p;
  };
  const Eigen::MatrixXd pr = softmax_rows(logits);
  const Eigen::MatrixXd pc = softmax_rows(logits.transpose()).transpose();

  InfoNceResult out;
  for (int i = 0; i < b; ++i)
    out.loss -= 0.5 / b * (std::log(pr(i, i)) + std::log(pc(i, i)));
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(b, b);
  const Eigen::MatrixXd d_logits = 0.5 / b * ((pr - eye) + (pc - eye));
  out.d_log_scale = scale * (d_logits.array() * cos.array()).sum();
  const Eigen::MatrixXd d_cos = scale * d_logits;
  out.d_image.assign(b, Eigen::VectorXd::Zero(img[0].size()));
  out.d_text.assign(b, Eigen::VectorXd::Zero(txt[0].size()));
  for (int i = 0; i < b; ++i)
    for (int j = 0; j < b; ++j)
      CosineBackward(img[i], txt[j], d_cos(i, j), out.d_image[i], out.d_text[j]);
  return out;
}

// ---------------------------------------------------------------------------
// Training.

struct EncoderPair {
  Image image;
  std::vector<std::string> tokens;
  // Attribute phrases of the caption, used for phrase-subset views.
  std::vector<std::vector<std::string>> phrases;
};

struct EncoderEpochLog {
  int epoch = 0;
  double mean_loss = 0.0;
  double scale = 0.0;
};

struct TrainedEncoder {
  DualEncoder encoder;
  std::vector<EncoderEpochLog> log;
};

inline TrainedEncoder TrainDualEncoder(const std::vector<EncoderPair>& pairs,
                                       const TokenVocab& vocab,
                                       const DualEncoderConfig& config,
                                       EncoderRole role, std::uint64_t seed) {
  if (pairs.size() < 2) throw InvalidArgument("encoder training needs >= 2 pairs");
  if (config.batch_size < 2)
    throw InvalidArgument("encoder batch size must be >= 2");
  const int image_size = pairs.front().image.height;
  TrainedEncoder out{DualEncoder::Init(vocab, image_size, config, role, seed), {}};
  DualEncoder& enc = out.encoder;

  std::vector<Eigen::VectorXd> feats;
  std::vector<std::vector<int>> full_ids;
  std::vector<std::vector<std::vector<int>>> phrase_ids;
  feats.reserve(pairs.size());
  for (const auto& p : pairs) {
    feats.push_back(enc.PatchFeatures(p.image));
    full_ids.push_back(enc.TokenIds(p.tokens));
    phrase_ids.emplace_back();
    for (const auto& ph : p.phrases) phrase_ids.back().push_back(enc.TokenIds(ph));
  }
  std::vector<std::vector<int>> ids = full_ids;

  Adam adam({config.learning_rate});
  Rng rng(MixSeed(seed, "dual-encoder-train"));
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  const auto params = enc.Params();
  const std::size_t bs = std::min<std::size_t>(config.batch_size, pairs.size());
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.Index(i)]);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      ids[i] = full_ids[i];
      if (phrase_ids[i].empty() || !rng.Bernoulli(config.phrase_dropout)) continue;
      std::vector<int> view;
      const std::size_t keep = rng.Index(phrase_ids[i].size());
      for (std::size_t k = 0; k < phrase_ids[i].size(); ++k)
        if (k == keep || rng.Bernoulli(0.5))
          view.insert(view.end(), phrase_ids[i][k].begin(), phrase_ids[i][k].end());
      ids[i] = std::move(view);
    }
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start + bs <= order.size(); start += bs) {
      std::vector<Eigen::VectorXd> ie, te;
      for (std::size_t k = start; k < start + bs; ++k) {
        ie.push_back(enc.EmbedFeatures(feats[order[k]]));
        te.push_back(enc.EmbedTextIds(ids[order[k]]));
      }
      const auto res = SymmetricInfoNce(ie, te, enc.scale());
      ZeroGrads(params);
      for (std::size_t k = 0; k < bs; ++k) {
        enc.BackwardImageFeatures(feats[order[start + k]], res.d_image[k]);
        enc.BackwardText(ids[order[start + k]], res.d_text[k]);
      }
      enc.log_scale.grad(0, 0) = res.d_log_scale;
      adam.Step(params);
      enc.log_scale.value(0, 0) =
          std::clamp(enc.log_scale.value(0, 0), std::log(config.min_scale),
                     std::log(config.max_scale));
      total += res.loss;
      ++batches;
    }
    out.log.push_back({epoch, batches ? total / batches : 0.0, enc.scale()});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints.

inline nlohmann::json ToJson(const DualEncoder& e) {
  return {{"kind", "dual-encoder"},
          {"role", RoleName(e.role)},
          {"config", ToJson(e.config)},
          {"image_size", e.image_size},
          {"vocab", e.vocab.Words()},
          {"img1", ToJson(e.img1)},
          {"img2", ToJson(e.img2)},
          {"tok", ParamToJson(e.tok.table)},
          {"txt", ToJson(e.txt)},
          {"log_scale", e.log_scale.value(0, 0)}};
}

inline DualEncoder DualEncoderFromJson(const nlohmann::json& j) {
  DualEncoder e;
  e.role = RoleFromName(j.at("role").get<std::string>());
  e.config = DualEncoderConfigFromJson(j.at("config"));
  e.image_size = j.at("image_size").get<int>();
  e.vocab = TokenVocab(j.at("vocab").get<std::vector<std::string>>());
  e.img1 = LinearFromJson(j.at("img1"));
  e.img2 = LinearFromJson(j.at("img2"));
  e.tok.table = ParamFromJson(j.at("tok"));
  e.txt = LinearFromJson(j.at("txt"));
  e.log_scale.value(0, 0) = j.at("log_scale").get<double>();
  return e;
}

inline void RequireRole(const DualEncoder& e, EncoderRole expected,
                        const std::string& consumer) {
  if (e.role != expected)
    throw RoleError(consumer + " requires the " + RoleName(expected) +
                    ", got the " + RoleName(e.role));
}

}  // namespace compt2i
