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

// Attribute-to-direction module: a = F(z, phrase), trained with a triplet
// over (phrase, G(z + a), G(z - a)) plus a spatial constraint that keeps the
// pos/neg difference inside the attribute's region.

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "compt2i/direction_net.hpp"
#include "compt2i/dualenc.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/lexattr.hpp"
#include "compt2i/losses.hpp"
#include "compt2i/synthworld.hpp"

namespace compt2i {

enum class A2DLoss { kSemantic, kContrastive };
enum class Disentangle { kSpatial, kOrthogonality, kNone };

inline const char* A2DLossName(A2DLoss l) {
  return l == A2DLoss::kSemantic ? "semantic" : "contrastive";
}
inline A2DLoss A2DLossFromName(const std::string& s) {
  if (s == "semantic") return A2DLoss::kSemantic;
  if (s == "contrastive") return A2DLoss::kContrastive;
  throw ConfigError("unknown a2d loss: " + s);
}
inline const char* DisentangleName(Disentangle d) {
  switch (d) {
    case Disentangle::kSpatial: return "spatial";
    case Disentangle::kOrthogonality: return "orthogonality";
    default: return "none";
  }
}
inline Disentangle DisentangleFromName(const std::string& s) {
  if (s == "spatial") return Disentangle::kSpatial;
  if (s == "orthogonality") return Disentangle::kOrthogonality;
  if (s == "none") return Disentangle::kNone;
  throw ConfigError("unknown disentangle mode: " + s);
}

struct A2DTrainConfig {
  double alpha = 1.0;
  double theta = 1.0;
  double flip_prob = 0.0;
  // Fraction of iterations over which the spatial term ramps in linearly.
  double spatial_warmup = 0.0;
  int iterations = 1000;
  int batch_size = 2;
  double learning_rate = 2e-3;
  A2DLoss loss = A2DLoss::kSemantic;
  Disentangle disentangle = Disentangle::kSpatial;
  bool norm_penalty = true;
  bool record_trace = false;
  DirectionNetConfig net;
};

inline Json ToJson(const A2DTrainConfig& c) {
  return {{"alpha", c.alpha},
          {"theta", c.theta},
          {"flip_prob", c.flip_prob},
          {"spatial_warmup", c.spatial_warmup},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"learning_rate", c.learning_rate},
          {"loss", A2DLossName(c.loss)},
          {"disentangle", DisentangleName(c.disentangle)},
          {"norm_penalty", c.norm_penalty},
          {"mode", ModeName(c.net.mode)},
          {"token_dim", c.net.token_dim},
          {"hidden", c.net.hidden},
          {"output_gain", c.net.output_gain}};
}

inline A2DTrainConfig A2DTrainConfigFromJson(const Json& j) {
  A2DTrainConfig c;
  c.alpha = j.value("alpha", c.alpha);
  c.theta = j.value("theta", c.theta);
  c.flip_prob = j.value("flip_prob", c.flip_prob);
  c.spatial_warmup = j.value("spatial_warmup", c.spatial_warmup);
  c.iterations = j.value("iterations", c.iterations);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.loss = A2DLossFromName(j.value("loss", std::string("semantic")));
  c.disentangle = DisentangleFromName(j.value("disentangle", std::string("spatial")));
  c.norm_penalty = j.value("norm_penalty", c.norm_penalty);
  c.net.mode = ModeFromName(j.value("mode", std::string("local")));
  c.net.token_dim = j.value("token_dim", c.net.token_dim);
  c.net.hidden = j.value("hidden", c.net.hidden);
  c.net.output_gain = j.value("output_gain", c.net.output_gain);
  if (!(c.alpha > 0.0)) throw ConfigError("a2d: alpha must be positive");
  if (!(c.theta > 0.0)) throw ConfigError("a2d: theta must be positive");
  if (c.batch_size < 1) throw ConfigError("a2d: batch_size must be >= 1");
  if (c.spatial_warmup < 0.0 || c.spatial_warmup > 1.0)
    throw ConfigError("a2d: spatial_warmup must be in [0, 1]");
  return c;
}

struct AttributeToDirection {
  DirectionNet net;
  Vocabulary vocab;
  std::string generator_hash;

  Direction Predict(const LatentCode& z, const std::vector<std::string>& phrase) const {
    if (!vocab.Find(phrase))
      throw InvalidArgument("unknown attribute phrase: " + JoinTokens(phrase));
    return net.Predict(z, phrase);
  }
  Direction Predict(const LatentCode& z, const AttributePhrase& phrase) const {
    return net.Predict(z, phrase.tokens);
  }
};

struct A2DStepLog {
  int iteration = 0;
  double semantic = 0.0;
  double spatial = 0.0;
  double orthogonality = 0.0;
  double norm = 0.0;
  double mean_norm = 0.0;
};

// Codes actually rendered in one training sample.
struct A2DTrace {
  LatentCode z;
  Direction a;
  LatentCode pos;
  LatentCode neg;
  int phrase = -1;
};

struct A2DTrainResult {
  AttributeToDirection module;
  std::vector<A2DStepLog> log;
  std::vector<A2DTrace> trace;
  std::string mask_source;
};

// One sample of a training batch: a code, a phrase index and, for the
// orthogonality variant, a phrase of another slot.
struct A2DSample {
  LatentCode z;
  std::size_t phrase = 0;
  std::size_t other = 0;
};

// Per-phrase inputs shared across batches.
struct A2DPhraseTable {
  std::vector<std::vector<int>> ids;
  std::vector<Eigen::VectorXd> text_embedding;
};

inline A2DPhraseTable BuildPhraseTable(const DirectionNet& net, const DualEncoder& enc,
                                       const Vocabulary& vocab) {
  A2DPhraseTable t;
  for (const auto& p : vocab.phrases) {
    t.ids.push_back(net.TokenIds(p.tokens));
    t.text_embedding.push_back(enc.EmbedText(p.tokens));
  }
  return t;
}

// Batch objective: semantic (or contrastive) term, `spatial_weight` times
// the spatial term, norm penalty and orthogonality penalty. Adds
// d(objective)/d(params) into the net's gradients; the caller zeroes them.
inline double A2DBatchObjective(const Generator& g, const DualEncoder& enc, DirectionNet& net,
                                const Vocabulary& vocab, const A2DPhraseTable& table,
                                const std::vector<Mask>& masks,
                                const std::vector<A2DSample>& batch,
                                const A2DTrainConfig& config, double spatial_weight,
                                A2DStepLog* log = nullptr,
                                std::vector<A2DTrace>* trace = nullptr) {
  const int b = static_cast<int>(batch.size());
  A2DStepLog l;
  std::vector<DirectionNet::Cache> caches(b);
  std::vector<Direction> dirs;
  std::vector<Image> pos, neg;
  std::vector<Eigen::MatrixXd> d_dir;
  for (int k = 0; k < b; ++k) {
    const LatentCode& z = batch[k].z;
    dirs.push_back(net.Forward(z, table.ids[batch[k].phrase], &caches[k]));
    pos.push_back(Render(g, z + dirs[k]));
    neg.push_back(Render(g, z - dirs[k]));
    d_dir.push_back(Eigen::MatrixXd::Zero(g.layers(), g.dims()));
    if (trace)
      trace->push_back({z, dirs[k], z + dirs[k], z - dirs[k], static_cast<int>(batch[k].phrase)});
  }

  // Image-space gradients for pos and neg renders.
  std::vector<Image> g_pos(b, Image(g.image_size(), g.image_size()));
  std::vector<Image> g_neg(b, Image(g.image_size(), g.image_size()));
  auto add_emb_grad = [&](std::vector<Image>& dst, int k, const Image& img,
                          const Eigen::VectorXd& d_emb) {
    const Image pix = enc.ImageInputGrad(img, d_emb);
    for (std::size_t i = 0; i < pix.data.size(); ++i) dst[k].data[i] += pix.data[i];
  };

  if (config.loss == A2DLoss::kSemantic) {
    for (int k = 0; k < b; ++k) {
      const auto r = SemanticMatchingLoss(enc.EmbedImage(pos[k]), enc.EmbedImage(neg[k]),
                                          table.text_embedding[batch[k].phrase], config.alpha);
      l.semantic += r.value / b;
      if (r.value > 0.0) {
        add_emb_grad(g_pos, k, pos[k], r.d_pos / b);
        add_emb_grad(g_neg, k, neg[k], r.d_neg / b);
      }
    }
  } else {
    std::vector<Eigen::VectorXd> ie, te;
    for (int k = 0; k < b; ++k) {
      ie.push_back(enc.EmbedImage(pos[k]));
      te.push_back(table.text_embedding[batch[k].phrase]);
    }
    const auto r = ContrastiveLoss(ie, te, ContrastiveVariant::kExcludeSelf);
    l.semantic = r.value;
    for (int k = 0; k < b; ++k) add_emb_grad(g_pos, k, pos[k], r.d_image[k]);
  }

  if (config.disentangle == Disentangle::kSpatial) {
    for (int k = 0; k < b; ++k) {
      const ScalarMap diff = PixelDiffNormalized(pos[k], neg[k]);
      ScalarMap d_diff;
      l.spatial += SpatialConstraintLoss(diff, masks[vocab.phrases[batch[k].phrase].slot],
                                         &d_diff) / b;
      for (auto& v : d_diff.data) v *= spatial_weight / b;
      const Image gp = PixelDiffNormalizedBackward(pos[k], neg[k], d_diff);
      for (std::size_t i = 0; i < gp.data.size(); ++i) {
        g_pos[k].data[i] += gp.data[i];
        g_neg[k].data[i] -= gp.data[i];
      }
    }
  }

  for (int k = 0; k < b; ++k) {
    const LatentCode& z = batch[k].z;
    d_dir[k] += RenderBackward(g, z + dirs[k], g_pos[k]).values;
    d_dir[k] -= RenderBackward(g, z - dirs[k], g_neg[k]).values;
    const double n = dirs[k].Norm();
    l.mean_norm += n / b;
    if (config.norm_penalty) {
      l.norm += NormPenalty(dirs[k], config.theta) / b;
      d_dir[k] += NormPenaltyGrad(dirs[k], config.theta) / b;
    }
  }

  if (config.disentangle == Disentangle::kOrthogonality) {
    // Each sampled attribute against one from a different slot at the same z.
    for (int k = 0; k < b; ++k) {
      DirectionNet::Cache oc;
      const Direction od = net.Forward(batch[k].z, table.ids[batch[k].other], &oc);
      if (dirs[k].Norm() == 0.0 || od.Norm() == 0.0) continue;
      std::vector<Eigen::MatrixXd> grads;
      l.orthogonality += OrthogonalityPenalty({dirs[k], od}, &grads) / b;
      d_dir[k] += grads[0] / b;
      net.Backward(oc, grads[1] / b);
    }
  }

  for (int k = 0; k < b; ++k) net.Backward(caches[k], d_dir[k]);
  if (log) *log = l;
  return l.semantic + spatial_weight * l.spatial + l.norm + l.orthogonality;
}

// Masks are indexed by slot.
inline A2DTrainResult TrainA2D(const Generator& g, const std::string& generator_hash,
                               const DualEncoder& enc, const Vocabulary& vocab,
                               const std::vector<Mask>& masks,
                               const A2DTrainConfig& config, std::uint64_t seed) {
  RequireRole(enc, EncoderRole::kTrain, "attribute-to-direction training");
  if (!(config.alpha > 0.0)) throw InvalidArgument("alpha must be positive");
  if (masks.size() != g.schema.slots.size())
    throw InvalidArgument("a2d needs one mask per slot");
  if (config.loss == A2DLoss::kContrastive && config.batch_size < 2)
    throw InvalidArgument("contrastive a2d needs a batch of >= 2");

  A2DTrainResult out;
  out.mask_source = config.flip_prob > 0.0
                        ? "corrupted p=" + std::to_string(config.flip_prob)
                        : "exact";
  out.module.vocab = vocab;
  out.module.generator_hash = generator_hash;
  out.module.net = DirectionNet::Init(BuildTokenVocab(g.schema), g.layers(), g.dims(),
                                      DirectionKind::kAttribute, config.net,
                                      MixSeed(seed, "a2d"));
  DirectionNet& net = out.module.net;
  const std::size_t n_phrases = vocab.phrases.size();
  const A2DPhraseTable table = BuildPhraseTable(net, enc, vocab);

  Adam adam({config.learning_rate});
  Rng rng(MixSeed(seed, "a2d-train"));
  const auto params = net.Params();
  const double ramp_len = config.spatial_warmup * config.iterations;
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<A2DSample> batch(config.batch_size);
    for (auto& sample : batch) {
      sample.z = SampleLatent(g, rng);
      sample.phrase = rng.Index(n_phrases);
    }
    if (config.disentangle == Disentangle::kOrthogonality)
      for (auto& sample : batch) {
        do {
          sample.other = rng.Index(n_phrases);
        } while (vocab.phrases[sample.other].slot == vocab.phrases[sample.phrase].slot);
      }
    const double w = ramp_len > 0.0 ? std::min(1.0, it / ramp_len) : 1.0;
    ZeroGrads(params);
    A2DStepLog log;
    A2DBatchObjective(g, enc, net, vocab, table, masks, batch, config, w, &log,
                      config.record_trace ? &out.trace : nullptr);
    log.iteration = it;
    adam.Step(params);
    out.log.push_back(log);
  }
  return out;
}

inline Json ToJson(const A2DStepLog& l) {
  return {{"iteration", l.iteration}, {"semantic", l.semantic},
          {"spatial", l.spatial},     {"orthogonality", l.orthogonality},
          {"norm", l.norm},           {"mean_norm", l.mean_norm}};
}

inline Json ToJson(const AttributeToDirection& m) {
  return {{"kind", "a2d"}, {"generator_hash", m.generator_hash}, {"net", ToJson(m.net)}};
}

inline AttributeToDirection AttributeToDirectionFromJson(const Json& j,
                                                         const Vocabulary& vocab) {
  return {DirectionNetFromJson(j.at("net")), vocab,
          j.at("generator_hash").get<std::string>()};
}

}  // namespace compt2i
