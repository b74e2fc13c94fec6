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

// Text-to-direction module: s = F(z, caption), trained so that G(z + s)
// matches the caption under the training encoder.

#pragma once

#include <algorithm>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "compt2i/direction_net.hpp"
#include "compt2i/dualenc.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/lexattr.hpp"
#include "compt2i/losses.hpp"
#include "compt2i/synthworld.hpp"

namespace compt2i {

struct T2DTrainConfig {
  double theta = 1.0;
  int batch_size = 32;
  int iterations = 400;
  double learning_rate = 2e-3;
  ContrastiveVariant loss_variant = ContrastiveVariant::kExcludeSelf;
  // false: matched-pair cosine distance replaces the contrastive term.
  bool contrastive = true;
  bool norm_penalty = true;
  double train_stage_reg_weight = 0.0;
  DirectionNetConfig net;
};

inline Json ToJson(const T2DTrainConfig& c) {
  return {{"theta", c.theta},
          {"batch_size", c.batch_size},
          {"iterations", c.iterations},
          {"learning_rate", c.learning_rate},
          {"loss_variant", VariantName(c.loss_variant)},
          {"contrastive", c.contrastive},
          {"norm_penalty", c.norm_penalty},
          {"train_stage_reg_weight", c.train_stage_reg_weight},
          {"token_dim", c.net.token_dim},
          {"hidden", c.net.hidden},
          {"output_gain", c.net.output_gain}};
}

inline T2DTrainConfig T2DTrainConfigFromJson(const Json& j) {
  T2DTrainConfig c;
  c.theta = j.value("theta", c.theta);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.iterations = j.value("iterations", c.iterations);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.loss_variant = VariantFromName(j.value("loss_variant", std::string("exclude-self")));
  c.contrastive = j.value("contrastive", c.contrastive);
  c.norm_penalty = j.value("norm_penalty", c.norm_penalty);
  c.train_stage_reg_weight = j.value("train_stage_reg_weight", c.train_stage_reg_weight);
  c.net.token_dim = j.value("token_dim", c.net.token_dim);
  c.net.hidden = j.value("hidden", c.net.hidden);
  c.net.output_gain = j.value("output_gain", c.net.output_gain);
  if (!(c.theta > 0.0)) throw ConfigError("t2d: theta must be positive");
  if (c.batch_size < 2) throw ConfigError("t2d: batch_size must be >= 2");
  return c;
}

struct TextToDirection {
  DirectionNet net;
  std::string generator_hash;

  Direction Predict(const LatentCode& z,
                    const std::vector<std::string>& caption) const {
    if (caption.empty()) throw InvalidArgument("empty caption");
    return net.Predict(z, caption);
  }
};

struct T2DStepLog {
  int iteration = 0;
  double contrastive = 0.0;
  double norm = 0.0;
  double reg = 0.0;
  double mean_norm = 0.0;
  double max_norm = 0.0;
};

struct T2DTrainResult {
  TextToDirection module;
  std::vector<T2DStepLog> log;
};

// Attribute directions used by the optional training-stage regularizer.
using AttributeDirectionFn =
    std::function<Direction(const LatentCode&, const AttributePhrase&)>;

inline void CheckNoLeakage(const Dataset& ds, const SplitSpec& split,
                           const std::vector<std::size_t>& record_ids) {
  const std::set<std::size_t> test(split.test_ids.begin(), split.test_ids.end());
  for (auto id : record_ids) {
    if (id >= ds.records.size()) throw InvalidArgument("record id out of range");
    if (test.count(id) || ds.records[id].split == SplitTag::kTest)
      throw LeakageError("training caption " + ds.records[id].id +
                         " belongs to the test split");
  }
}

// One sample of a training batch. `attrs` holds the attribute directions of
// the caption's phrases at `z`, used only by the training-stage regularizer.
struct T2DSample {
  LatentCode z;
  std::vector<int> ids;
  Eigen::VectorXd text_embedding;
  std::vector<Direction> attrs;
};

// Batch objective: contrastive (or matched-distance) term, norm penalty and
// the optional regularizer. Adds d(objective)/d(params) into the net's
// gradients; the caller zeroes them.
inline double T2DBatchObjective(const Generator& g, const DualEncoder& enc, DirectionNet& net,
                                const std::vector<T2DSample>& batch,
                                const T2DTrainConfig& config, T2DStepLog* log = nullptr) {
  const std::size_t b = batch.size();
  std::vector<DirectionNet::Cache> caches(b);
  std::vector<Direction> dirs;
  std::vector<Image> imgs;
  std::vector<Eigen::VectorXd> ie, te;
  for (std::size_t k = 0; k < b; ++k) {
    dirs.push_back(net.Forward(batch[k].z, batch[k].ids, &caches[k]));
    imgs.push_back(Render(g, batch[k].z + dirs[k]));
    ie.push_back(enc.EmbedImage(imgs[k]));
    te.push_back(batch[k].text_embedding);
  }
  const BatchLoss main = config.contrastive ? ContrastiveLoss(ie, te, config.loss_variant)
                                            : MatchedCosineDistance(ie, te);
  T2DStepLog l;
  l.contrastive = main.value;
  const double inv_b = 1.0 / static_cast<double>(b);
  for (std::size_t k = 0; k < b; ++k) {
    const Image pix = enc.ImageInputGrad(imgs[k], main.d_image[k]);
    Eigen::MatrixXd d_s = RenderBackward(g, batch[k].z + dirs[k], pix).values;
    const double n = dirs[k].Norm();
    l.mean_norm += n * inv_b;
    l.max_norm = std::max(l.max_norm, n);
    if (config.norm_penalty) {
      l.norm += NormPenalty(dirs[k], config.theta) * inv_b;
      d_s += NormPenaltyGrad(dirs[k], config.theta) * inv_b;
    }
    if (config.train_stage_reg_weight > 0.0 && n > 0.0) {
      const Eigen::VectorXd sf = Flatten(dirs[k].values);
      Eigen::VectorXd ds_flat = Eigen::VectorXd::Zero(sf.size());
      for (const auto& a : batch[k].attrs) {
        const Eigen::VectorXd af = Flatten(a.values);
        if (af.norm() == 0.0) continue;
        l.reg -= config.train_stage_reg_weight * Cosine(sf, af) * inv_b;
        Eigen::VectorXd unused = Eigen::VectorXd::Zero(af.size());
        CosineBackward(sf, af, -config.train_stage_reg_weight * inv_b, ds_flat, unused);
      }
      d_s += Unflatten(ds_flat, g.layers(), g.dims());
    }
    net.Backward(caches[k], d_s);
  }
  if (log) *log = l;
  return l.contrastive + l.norm + l.reg;
}

inline T2DTrainResult TrainT2D(const Generator& g, const std::string& generator_hash,
                               const DualEncoder& enc, const Dataset& ds,
                               const SplitSpec& split,
                               const std::vector<std::size_t>& record_ids,
                               const T2DTrainConfig& config, std::uint64_t seed,
                               const AttributeDirectionFn& attr_dirs = nullptr,
                               const Vocabulary* vocab = nullptr) {
  RequireRole(enc, EncoderRole::kTrain, "text-to-direction training");
  CheckNoLeakage(ds, split, record_ids);
  if (config.batch_size < 2) throw InvalidArgument("t2d batch size must be >= 2");
  if (!(config.theta > 0.0)) throw InvalidArgument("theta must be positive");
  if (record_ids.empty()) throw InvalidArgument("t2d needs training captions");
  const bool reg = config.train_stage_reg_weight > 0.0;
  if (reg && (!attr_dirs || !vocab))
    throw InvalidArgument("training-stage regularizer needs attribute directions");

  T2DTrainResult out;
  out.module.generator_hash = generator_hash;
  out.module.net = DirectionNet::Init(BuildTokenVocab(g.schema), g.layers(), g.dims(),
                                      DirectionKind::kSentence, config.net,
                                      MixSeed(seed, "t2d"));
  DirectionNet& net = out.module.net;

  std::vector<std::vector<int>> ids(ds.records.size());
  std::vector<Eigen::VectorXd> text_emb(ds.records.size());
  for (auto id : record_ids) {
    ids[id] = net.TokenIds(ds.records[id].caption.tokens);
    text_emb[id] = enc.EmbedText(ds.records[id].caption.tokens);
  }

  Adam adam({config.learning_rate});
  Rng rng(MixSeed(seed, "t2d-train"));
  const auto params = net.Params();
  for (int it = 0; it < config.iterations; ++it) {
    std::vector<T2DSample> batch(config.batch_size);
    for (auto& sample : batch) {
      sample.z = SampleLatent(g, rng);
      const std::size_t rec = record_ids[rng.Index(record_ids.size())];
      sample.ids = ids[rec];
      sample.text_embedding = text_emb[rec];
      if (reg)
        for (const auto& p : ExtractAttributes(ds.records[rec].caption, *vocab))
          sample.attrs.push_back(attr_dirs(sample.z, p));
    }
    ZeroGrads(params);
    T2DStepLog log;
    T2DBatchObjective(g, enc, net, batch, config, &log);
    log.iteration = it;
    adam.Step(params);
    out.log.push_back(log);
  }
  return out;
}

inline Json ToJson(const T2DStepLog& l) {
  return {{"iteration", l.iteration}, {"contrastive", l.contrastive},
          {"norm", l.norm},           {"reg", l.reg},
          {"mean_norm", l.mean_norm}, {"max_norm", l.max_norm}};
}

inline Json ToJson(const TextToDirection& m) {
  return {{"kind", "t2d"}, {"generator_hash", m.generator_hash}, {"net", ToJson(m.net)}};
}

inline TextToDirection TextToDirectionFromJson(const Json& j) {
  return {DirectionNetFromJson(j.at("net")), j.at("generator_hash").get<std::string>()};
}

}  // namespace compt2i
