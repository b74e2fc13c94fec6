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

// Shared direction predictor for sentences and attribute phrases:
//   [mean token embedding ; flatten(z)] -> Linear -> ReLU -> Linear -> L x d
// Global mode drops z from the input.

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/nn.hpp"
#include "compt2i/tokens.hpp"
#include "json.hpp"

namespace compt2i {

enum class DirectionMode { kLocal, kGlobal };

inline const char* ModeName(DirectionMode m) {
  return m == DirectionMode::kLocal ? "local" : "global";
}

inline DirectionMode ModeFromName(const std::string& s) {
  if (s == "local") return DirectionMode::kLocal;
  if (s == "global") return DirectionMode::kGlobal;
  throw ConfigError("unknown direction mode: " + s);
}

struct DirectionNetConfig {
  int token_dim = 32;
  int hidden = 128;
  double output_gain = 0.1;
  DirectionMode mode = DirectionMode::kLocal;
};

class DirectionNet {
 public:
  DirectionNetConfig config;
  TokenVocab vocab;
  DirectionKind kind = DirectionKind::kSentence;
  int layers = 0;
  int dims = 0;
  MeanEmbedding embed;
  Linear fc1;
  Linear fc2;

  struct Cache {
    std::vector<int> ids;
    Eigen::VectorXd input;
    Eigen::VectorXd pre;
  };

  static DirectionNet Init(const TokenVocab& vocab, int layers, int dims,
                           DirectionKind kind, const DirectionNetConfig& config,
                           std::uint64_t seed) {
    DirectionNet n;
    n.config = config;
    n.vocab = vocab;
    n.kind = kind;
    n.layers = layers;
    n.dims = dims;
    Rng rng(MixSeed(seed, "direction-net-init"));
    n.embed = MeanEmbedding(vocab.size(), config.token_dim, rng);
    n.fc1 = Linear(n.input_dim(), config.hidden, rng, std::sqrt(2.0));
    n.fc2 = Linear(config.hidden, layers * dims, rng, config.output_gain);
    return n;
  }

  int input_dim() const {
    return config.token_dim +
           (config.mode == DirectionMode::kLocal ? layers * dims : 0);
  }

  std::vector<int> TokenIds(const std::vector<std::string>& tokens) const {
    if (tokens.empty()) throw InvalidArgument("empty text for direction");
    return vocab.Ids(tokens);
  }

  Direction Forward(const LatentCode& z, const std::vector<int>& ids,
                    Cache* cache = nullptr) const {
    if (z.layers() != layers || z.dims() != dims)
      throw InvalidArgument("direction net: latent shape mismatch");
    Eigen::VectorXd input(input_dim());
    input.head(config.token_dim) = embed.Forward(ids);
    if (config.mode == DirectionMode::kLocal)
      input.tail(layers * dims) = Flatten(z.values);
    const Eigen::VectorXd pre = fc1.Forward(input);
    const Eigen::VectorXd out = fc2.Forward(Relu(pre));
    if (cache) *cache = Cache{ids, input, pre};
    return Direction{Unflatten(out, layers, dims), kind};
  }

  Direction Predict(const LatentCode& z,
                    const std::vector<std::string>& tokens) const {
    return Forward(z, TokenIds(tokens));
  }

  // Accumulates parameter gradients for dL/d(direction).
  void Backward(const Cache& cache, const Eigen::MatrixXd& d_dir) {
    const Eigen::VectorXd dh = fc2.Backward(Relu(cache.pre), Flatten(d_dir));
    const Eigen::VectorXd din = fc1.Backward(cache.input, ReluBackward(cache.pre, dh));
    embed.Backward(cache.ids, din.head(config.token_dim));
  }

  std::vector<Param*> Params() {
    return Concat(Concat(embed.Params(), fc1.Params()), fc2.Params());
  }
};

inline nlohmann::json ToJson(const DirectionNet& n) {
  return {{"kind", n.kind == DirectionKind::kSentence ? "sentence" : "attribute"},
          {"mode", ModeName(n.config.mode)},
          {"token_dim", n.config.token_dim},
          {"hidden", n.config.hidden},
          {"output_gain", n.config.output_gain},
          {"layers", n.layers},
          {"dims", n.dims},
          {"vocab", n.vocab.Words()},
          {"embed", ParamToJson(n.embed.table)},
          {"fc1", ToJson(n.fc1)},
          {"fc2", ToJson(n.fc2)}};
}

inline DirectionNet DirectionNetFromJson(const nlohmann::json& j) {
  DirectionNet n;
  n.kind = j.at("kind").get<std::string>() == "sentence" ? DirectionKind::kSentence
                                                         : DirectionKind::kAttribute;
  n.config.mode = ModeFromName(j.at("mode").get<std::string>());
  n.config.token_dim = j.at("token_dim").get<int>();
  n.config.hidden = j.at("hidden").get<int>();
  n.config.output_gain = j.at("output_gain").get<double>();
  n.layers = j.at("layers").get<int>();
  n.dims = j.at("dims").get<int>();
  n.vocab = TokenVocab(j.at("vocab").get<std::vector<std::string>>());
  n.embed.table = ParamFromJson(j.at("embed"));
  n.fc1 = LinearFromJson(j.at("fc1"));
  n.fc2 = LinearFromJson(j.at("fc2"));
  return n;
}

}  // namespace compt2i
