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

// Inference: sentence direction, compositional attribute adjustment, render.

#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "compt2i/a2d.hpp"
#include "compt2i/cosine.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/lexattr.hpp"
#include "compt2i/t2d.hpp"

namespace compt2i {

struct AdjustmentEntry {
  std::string phrase;
  int slot = -1;
  int value = -1;
  double cosine = 0.0;
  bool adjusted = false;
};

struct AdjustmentReport {
  std::vector<AdjustmentEntry> entries;
  Direction s;
  Direction s_prime;
  double shift_norm = 0.0;
};

// s' = s + magnitude * sum of a_i/|a_i| over every a_i with cos(a_i, s) <= 0.
// Cosines use the flattened L*d vectors; a zero s counts as cosine 0.
inline std::pair<Direction, AdjustmentReport> AdjustSentenceDirection(
    const Direction& s, const std::vector<Direction>& attrs,
    const std::vector<AttributePhrase>& phrases = {}, double magnitude = 1.0) {
  if (!phrases.empty() && phrases.size() != attrs.size())
    throw InvalidArgument("caa: one phrase per attribute direction expected");
  AdjustmentReport rep;
  rep.s = s;
  Direction out = s;
  const Eigen::VectorXd sf = Flatten(s.values);
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const double an = attrs[i].Norm();
    if (an == 0.0) throw InvalidArgument("caa: zero-norm attribute direction");
    if (attrs[i].values.rows() != s.values.rows() ||
        attrs[i].values.cols() != s.values.cols())
      throw InvalidArgument("caa: direction shape mismatch");
    AdjustmentEntry e;
    if (!phrases.empty()) {
      e.phrase = phrases[i].text();
      e.slot = phrases[i].slot;
      e.value = phrases[i].value;
    }
    e.cosine = sf.norm() == 0.0 ? 0.0 : Cosine(Flatten(attrs[i].values), sf);
    e.adjusted = e.cosine <= 0.0;
    if (e.adjusted) out.values += magnitude * attrs[i].values / an;
    rep.entries.push_back(e);
  }
  rep.s_prime = out;
  rep.shift_norm = (out.values - s.values).norm();
  return {out, rep};
}

// Exploration only: repeats single passes until no attribute is adjusted or
// `max_passes` is reached. Returns the number of passes that adjusted.
inline std::pair<Direction, int> AdjustUntilFixedPoint(const Direction& s,
                                                       const std::vector<Direction>& attrs,
                                                       double magnitude, int max_passes) {
  if (max_passes < 1) throw InvalidArgument("caa: max_passes must be >= 1");
  Direction cur = s;
  for (int pass = 0; pass < max_passes; ++pass) {
    auto [next, rep] = AdjustSentenceDirection(cur, attrs, {}, magnitude);
    const bool any = std::any_of(rep.entries.begin(), rep.entries.end(),
                                 [](const AdjustmentEntry& e) { return e.adjusted; });
    if (!any) return {cur, pass};
    cur = next;
  }
  return {cur, max_passes};
}

struct SynthesisResult {
  Image image;
  LatentCode code;
  Direction s;
  std::optional<AdjustmentReport> report;
};

struct Synthesizer {
  const Generator* generator = nullptr;
  std::string generator_hash;
  const TextToDirection* t2d = nullptr;
  const AttributeToDirection* a2d = nullptr;
  const Vocabulary* vocab = nullptr;
  double caa_magnitude = 1.0;

  void Validate() const {
    if (!generator || !t2d || !a2d || !vocab)
      throw InvalidArgument("synthesizer is missing a component");
    if (t2d->generator_hash != generator_hash || a2d->generator_hash != generator_hash)
      throw StageHashMismatch("direction modules were trained against generator " +
                              t2d->generator_hash + " / " + a2d->generator_hash +
                              ", not " + generator_hash);
  }

  SynthesisResult Run(const std::vector<std::string>& caption, const LatentCode& z,
                      bool use_caa) const {
    Validate();
    SynthesisResult r;
    r.s = t2d->Predict(z, caption);
    Direction final_dir = r.s;
    if (use_caa) {
      const auto phrases = ExtractAttributes(caption, *vocab);
      std::vector<Direction> attrs;
      for (const auto& p : phrases) attrs.push_back(a2d->Predict(z, p));
      auto [adj, rep] = AdjustSentenceDirection(r.s, attrs, phrases, caa_magnitude);
      final_dir = adj;
      r.report = rep;
    }
    r.code = z + final_dir;
    r.image = Render(*generator, r.code);
    return r;
  }
};

inline Json ToJson(const AdjustmentReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"phrase", e.phrase},
                       {"slot", e.slot},
                       {"value", e.value},
                       {"cosine", e.cosine},
                       {"adjusted", e.adjusted}});
  return {{"attributes", entries},
          {"s_norm", r.s.Norm()},
          {"s_prime_norm", r.s_prime.Norm()},
          {"shift_norm", r.shift_norm},
          {"s", VectorToJson(Flatten(r.s.values))},
          {"s_prime", VectorToJson(Flatten(r.s_prime.values))}};
}

}  // namespace compt2i
