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

// Experiment runner: configuration, stage graph with hashed checkpoints,
// synthesis over the test split, evaluation and figures.
//
// Stages run in a fixed order and each writes a manifest under
// <run>/stages/ recording the config hash and the hashes of its inputs and
// outputs. A stage whose manifest matches is loaded instead of recomputed; a
// manifest written under another config is refused.

#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "compt2i/a2d.hpp"
#include "compt2i/caa.hpp"
#include "compt2i/dualenc.hpp"
#include "compt2i/error.hpp"
#include "compt2i/evalkit.hpp"
#include "compt2i/gen_latent.hpp"
#include "compt2i/hash.hpp"
#include "compt2i/lexattr.hpp"
#include "compt2i/plot.hpp"
#include "compt2i/synthworld.hpp"
#include "compt2i/t2d.hpp"
#include "compt2i/tokens.hpp"

namespace compt2i {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration.

struct AblationFlags {
  bool no_contrastive = false;
  bool no_norm_penalty = false;
  bool no_spatial = false;
  bool no_caa = false;
  bool undertrained_encoder = false;
  bool global_direction = false;
  bool train_stage_reg = false;
  bool orthogonality = false;
  bool contrastive_a2d = false;
};

// How the norm threshold is chosen. The statistics are distances between
// independent latent draws of the built generator.
enum class ThetaMode { kFixed, kFloorMin, kMin, kMean, kMax };

inline const char* ThetaModeName(ThetaMode m) {
  switch (m) {
    case ThetaMode::kFixed: return "fixed";
    case ThetaMode::kFloorMin: return "floor-min";
    case ThetaMode::kMin: return "min";
    case ThetaMode::kMean: return "mean";
    case ThetaMode::kMax: return "max";
  }
  return "?";
}

inline ThetaMode ThetaModeFromName(const std::string& s) {
  for (auto m : {ThetaMode::kFixed, ThetaMode::kFloorMin, ThetaMode::kMin, ThetaMode::kMean,
                 ThetaMode::kMax})
    if (s == ThetaModeName(m)) return m;
  throw ConfigError("unknown theta mode '" + s + "'");
}

struct EvalConfig {
  int n_candidates = 100;
  int n_frechet = 500;
  int attribute_trials = 500;
  int recovery_samples = 200;
  double recovery_threshold = 0.8;
  int outside_mask_samples = 100;
  SoftmaxConfig classifier;
};

struct ExperimentConfig {
  std::string schema = "faces-lite";
  std::uint64_t seed = 1;
  // Seeds swept by `ablate`; not part of a single run's identity.
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  int n_per_composition = 20;
  std::vector<PartialAssignment> heldout = FacesLiteHeldout();
  GeneratorParams generator;
  DualEncoderConfig encoder;
  int undertrained_epochs = 2;
  ThetaMode theta_mode = ThetaMode::kFloorMin;
  double theta = 1.0;
  std::size_t theta_codes = 10000;
  T2DTrainConfig t2d;
  A2DTrainConfig a2d = DefaultA2D();
  double mask_flip_prob = 0.0;
  double caa_magnitude = 1.0;
  double train_stage_reg_weight = 0.1;
  EvalConfig eval;
  AblationFlags flags;
  std::string out_dir = "runs/default";

  // Calibrated for the synthetic world: longer schedule than the
  // 1000-iteration default, with the spatial term ramped in over the first
  // 30% so that the triplet term settles each direction's sign first.
  static A2DTrainConfig DefaultA2D() {
    A2DTrainConfig c;
    c.iterations = 5000;
    c.learning_rate = 3e-3;
    c.spatial_warmup = 0.3;
    return c;
  }
};

inline AttributeSchema SchemaByName(const std::string& name) {
  if (name == "faces-lite") return FacesLite();
  throw ConfigError("unknown schema '" + name + "'");
}

inline std::string VariantName(const AblationFlags& f) {
  std::vector<std::string> parts;
  if (f.no_contrastive) parts.push_back("no-contrastive");
  if (f.no_norm_penalty) parts.push_back("no-norm-penalty");
  if (f.no_spatial) parts.push_back("no-spatial");
  if (f.no_caa) parts.push_back("no-caa");
  if (f.undertrained_encoder) parts.push_back("undertrained-encoder");
  if (f.global_direction) parts.push_back("global-direction");
  if (f.train_stage_reg) parts.push_back("train-stage-reg");
  if (f.orthogonality) parts.push_back("orthogonality");
  if (f.contrastive_a2d) parts.push_back("contrastive-a2d");
  if (parts.empty()) return "full";
  std::string out = parts[0];
  for (std::size_t i = 1; i < parts.size(); ++i) out += "+" + parts[i];
  return out;
}

inline const std::vector<std::string>& FlagNames() {
  static const std::vector<std::string> names = {
      "no_contrastive",   "no_norm_penalty", "no_spatial",    "no_caa",
      "undertrained_encoder", "global_direction", "train_stage_reg", "orthogonality",
      "contrastive_a2d"};
  return names;
}

inline bool* FlagByName(AblationFlags& f, std::string name) {
  std::replace(name.begin(), name.end(), '-', '_');
  if (name == "no_contrastive") return &f.no_contrastive;
  if (name == "no_norm_penalty") return &f.no_norm_penalty;
  if (name == "no_spatial") return &f.no_spatial;
  if (name == "no_caa") return &f.no_caa;
  if (name == "undertrained_encoder") return &f.undertrained_encoder;
  if (name == "global_direction") return &f.global_direction;
  if (name == "train_stage_reg") return &f.train_stage_reg;
  if (name == "orthogonality") return &f.orthogonality;
  if (name == "contrastive_a2d") return &f.contrastive_a2d;
  return nullptr;
}

// Variant names as accepted by `ablate`: "full" or flags joined by '+'.
inline AblationFlags FlagsFromVariant(const std::string& variant) {
  AblationFlags f;
  if (variant == "full") return f;
  std::stringstream ss(variant);
  std::string part;
  while (std::getline(ss, part, '+')) {
    bool* b = FlagByName(f, part);
    if (!b) throw ConfigError("unknown ablation flag '" + part + "'");
    *b = true;
  }
  return f;
}

inline Json ToJson(const AblationFlags& f) {
  Json j = Json::object();
  AblationFlags copy = f;
  for (const auto& n : FlagNames()) j[n] = *FlagByName(copy, n);
  return j;
}

inline Json ToJson(const EvalConfig& e) {
  return {{"n_candidates", e.n_candidates},
          {"n_frechet", e.n_frechet},
          {"attribute_trials", e.attribute_trials},
          {"recovery_samples", e.recovery_samples},
          {"recovery_threshold", e.recovery_threshold},
          {"outside_mask_samples", e.outside_mask_samples},
          {"classifier_epochs", e.classifier.epochs},
          {"classifier_learning_rate", e.classifier.learning_rate},
          {"classifier_l2", e.classifier.l2}};
}

inline Json ToJson(const ExperimentConfig& c) {
  return {{"schema", c.schema},
          {"seed", c.seed},
          {"seeds", c.seeds},
          {"n_per_composition", c.n_per_composition},
          {"heldout", c.heldout},
          {"generator", ToJson(c.generator)},
          {"encoder", ToJson(c.encoder)},
          {"undertrained_epochs", c.undertrained_epochs},
          {"theta", {{"mode", ThetaModeName(c.theta_mode)},
                     {"value", c.theta},
                     {"n_codes", c.theta_codes}}},
          {"t2d", ToJson(c.t2d)},
          {"a2d", ToJson(c.a2d)},
          {"mask_flip_prob", c.mask_flip_prob},
          {"caa_magnitude", c.caa_magnitude},
          {"train_stage_reg_weight", c.train_stage_reg_weight},
          {"eval", ToJson(c.eval)},
          {"flags", ToJson(c.flags)},
          {"out_dir", c.out_dir}};
}

namespace detail {

inline void RequireKnownKeys(const Json& j, const std::set<std::string>& known,
                             const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw ConfigError("unknown key '" + k + "' in " + where);
}

// Nested sections accept exactly the keys their defaults serialize to.
inline void RequireKeysOf(const Json& j, const Json& defaults, const std::string& where) {
  std::set<std::string> known;
  for (const auto& [k, v] : defaults.items()) known.insert(k);
  RequireKnownKeys(j, known, where);
}

template <class T>
T Get(const Json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace detail

inline ExperimentConfig ExperimentConfigFromJson(const Json& j) {
  detail::RequireKnownKeys(
      j,
      {"schema", "seed", "seeds", "n_per_composition", "heldout", "generator", "encoder",
       "undertrained_epochs", "theta", "t2d", "a2d", "mask_flip_prob", "caa_magnitude",
       "train_stage_reg_weight", "eval", "flags", "out_dir"},
      "config");
  ExperimentConfig c;
  try {
    c.schema = detail::Get(j, "schema", c.schema);
    c.seed = detail::Get(j, "seed", c.seed);
    c.seeds = detail::Get(j, "seeds", c.seeds);
    c.n_per_composition = detail::Get(j, "n_per_composition", c.n_per_composition);
    c.heldout = detail::Get(j, "heldout", c.heldout);
    if (j.contains("generator")) {
      detail::RequireKeysOf(j.at("generator"), ToJson(GeneratorParams{}), "generator");
      c.generator = GeneratorParamsFromJson(j.at("generator"));
    }
    if (j.contains("encoder")) {
      detail::RequireKeysOf(j.at("encoder"), ToJson(DualEncoderConfig{}), "encoder");
      c.encoder = DualEncoderConfigFromJson(j.at("encoder"));
    }
    c.undertrained_epochs = detail::Get(j, "undertrained_epochs", c.undertrained_epochs);
    if (j.contains("theta")) {
      const Json& t = j.at("theta");
      detail::RequireKnownKeys(t, {"mode", "value", "n_codes"}, "theta");
      c.theta_mode = ThetaModeFromName(detail::Get(t, "mode", std::string("floor-min")));
      c.theta = detail::Get(t, "value", c.theta);
      c.theta_codes = detail::Get(t, "n_codes", c.theta_codes);
    }
    if (j.contains("t2d")) {
      detail::RequireKeysOf(j.at("t2d"), ToJson(T2DTrainConfig{}), "t2d");
      c.t2d = T2DTrainConfigFromJson(j.at("t2d"));
    }
    if (j.contains("a2d")) {
      detail::RequireKeysOf(j.at("a2d"), ToJson(A2DTrainConfig{}), "a2d");
      // Fill from the calibrated defaults rather than the bare module defaults.
      Json merged = ToJson(ExperimentConfig::DefaultA2D());
      merged.update(j.at("a2d"));
      c.a2d = A2DTrainConfigFromJson(merged);
    }
    c.mask_flip_prob = detail::Get(j, "mask_flip_prob", c.mask_flip_prob);
    c.caa_magnitude = detail::Get(j, "caa_magnitude", c.caa_magnitude);
    c.train_stage_reg_weight =
        detail::Get(j, "train_stage_reg_weight", c.train_stage_reg_weight);
    if (j.contains("eval")) {
      const Json& e = j.at("eval");
      detail::RequireKnownKeys(
          e,
          {"n_candidates", "n_frechet", "attribute_trials", "recovery_samples",
           "recovery_threshold", "outside_mask_samples", "classifier_epochs",
           "classifier_learning_rate", "classifier_l2"},
          "eval");
      c.eval.n_candidates = detail::Get(e, "n_candidates", c.eval.n_candidates);
      c.eval.n_frechet = detail::Get(e, "n_frechet", c.eval.n_frechet);
      c.eval.attribute_trials = detail::Get(e, "attribute_trials", c.eval.attribute_trials);
      c.eval.recovery_samples = detail::Get(e, "recovery_samples", c.eval.recovery_samples);
      c.eval.recovery_threshold =
          detail::Get(e, "recovery_threshold", c.eval.recovery_threshold);
      c.eval.outside_mask_samples =
          detail::Get(e, "outside_mask_samples", c.eval.outside_mask_samples);
      c.eval.classifier.epochs = detail::Get(e, "classifier_epochs", c.eval.classifier.epochs);
      c.eval.classifier.learning_rate =
          detail::Get(e, "classifier_learning_rate", c.eval.classifier.learning_rate);
      c.eval.classifier.l2 = detail::Get(e, "classifier_l2", c.eval.classifier.l2);
    }
    if (j.contains("flags")) {
      const Json& f = j.at("flags");
      if (!f.is_object()) throw ConfigError("flags must be an object");
      for (const auto& [k, v] : f.items()) {
        bool* b = FlagByName(c.flags, k);
        if (!b) throw ConfigError("unknown ablation flag '" + k + "'");
        if (!v.is_boolean()) throw ConfigError("flag '" + k + "' must be a boolean");
        *b = v.get<bool>();
      }
    }
    c.out_dir = detail::Get(j, "out_dir", c.out_dir);
  } catch (const Error&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  SchemaByName(c.schema);
  if (c.n_per_composition < 1) throw ConfigError("n_per_composition must be >= 1");
  if (!(c.theta > 0.0)) throw ConfigError("theta value must be positive");
  if (c.theta_codes < 2) throw ConfigError("theta n_codes must be >= 2");
  if (c.undertrained_epochs < 0) throw ConfigError("undertrained_epochs must be >= 0");
  if (c.mask_flip_prob < 0.0 || c.mask_flip_prob > 1.0)
    throw ConfigError("mask_flip_prob must be in [0, 1]");
  if (c.eval.n_candidates < 2) throw ConfigError("eval.n_candidates must be >= 2");
  if (c.eval.n_frechet < 2) throw ConfigError("eval.n_frechet must be >= 2");
  if (c.flags.no_spatial && c.flags.orthogonality)
    throw ConfigError("no_spatial and orthogonality both replace the spatial term");
  if (c.seeds.empty()) throw ConfigError("seeds must not be empty");
  return c;
}

// Sets a dotted path, e.g. "a2d.iterations=100". The value is parsed as
// JSON when possible and taken as a string otherwise.
inline void ApplyOverride(Json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  Json value = Json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  Json* node = &j;
  std::stringstream ss(path);
  std::string key;
  std::vector<std::string> keys;
  while (std::getline(ss, key, '.')) keys.push_back(key);
  for (std::size_t i = 0; i + 1 < keys.size(); ++i) {
    if (!node->contains(keys[i])) (*node)[keys[i]] = Json::object();
    node = &(*node)[keys[i]];
    if (!node->is_object()) throw ConfigError("override path crosses a value: " + path);
  }
  (*node)[keys.back()] = value;
}

inline std::string ReadTextFile(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void WriteTextFile(const fs::path& p, const std::string& content) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << content;
  if (!out) throw IoError("write failed for " + p.string());
}

inline Json ParseJson(const std::string& text, const std::string& what) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ConfigError("malformed JSON in " + what);
  return j;
}

inline ExperimentConfig LoadExperimentConfig(const fs::path& path,
                                             const std::vector<std::string>& overrides = {}) {
  Json j = path.empty() ? Json::object() : ParseJson(ReadTextFile(path), path.string());
  for (const auto& o : overrides) ApplyOverride(j, o);
  return ExperimentConfigFromJson(j);
}

// Identity of a run: everything except the output location and the seed
// list used by `ablate`.
inline std::string ConfigHash(const ExperimentConfig& c) {
  Json j = ToJson(c);
  j.erase("out_dir");
  j.erase("seeds");
  return HashHex(j.dump());
}

// Module configs after theta resolution and ablation flags.
struct EffectiveConfigs {
  double theta = 1.0;
  bool use_caa = true;
  DualEncoderConfig train_encoder;
  DualEncoderConfig eval_encoder;
  T2DTrainConfig t2d;
  A2DTrainConfig a2d;
};

inline double ResolveTheta(const ExperimentConfig& c, const Generator& g) {
  if (c.theta_mode == ThetaMode::kFixed) return c.theta;
  const NormStats st = LatentNormStats(g, c.theta_codes, c.seed);
  switch (c.theta_mode) {
    case ThetaMode::kFloorMin:
      return std::max(1.0, std::floor(st.min));
    case ThetaMode::kMin:
      return st.min;
    case ThetaMode::kMean:
      return st.mean;
    case ThetaMode::kMax:
      return st.max;
    default:
      return c.theta;
  }
}

inline EffectiveConfigs Resolve(const ExperimentConfig& c, const Generator& g) {
  EffectiveConfigs e;
  e.theta = ResolveTheta(c, g);
  e.use_caa = !c.flags.no_caa;
  e.train_encoder = c.encoder;
  e.eval_encoder = c.encoder;
  if (c.flags.undertrained_encoder) e.train_encoder.epochs = c.undertrained_epochs;
  e.t2d = c.t2d;
  e.t2d.theta = e.theta;
  if (c.flags.no_contrastive) e.t2d.contrastive = false;
  if (c.flags.no_norm_penalty) e.t2d.norm_penalty = false;
  if (c.flags.train_stage_reg) e.t2d.train_stage_reg_weight = c.train_stage_reg_weight;
  e.a2d = c.a2d;
  e.a2d.theta = e.theta;
  e.a2d.flip_prob = c.mask_flip_prob;
  if (c.flags.no_spatial) e.a2d.disentangle = Disentangle::kNone;
  if (c.flags.orthogonality) e.a2d.disentangle = Disentangle::kOrthogonality;
  if (c.flags.contrastive_a2d) e.a2d.loss = A2DLoss::kContrastive;
  if (c.flags.global_direction) e.a2d.net.mode = DirectionMode::kGlobal;
  return e;
}

// ---------------------------------------------------------------------------
// In-memory stage functions.

struct WorldData {
  Dataset dataset;
  SplitSpec split;
};

inline WorldData MakeWorldData(const ExperimentConfig& c) {
  WorldData w;
  w.dataset = BuildDataset(SchemaByName(c.schema), c.n_per_composition, c.seed);
  w.split = MakeSplits(w.dataset, c.heldout);
  CheckSplitSoundness(w.dataset, w.split);
  return w;
}

inline Generator BuildExperimentGenerator(const ExperimentConfig& c) {
  return BuildGenerator(SchemaByName(c.schema), c.seed, c.generator);
}

// A real image of assignment `a`: the canonical code around a sampled base.
inline Image RenderReal(const Generator& g, const AttributeAssignment& a, Rng& rng) {
  return Render(g, CanonicalLatent(g, a, SampleLatent(g, rng)));
}

// One real image per dataset record.
inline std::vector<Image> RenderReals(const Generator& g, const Dataset& ds,
                                      std::uint64_t seed) {
  Rng rng(MixSeed(seed, "real-images"));
  std::vector<Image> out;
  out.reserve(ds.records.size());
  for (const auto& r : ds.records) out.push_back(RenderReal(g, r.assignment, rng));
  return out;
}

struct EncoderBundle {
  TrainedEncoder train;
  TrainedEncoder eval;
};

inline std::vector<EncoderPair> EncoderPairs(const Dataset& ds, const std::vector<Image>& reals,
                                             const std::vector<std::size_t>& ids,
                                             const Vocabulary& vocab) {
  std::vector<EncoderPair> pairs;
  for (auto i : ids) {
    EncoderPair p{reals[i], ds.records[i].caption.tokens, {}};
    for (const auto& ph : ExtractAttributes(ds.records[i].caption, vocab))
      p.phrases.push_back(ph.tokens);
    pairs.push_back(std::move(p));
  }
  return pairs;
}

// The train encoder sees train-split pairs only; the evaluation encoder is
// trained separately, on every record, from its own seed.
inline EncoderBundle TrainEncoders(const EffectiveConfigs& e, const WorldData& w,
                                   const std::vector<Image>& reals, std::uint64_t seed) {
  const AttributeSchema& schema = w.dataset.schema;
  const TokenVocab tv = BuildTokenVocab(schema);
  const Vocabulary vocab = BuildVocabulary(schema);
  std::vector<std::size_t> all(w.dataset.records.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  EncoderBundle b;
  b.train = TrainDualEncoder(EncoderPairs(w.dataset, reals, w.split.train_ids, vocab), tv,
                             e.train_encoder, EncoderRole::kTrain, MixSeed(seed, "train-encoder"));
  b.eval = TrainDualEncoder(EncoderPairs(w.dataset, reals, all, vocab), tv, e.eval_encoder,
                            EncoderRole::kEval, MixSeed(seed, "eval-encoder"));
  return b;
}

inline std::vector<Mask> SlotMasks(const Generator& g, double flip_prob, std::uint64_t seed) {
  std::vector<Mask> masks;
  for (std::size_t s = 0; s < g.schema.slots.size(); ++s) {
    Mask m = GtMask(g.schema, g.schema.slots[s].name, g.image_size());
    if (flip_prob > 0.0) m = CorruptMask(m, flip_prob, MixSeed(seed, "mask-" + std::to_string(s)));
    masks.push_back(std::move(m));
  }
  return masks;
}

inline A2DTrainResult RunA2D(const EffectiveConfigs& e, const Generator& g,
                             const std::string& gen_hash, const DualEncoder& train_encoder,
                             std::uint64_t seed) {
  return TrainA2D(g, gen_hash, train_encoder, BuildVocabulary(g.schema),
                  SlotMasks(g, e.a2d.flip_prob, seed), e.a2d, seed);
}

inline T2DTrainResult RunT2D(const EffectiveConfigs& e, const Generator& g,
                             const std::string& gen_hash, const DualEncoder& train_encoder,
                             const WorldData& w, std::uint64_t seed,
                             const AttributeToDirection* a2d = nullptr) {
  AttributeDirectionFn attr_fn;
  const Vocabulary vocab = BuildVocabulary(g.schema);
  if (e.t2d.train_stage_reg_weight > 0.0) {
    if (!a2d) throw InvalidArgument("training-stage regularization needs a trained a2d module");
    attr_fn = [a2d](const LatentCode& z, const AttributePhrase& p) { return a2d->Predict(z, p); };
  }
  return TrainT2D(g, gen_hash, train_encoder, w.dataset, w.split, w.split.train_ids, e.t2d,
                  seed, attr_fn, attr_fn ? &vocab : nullptr);
}

// Synthesized samples for the test split. Sample k uses test record
// k mod n_test and its own latent draw; the first n_test samples cover each
// test record once.
struct SynthSet {
  std::vector<std::size_t> record_ids;
  std::vector<LatentCode> z;
  std::vector<LatentCode> codes;
  std::vector<double> s_norms;
  std::vector<AdjustmentReport> reports;  // first n_test samples, when CAA is on
  bool use_caa = true;
};

inline SynthSet Synthesize(const Generator& g, const std::string& gen_hash,
                           const TextToDirection& t2d, const AttributeToDirection& a2d,
                           const WorldData& w, bool use_caa, double caa_magnitude,
                           int n_samples, std::uint64_t seed) {
  const Vocabulary vocab = BuildVocabulary(g.schema);
  Synthesizer syn{&g, gen_hash, &t2d, &a2d, &vocab, caa_magnitude};
  syn.Validate();
  const std::size_t n_test = w.split.test_ids.size();
  const std::size_t n = std::max<std::size_t>(n_test, static_cast<std::size_t>(n_samples));
  Rng rng(MixSeed(seed, "synth"));
  SynthSet out;
  out.use_caa = use_caa;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t id = w.split.test_ids[k % n_test];
    const LatentCode z = SampleLatent(g, rng);
    const SynthesisResult r = syn.Run(w.dataset.records[id].caption.tokens, z, use_caa);
    out.record_ids.push_back(id);
    out.z.push_back(z);
    out.codes.push_back(r.code);
    out.s_norms.push_back(r.s.Norm());
    if (use_caa && k < n_test) out.reports.push_back(*r.report);
  }
  return out;
}

inline Json ReportSummaryJson(const AdjustmentReport& r) {
  Json entries = Json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"phrase", e.phrase}, {"cosine", e.cosine}, {"adjusted", e.adjusted}});
  return {{"attributes", entries}, {"shift_norm", r.shift_norm}};
}

inline Json ToJson(const SynthSet& s) {
  Json samples = Json::array();
  for (std::size_t k = 0; k < s.codes.size(); ++k) {
    Json item = {{"record", s.record_ids[k]},
                 {"z", VectorToJson(Flatten(s.z[k].values))},
                 {"code", VectorToJson(Flatten(s.codes[k].values))},
                 {"s_norm", s.s_norms[k]}};
    if (k < s.reports.size()) item["caa"] = ReportSummaryJson(s.reports[k]);
    samples.push_back(std::move(item));
  }
  return {{"use_caa", s.use_caa}, {"samples", samples}};
}

// Reports are restored as summaries (no direction vectors).
inline SynthSet SynthSetFromJson(const Json& j, int layers, int dims) {
  SynthSet s;
  s.use_caa = j.at("use_caa").get<bool>();
  for (const auto& item : j.at("samples")) {
    s.record_ids.push_back(item.at("record").get<std::size_t>());
    s.z.emplace_back(Unflatten(VectorFromJson(item.at("z")), layers, dims));
    s.codes.emplace_back(Unflatten(VectorFromJson(item.at("code")), layers, dims));
    s.s_norms.push_back(item.at("s_norm").get<double>());
    if (item.contains("caa")) {
      AdjustmentReport r;
      for (const auto& e : item.at("caa").at("attributes")) {
        AdjustmentEntry entry;
        entry.phrase = e.at("phrase").get<std::string>();
        entry.cosine = e.at("cosine").get<double>();
        entry.adjusted = e.at("adjusted").get<bool>();
        r.entries.push_back(entry);
      }
      r.shift_norm = item.at("caa").at("shift_norm").get<double>();
      s.reports.push_back(std::move(r));
    }
  }
  return s;
}

// Extended report: the shared metric set plus attribute-direction
// diagnostics.
struct ExperimentReport {
  MetricReport metrics;
  Rate direction_recovery;
  double diff_outside_mask = 0.0;
  double theta = 0.0;
};

inline Json ToJson(const ExperimentReport& r) {
  Json j = ToJson(r.metrics);
  j["direction_recovery"] = ToJson(r.direction_recovery);
  j["diff_outside_mask"] = r.diff_outside_mask;
  j["theta"] = r.theta;
  return j;
}

inline ExperimentReport ExperimentReportFromJson(const Json& j) {
  ExperimentReport r;
  r.metrics = MetricReportFromJson(j);
  r.direction_recovery = RateFromJson(j.at("direction_recovery"));
  r.diff_outside_mask = j.at("diff_outside_mask").get<double>();
  r.theta = j.at("theta").get<double>();
  return r;
}

struct EvalInputs {
  const ExperimentConfig* config = nullptr;
  const WorldData* world = nullptr;
  const Generator* generator = nullptr;
  const DualEncoder* eval_encoder = nullptr;
  const AttributeToDirection* a2d = nullptr;
  const SynthSet* synth = nullptr;
  const std::vector<Image>* reals = nullptr;
  double theta = 0.0;
};

// Class index of every held-out composition present in the test split.
inline std::map<AttributeAssignment, int> UnseenClasses(const WorldData& w) {
  std::set<AttributeAssignment> comps;
  for (auto i : w.split.test_ids) comps.insert(w.dataset.records[i].assignment);
  std::map<AttributeAssignment, int> out;
  int k = 0;
  for (const auto& a : comps) out[a] = k++;
  return out;
}

inline ExperimentReport Evaluate(const EvalInputs& in) {
  const ExperimentConfig& c = *in.config;
  const WorldData& w = *in.world;
  const Generator& g = *in.generator;
  const DualEncoder& enc = *in.eval_encoder;
  const SynthSet& synth = *in.synth;
  RequireRole(enc, EncoderRole::kEval, "evaluation");
  const AttributeSchema& schema = w.dataset.schema;
  const std::size_t n_test = w.split.test_ids.size();
  ExperimentReport rep;
  rep.theta = in.theta;
  MetricReport& m = rep.metrics;
  m.config_hash = ConfigHash(c);
  m.variant = VariantName(c.flags);

  std::vector<Image> images;
  std::vector<Eigen::VectorXd> fake_features;
  images.reserve(synth.codes.size());
  for (const auto& code : synth.codes) {
    images.push_back(Render(g, code));
    fake_features.push_back(enc.EmbedImage(images.back()));
  }

  // R-precision over the test captions against every dataset caption.
  {
    std::vector<Eigen::VectorXd> ie, te;
    std::vector<std::string> keys;
    for (std::size_t k = 0; k < n_test; ++k) {
      const Record& r = w.dataset.records[synth.record_ids[k]];
      ie.push_back(fake_features[k]);
      te.push_back(enc.EmbedText(r.caption.tokens));
      keys.push_back(AssignmentKey(schema, r.assignment));
    }
    CandidatePool pool;
    for (const auto& r : w.dataset.records) {
      pool.embeddings.push_back(enc.EmbedText(r.caption.tokens));
      pool.keys.push_back(AssignmentKey(schema, r.assignment));
    }
    m.r_precision = RPrecisionFromEmbeddings(ie, te, keys, pool, c.eval.n_candidates,
                                             MixSeed(c.seed, "eval-r-precision"));
  }

  // Image-quality proxy: reals of the test compositions vs all samples.
  {
    Rng rng(MixSeed(c.seed, "frechet-reals"));
    std::vector<Eigen::VectorXd> real_features;
    const std::size_t n_real = std::max<std::size_t>(static_cast<std::size_t>(c.eval.n_frechet), 2);
    for (std::size_t k = 0; k < n_real; ++k) {
      const auto& a = w.dataset.records[w.split.test_ids[k % n_test]].assignment;
      real_features.push_back(enc.EmbedImage(RenderReal(g, a, rng)));
    }
    const std::size_t n_fake =
        std::min(fake_features.size(), static_cast<std::size_t>(c.eval.n_frechet));
    std::vector<Eigen::VectorXd> fakes(fake_features.begin(), fake_features.begin() + n_fake);
    m.frechet = FrechetDistance(StackRows(real_features), StackRows(fakes));
    m.n_frechet_real = real_features.size();
    m.n_frechet_fake = fakes.size();
  }

  // Unseen-composition accuracy: a classifier over every composition, fit on
  // real images only, scores the samples of held-out captions. With only
  // the held-out classes available, a sample that gets the held-out
  // combination wrong could still land in the right class.
  {
    const int n_classes = static_cast<int>(schema.NumCompositions());
    std::vector<Eigen::VectorXd> xr, xs;
    std::vector<int> yr, ys;
    for (std::size_t i = 0; i < w.dataset.records.size(); ++i) {
      xr.push_back(enc.EmbedImage((*in.reals)[i]));
      yr.push_back(static_cast<int>(CompositionIndex(schema, w.dataset.records[i].assignment)));
    }
    const auto clf = TrainSoftmaxClassifier(xr, yr, n_classes, c.eval.classifier);
    for (std::size_t k = 0; k < n_test; ++k) {
      xs.push_back(fake_features[k]);
      ys.push_back(static_cast<int>(
          CompositionIndex(schema, w.dataset.records[synth.record_ids[k]].assignment)));
    }
    m.composition_accuracy = ClassifierAccuracy(clf, xs, ys);

    // Text ceiling over the held-out classes of the test captions.
    const auto classes = UnseenClasses(w);
    std::vector<std::vector<std::string>> captions;
    std::vector<int> labels;
    for (auto i : w.split.test_ids) {
      captions.push_back(w.dataset.records[i].caption.tokens);
      labels.push_back(classes.at(w.dataset.records[i].assignment));
    }
    m.text_upper_bound = TextUpperBound(BuildTokenVocab(schema), captions, labels,
                                        static_cast<int>(classes.size()),
                                        MixSeed(c.seed, "eval-text"), c.eval.classifier);
  }

  std::vector<double> norms(synth.s_norms.begin(), synth.s_norms.end());
  m.s_norm_p95 = Percentile(norms, 95.0);

  const Vocabulary& vocab = in.a2d->vocab;
  auto dir = [&](const LatentCode& z, const AttributePhrase& p) { return in.a2d->Predict(z, p); };
  m.attribute_accuracy = AttributeAccuracy(g, vocab.phrases, dir, c.eval.attribute_trials,
                                           MixSeed(c.seed, "eval-attribute-accuracy"));
  rep.direction_recovery =
      DirectionRecovery(g, vocab.phrases, dir, c.eval.recovery_samples,
                        c.eval.recovery_threshold, MixSeed(c.seed, "eval-recovery"));
  rep.diff_outside_mask =
      MeanDiffOutsideMask(g, vocab.phrases, SlotMasks(g, 0.0, c.seed), dir,
                          c.eval.outside_mask_samples, MixSeed(c.seed, "eval-outside"));
  return rep;
}

// ---------------------------------------------------------------------------
// Figures.

// Receives each figure; the command-line tool writes PNG files.
using ImageSink = std::function<void(const fs::path&, const Image&)>;

struct FigureInputs {
  const WorldData* world = nullptr;
  const Generator* generator = nullptr;
  std::string generator_hash;
  const TextToDirection* t2d = nullptr;
  const AttributeToDirection* a2d = nullptr;
  const std::vector<Image>* reals = nullptr;
  double caa_magnitude = 1.0;
  std::uint64_t seed = 0;
};

// Writes caption grids (real / without CAA / with CAA), pos-neg-diff grids
// per attribute, and CAA before/after pairs. Each PNG gets a JSON sidecar
// naming its rows and columns.
inline void EmitGrids(const FigureInputs& in, const fs::path& dir, const ImageSink& sink,
                      std::size_t n_captions = 6) {
  const WorldData& w = *in.world;
  const Generator& g = *in.generator;
  const Vocabulary vocab = BuildVocabulary(g.schema);
  Synthesizer syn{&g, in.generator_hash, in.t2d, in.a2d, &vocab, in.caa_magnitude};
  syn.Validate();
  fs::create_directories(dir);

  // One test record per distinct composition, up to n_captions.
  std::vector<std::size_t> picks;
  std::set<AttributeAssignment> seen;
  for (auto i : w.split.test_ids)
    if (picks.size() < n_captions && seen.insert(w.dataset.records[i].assignment).second)
      picks.push_back(i);

  Rng rng(MixSeed(in.seed, "figures"));
  std::vector<std::vector<Image>> rows, caa_rows;
  Json caption_side = {{"columns", {"real", "without CAA", "with CAA"}}, {"rows", Json::array()}};
  Json caa_side = {{"columns", {"before", "after"}}, {"rows", Json::array()}};
  for (auto id : picks) {
    const auto& tokens = w.dataset.records[id].caption.tokens;
    const LatentCode z = SampleLatent(g, rng);
    const auto plain = syn.Run(tokens, z, false);
    const auto adjusted = syn.Run(tokens, z, true);
    rows.push_back({(*in.reals)[id], plain.image, adjusted.image});
    caption_side["rows"].push_back(JoinTokens(tokens));
    Json adjusted_names = Json::array();
    for (const auto& e : adjusted.report->entries)
      if (e.adjusted) adjusted_names.push_back(e.phrase);
    if (!adjusted_names.empty()) {
      caa_rows.push_back({plain.image, adjusted.image});
      caa_side["rows"].push_back({{"caption", JoinTokens(tokens)}, {"adjusted", adjusted_names}});
    }
  }
  sink(dir / "captions.png", MakeGrid(rows));
  WriteTextFile(dir / "captions.json", caption_side.dump(2));
  if (!caa_rows.empty()) {
    sink(dir / "caa_pairs.png", MakeGrid(caa_rows));
    WriteTextFile(dir / "caa_pairs.json", caa_side.dump(2));
  }

  std::vector<std::vector<Image>> diff_rows;
  Json diff_side = {{"columns", {"positive", "negative", "normalized difference"}},
                    {"rows", Json::array()},
                    {"range", {0.0, 1.0}}};
  const LatentCode z = SampleLatent(g, rng);
  for (const auto& p : vocab.phrases) {
    const Direction a = in.a2d->Predict(z, p);
    const Image pos = Render(g, z + a), neg = Render(g, z - a);
    const Image diff = Colorize(PixelDiffNormalized(pos, neg));
    Image pos_pad(diff.height, diff.width, 1.0), neg_pad(diff.height, diff.width, 1.0);
    Blit(pos_pad, pos, 0, 0);
    Blit(neg_pad, neg, 0, 0);
    diff_rows.push_back({pos_pad, neg_pad, diff});
    diff_side["rows"].push_back(p.text());
  }
  sink(dir / "diff_maps.png", MakeGrid(diff_rows));
  WriteTextFile(dir / "diff_maps.json", diff_side.dump(2));
}

// Grouped bars: one group per rate metric, one bar per variant.
inline void EmitComparisonChart(const std::vector<std::string>& variants,
                                const std::vector<ExperimentReport>& reports,
                                const fs::path& png, const ImageSink& sink) {
  const std::vector<std::string> metrics = {"r_precision", "composition_accuracy",
                                            "text_upper_bound", "attribute_accuracy"};
  std::vector<std::vector<double>> values(metrics.size());
  for (const auto& r : reports) {
    values[0].push_back(r.metrics.r_precision.value());
    values[1].push_back(r.metrics.composition_accuracy.value());
    values[2].push_back(r.metrics.text_upper_bound.value());
    values[3].push_back(r.metrics.attribute_accuracy.value());
  }
  Json side = {{"groups", metrics}, {"series", variants}, {"values", values}, {"max", 1.0}};
  Json frechet = Json::object();
  for (std::size_t i = 0; i < reports.size(); ++i)
    frechet[variants[i]] = reports[i].metrics.frechet.value;
  side["frechet"] = frechet;
  if (sink) sink(png, BarChart(values, 1.0));
  fs::path json_path = png;
  json_path.replace_extension(".json");
  WriteTextFile(json_path, side.dump(2));
}

// ---------------------------------------------------------------------------
// Run directory with hashed stage manifests.

inline const std::vector<std::string>& StageNames() {
  static const std::vector<std::string> names = {
      "make-data", "build-generator", "train-encoder", "train-t2d",
      "train-a2d", "synth",           "eval"};
  return names;
}

class Pipeline {
 public:
  Pipeline(ExperimentConfig config, fs::path root, std::ostream* log = &std::cerr,
           ImageSink sink = nullptr)
      : config_(std::move(config)),
        root_(std::move(root)),
        hash_(ConfigHash(config_)),
        log_(log),
        sink_(std::move(sink)) {
    fs::create_directories(root_ / "stages");
    const fs::path snapshot = root_ / "config.json";
    if (fs::exists(snapshot)) {
      const Json old = ParseJson(ReadTextFile(snapshot), snapshot.string());
      const std::string old_hash = old.value("config_hash", std::string());
      if (old_hash != hash_)
        throw StageHashMismatch("run directory " + root_.string() + " was created with config " +
                                old_hash + ", refusing to reuse it for config " + hash_);
    } else {
      Json snap = ToJson(config_);
      snap["config_hash"] = hash_;
      WriteTextFile(snapshot, snap.dump(2));
    }
  }

  const ExperimentConfig& config() const { return config_; }
  const std::string& config_hash() const { return hash_; }
  const fs::path& root() const { return root_; }

  // Runs every stage in order; with the training-stage regularizer the
  // attribute module is trained before the sentence module.
  ExperimentReport RunAll() {
    MakeData();
    BuildGeneratorStage();
    TrainEncoderStage();
    if (effective().t2d.train_stage_reg_weight > 0.0) {
      TrainA2DStage();
      TrainT2DStage();
    } else {
      TrainT2DStage();
      TrainA2DStage();
    }
    SynthStage();
    return EvalStage();
  }

  const WorldData& MakeData() {
    if (world_) return *world_;
    const std::string stage = "make-data";
    if (Resumable(stage, {})) {
      WorldData w;
      const Json schema = ParseJson(Load(stage, "data/schema.json"), "schema");
      w.dataset.schema = SchemaFromJson(schema);
      w.dataset.seed = config_.seed;
      w.dataset.n_per_composition = config_.n_per_composition;
      std::stringstream ss(Load(stage, "data/records.jsonl"));
      std::string line;
      while (std::getline(ss, line))
        if (!line.empty())
          w.dataset.records.push_back(
              RecordFromJson(w.dataset.schema, ParseJson(line, "records")));
      w.split = SplitFromJson(ParseJson(Load(stage, "data/split.json"), "split"));
      CheckSplitSoundness(w.dataset, w.split);
      world_ = std::move(w);
      Note(stage, "resumed");
    } else {
      world_ = MakeWorldData(config_);
      Outputs out;
      out["data/schema.json"] = ToJson(world_->dataset.schema).dump(2);
      out["data/records.jsonl"] = RecordsToJsonl(world_->dataset);
      out["data/split.json"] = SplitToJson(world_->split).dump(2);
      Commit(stage, {}, out);
      Note(stage, std::to_string(world_->dataset.records.size()) + " records, " +
                      std::to_string(world_->split.test_ids.size()) + " held out");
    }
    return *world_;
  }

  const Generator& BuildGeneratorStage() {
    if (generator_) return *generator_;
    const std::string stage = "build-generator";
    MakeData();
    if (Resumable(stage, {"make-data"})) {
      generator_ = GeneratorFromJson(ParseJson(Load(stage, "generator.json"), "generator"),
                                     SchemaHash(world_->dataset.schema));
      Note(stage, "resumed");
    } else {
      generator_ = BuildExperimentGenerator(config_);
      Commit(stage, {"make-data"}, {{"generator.json", ToJson(*generator_).dump()}});
      Note(stage, "condition number " + std::to_string(ConditionNumber(generator_->mixing)));
    }
    generator_hash_ = GeneratorHash(*generator_);
    return *generator_;
  }

  const EncoderBundle& TrainEncoderStage() {
    if (encoders_) return *encoders_;
    const std::string stage = "train-encoder";
    BuildGeneratorStage();
    if (Resumable(stage, {"build-generator"})) {
      EncoderBundle b;
      b.train.encoder =
          DualEncoderFromJson(ParseJson(Load(stage, "encoders/train-encoder.json"), "encoder"));
      b.eval.encoder =
          DualEncoderFromJson(ParseJson(Load(stage, "encoders/eval-encoder.json"), "encoder"));
      RequireRole(b.train.encoder, EncoderRole::kTrain, "train-encoder checkpoint");
      RequireRole(b.eval.encoder, EncoderRole::kEval, "eval-encoder checkpoint");
      encoders_ = std::move(b);
      Note(stage, "resumed");
    } else {
      encoders_ = TrainEncoders(effective(), *world_, reals(), config_.seed);
      auto log_lines = [](const TrainedEncoder& t) {
        std::string s;
        for (const auto& l : t.log)
          s += Json({{"epoch", l.epoch}, {"loss", l.mean_loss}, {"scale", l.scale}}).dump() + "\n";
        return s;
      };
      Commit(stage, {"build-generator"},
             {{"encoders/train-encoder.json", ToJson(encoders_->train.encoder).dump()},
              {"encoders/eval-encoder.json", ToJson(encoders_->eval.encoder).dump()},
              {"encoders/train-encoder.log.jsonl", log_lines(encoders_->train)},
              {"encoders/eval-encoder.log.jsonl", log_lines(encoders_->eval)}});
      Note(stage, "train loss " + std::to_string(encoders_->train.log.back().mean_loss) +
                      ", eval loss " + std::to_string(encoders_->eval.log.back().mean_loss));
    }
    return *encoders_;
  }

  const TextToDirection& TrainT2DStage() {
    if (t2d_) return *t2d_;
    const std::string stage = "train-t2d";
    TrainEncoderStage();
    const bool reg = effective().t2d.train_stage_reg_weight > 0.0;
    std::vector<std::string> inputs = {"make-data", "build-generator", "train-encoder"};
    if (reg) {
      TrainA2DStage();
      inputs.push_back("train-a2d");
    }
    if (Resumable(stage, inputs)) {
      t2d_ = TextToDirectionFromJson(ParseJson(Load(stage, "t2d/module.json"), "t2d"));
      Note(stage, "resumed");
    } else {
      auto r = RunT2D(effective(), *generator_, generator_hash_, encoders_->train.encoder,
                      *world_, MixSeed(config_.seed, "t2d"), reg ? &*a2d_ : nullptr);
      std::string log;
      for (const auto& l : r.log) log += ToJson(l).dump() + "\n";
      t2d_ = std::move(r.module);
      Commit(stage, inputs, {{"t2d/module.json", ToJson(*t2d_).dump()}, {"t2d/log.jsonl", log}});
      Note(stage, r.log.empty() ? "no iterations"
                                : "final contrastive " + std::to_string(r.log.back().contrastive) +
                                      ", mean |s| " + std::to_string(r.log.back().mean_norm));
    }
    CheckGeneratorHash(t2d_->generator_hash, stage);
    return *t2d_;
  }

  const AttributeToDirection& TrainA2DStage() {
    if (a2d_) return *a2d_;
    const std::string stage = "train-a2d";
    TrainEncoderStage();
    const std::vector<std::string> inputs = {"build-generator", "train-encoder"};
    if (Resumable(stage, inputs)) {
      a2d_ = AttributeToDirectionFromJson(ParseJson(Load(stage, "a2d/module.json"), "a2d"),
                                          BuildVocabulary(world_->dataset.schema));
      Note(stage, "resumed");
    } else {
      auto r = RunA2D(effective(), *generator_, generator_hash_, encoders_->train.encoder,
                      MixSeed(config_.seed, "a2d"));
      std::string log;
      for (const auto& l : r.log) log += ToJson(l).dump() + "\n";
      a2d_ = std::move(r.module);
      Commit(stage, inputs,
             {{"a2d/module.json", ToJson(*a2d_).dump()},
              {"a2d/log.jsonl", log},
              {"a2d/masks.json", Json({{"source", r.mask_source}}).dump()}});
      Note(stage, "masks " + r.mask_source);
    }
    CheckGeneratorHash(a2d_->generator_hash, stage);
    return *a2d_;
  }

  const SynthSet& SynthStage() {
    if (synth_) return *synth_;
    const std::string stage = "synth";
    TrainT2DStage();
    TrainA2DStage();
    const std::vector<std::string> inputs = {"make-data", "build-generator", "train-t2d",
                                             "train-a2d"};
    if (Resumable(stage, inputs)) {
      synth_ = SynthSetFromJson(ParseJson(Load(stage, "synth/samples.json"), "synth"),
                                generator_->layers(), generator_->dims());
      Note(stage, "resumed");
    } else {
      synth_ = Synthesize(*generator_, generator_hash_, *t2d_, *a2d_, *world_,
                          effective().use_caa, config_.caa_magnitude, config_.eval.n_frechet,
                          MixSeed(config_.seed, "synth"));
      Commit(stage, inputs, {{"synth/samples.json", ToJson(*synth_).dump()}});
      Note(stage, std::to_string(synth_->codes.size()) + " samples");
    }
    return *synth_;
  }

  ExperimentReport EvalStage() {
    const std::string stage = "eval";
    SynthStage();
    const std::vector<std::string> inputs = {"make-data", "build-generator", "train-encoder",
                                             "train-a2d", "synth"};
    ExperimentReport rep;
    if (Resumable(stage, inputs)) {
      rep = ExperimentReportFromJson(ParseJson(Load(stage, "report.json"), "report"));
      Note(stage, "resumed");
    } else {
      EvalInputs in{&config_, &*world_, &*generator_, &encoders_->eval.encoder, &*a2d_,
                    &*synth_, &reals(), effective().theta};
      rep = Evaluate(in);
      Commit(stage, inputs, {{"report.json", ToJson(rep).dump(2)}});
      Note(stage, "r-precision " + std::to_string(rep.metrics.r_precision.value()) +
                      ", composition accuracy " +
                      std::to_string(rep.metrics.composition_accuracy.value()));
    }
    EmitComparisonChart({rep.metrics.variant}, {rep}, root_ / "figures" / "metrics.png", sink_);
    if (sink_) {
      FigureInputs fig{&*world_, &*generator_, generator_hash_, &*t2d_, &*a2d_, &reals(),
                       config_.caa_magnitude, config_.seed};
      EmitGrids(fig, root_ / "figures", sink_);
    }
    return rep;
  }

  const EffectiveConfigs& effective() {
    if (!effective_) effective_ = Resolve(config_, BuildGeneratorStage());
    return *effective_;
  }

  const std::vector<Image>& reals() {
    if (!reals_) reals_ = RenderReals(BuildGeneratorStage(), MakeData().dataset, config_.seed);
    return *reals_;
  }

  const std::string& generator_hash() {
    BuildGeneratorStage();
    return generator_hash_;
  }

 private:
  using Outputs = std::map<std::string, std::string>;

  fs::path ManifestPath(const std::string& stage) const {
    const auto& names = StageNames();
    const auto idx = std::find(names.begin(), names.end(), stage) - names.begin();
    char prefix[16];
    std::snprintf(prefix, sizeof(prefix), "%02d-", static_cast<int>(idx) + 1);
    return root_ / "stages" / (prefix + stage + ".json");
  }

  std::string OutputDigest(const std::string& stage) const {
    const fs::path p = ManifestPath(stage);
    if (!fs::exists(p)) throw InvalidArgument("stage " + stage + " has not been run in " +
                                              root_.string());
    return ParseJson(ReadTextFile(p), p.string()).at("digest").get<std::string>();
  }

  // True when a manifest for `stage` exists, was written under this config
  // and consumed the current outputs of `inputs`.
  bool Resumable(const std::string& stage, const std::vector<std::string>& inputs) const {
    const fs::path p = ManifestPath(stage);
    if (!fs::exists(p)) return false;
    const Json m = ParseJson(ReadTextFile(p), p.string());
    if (m.at("config_hash").get<std::string>() != hash_)
      throw StageHashMismatch("stage " + stage + " was produced under config " +
                              m.at("config_hash").get<std::string>() + ", not " + hash_);
    for (const auto& in : inputs) {
      const std::string want = m.at("inputs").value(in, std::string());
      const std::string have = OutputDigest(in);
      if (want != have)
        throw StageHashMismatch("stage " + stage + " consumed " + in + " output " + want +
                                " but the run directory now holds " + have);
    }
    return true;
  }

  std::string Load(const std::string& stage, const std::string& rel) const {
    const Json m = ParseJson(ReadTextFile(ManifestPath(stage)), stage);
    const std::string want = m.at("outputs").at(rel).get<std::string>();
    const std::string text = ReadTextFile(root_ / rel);
    if (HashHex(text) != want)
      throw StageHashMismatch("artifact " + rel + " of stage " + stage +
                              " does not match its recorded hash");
    return text;
  }

  void Commit(const std::string& stage, const std::vector<std::string>& inputs,
              const Outputs& outputs) {
    Json in = Json::object(), out = Json::object();
    for (const auto& s : inputs) in[s] = OutputDigest(s);
    std::string all;
    for (const auto& [rel, text] : outputs) {
      WriteTextFile(root_ / rel, text);
      out[rel] = HashHex(text);
      all += rel + "=" + out[rel].get<std::string>() + ";";
    }
    const Json m = {{"stage", stage},     {"config_hash", hash_}, {"inputs", in},
                    {"outputs", out},     {"digest", HashHex(all)}};
    WriteTextFile(ManifestPath(stage), m.dump(2));
  }

  void CheckGeneratorHash(const std::string& module_hash, const std::string& stage) const {
    if (module_hash != generator_hash_)
      throw StageHashMismatch(stage + " module was trained against generator " + module_hash +
                              ", not " + generator_hash_);
  }

  void Note(const std::string& stage, const std::string& msg) const {
    if (log_) *log_ << "[" << stage << "] " << msg << std::endl;
  }

  ExperimentConfig config_;
  fs::path root_;
  std::string hash_;
  std::ostream* log_;
  ImageSink sink_;
  std::optional<WorldData> world_;
  std::optional<Generator> generator_;
  std::string generator_hash_;
  std::optional<EffectiveConfigs> effective_;
  std::optional<std::vector<Image>> reals_;
  std::optional<EncoderBundle> encoders_;
  std::optional<TextToDirection> t2d_;
  std::optional<AttributeToDirection> a2d_;
  std::optional<SynthSet> synth_;
};

}  // namespace compt2i
