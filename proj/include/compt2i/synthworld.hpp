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

// Synthetic attribute-image world: schema, templated captions, exact slot
// masks and unseen-composition splits.

#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/hash.hpp"
#include "compt2i/image.hpp"
#include "compt2i/rng.hpp"
#include "json.hpp"

namespace compt2i {

using Json = nlohmann::json;
using Color = std::array<double, 3>;

struct Rect {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  bool Contains(int r, int c) const {
    return r >= row0 && r < row0 + rows && c >= col0 && c < col0 + cols;
  }
  bool Overlaps(const Rect& o) const {
    return row0 < o.row0 + o.rows && o.row0 < row0 + rows &&
           col0 < o.col0 + o.cols && o.col0 < col0 + cols;
  }
};

struct SlotValue {
  std::string name;
  Color color{};
  // Canonical attribute phrase, e.g. "blond hair".
  std::string phrase;
  std::vector<std::string> synonyms;
};

struct Slot {
  std::string name;
  // Unset for the background slot, which owns every pixel not covered by
  // another slot.
  std::optional<Rect> region;
  // Head noun that adjectives of this slot attach to ("hair"); may be empty.
  std::string noun;
  std::vector<SlotValue> values;

  bool is_background() const { return !region.has_value(); }
};

struct AttributeSchema {
  std::string name;
  int image_size = 64;
  std::vector<Slot> slots;
  // Caption templates; "{slot}" is replaced by the value's phrase.
  std::vector<std::string> templates;

  int SlotIndex(const std::string& slot) const {
    for (std::size_t i = 0; i < slots.size(); ++i)
      if (slots[i].name == slot) return static_cast<int>(i);
    return -1;
  }
  int ValueIndex(int slot, const std::string& value) const {
    const auto& vals = slots[slot].values;
    for (std::size_t i = 0; i < vals.size(); ++i)
      if (vals[i].name == value) return static_cast<int>(i);
    return -1;
  }
  std::size_t NumCompositions() const {
    std::size_t n = slots.empty() ? 0 : 1;
    for (const auto& s : slots) n *= s.values.size();
    return n;
  }
};

// One value index per slot, in schema slot order.
struct AttributeAssignment {
  std::vector<int> values;
  friend bool operator==(const AttributeAssignment&,
                         const AttributeAssignment&) = default;
  friend auto operator<=>(const AttributeAssignment&,
                          const AttributeAssignment&) = default;
};

// slot name -> value name, covering a subset of slots.
using PartialAssignment = std::map<std::string, std::string>;

struct Caption {
  std::vector<std::string> tokens;
  AttributeAssignment source_assignment;
  int template_id = 0;
};

enum class SplitTag { kUnassigned, kTrain, kTest };

struct Record {
  std::string id;
  AttributeAssignment assignment;
  Caption caption;
  SplitTag split = SplitTag::kUnassigned;
};

struct Dataset {
  AttributeSchema schema;
  std::uint64_t seed = 0;
  int n_per_composition = 1;
  std::vector<Record> records;
};

struct SplitSpec {
  std::vector<PartialAssignment> heldout;
  std::vector<std::size_t> train_ids;
  std::vector<std::size_t> test_ids;
};

// ---------------------------------------------------------------------------
// Text helpers.

inline std::vector<std::string> Tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  std::string tok;
  while (in >> tok) {
    std::transform(tok.begin(), tok.end(), tok.begin(),
                   [](unsigned char c) { return std::tolower(c); });
    out.push_back(tok);
  }
  return out;
}

inline std::string JoinTokens(const std::vector<std::string>& tokens) {
  std::string s;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) s += ' ';
    s += tokens[i];
  }
  return s;
}

// ---------------------------------------------------------------------------
// Schema.

inline void ValidateSchema(const AttributeSchema& schema) {
  if (schema.slots.size() < 3)
    throw InvalidArgument("invalid schema: need at least 3 slots");
  if (schema.image_size < 8 || schema.image_size > 128)
    throw InvalidArgument("invalid schema: image size must be in [8, 128]");
  std::set<std::string> slot_names, value_names;
  int backgrounds = 0;
  for (const auto& s : schema.slots) {
    if (!slot_names.insert(s.name).second)
      throw InvalidArgument("invalid schema: duplicate slot " + s.name);
    if (s.values.size() < 2)
      throw InvalidArgument("invalid schema: slot " + s.name +
                            " needs at least 2 values");
    for (const auto& v : s.values) {
      if (!value_names.insert(v.name).second)
        throw InvalidArgument("invalid schema: value name " + v.name +
                              " is not unique");
      if (Tokenize(v.phrase).empty())
        throw InvalidArgument("invalid schema: empty phrase for " + v.name);
      for (double c : v.color)
        if (!(c >= 0.0 && c <= 1.0))
          throw InvalidArgument("invalid schema: color outside [0,1]");
    }
    if (s.is_background()) {
      ++backgrounds;
    } else {
      const Rect& r = *s.region;
      if (r.rows <= 0 || r.cols <= 0 || r.row0 < 0 || r.col0 < 0 ||
          r.row0 + r.rows > schema.image_size ||
          r.col0 + r.cols > schema.image_size)
        throw InvalidArgument("invalid schema: region of " + s.name +
                              " outside the image");
    }
  }
  if (backgrounds > 1)
    throw InvalidArgument("invalid schema: more than one background slot");
  for (std::size_t i = 0; i < schema.slots.size(); ++i)
    for (std::size_t j = i + 1; j < schema.slots.size(); ++j) {
      const auto& a = schema.slots[i];
      const auto& b = schema.slots[j];
      if (a.region && b.region && a.region->Overlaps(*b.region))
        throw InvalidArgument("invalid schema: regions of " + a.name +
                              " and " + b.name + " overlap");
    }
  if (schema.templates.empty())
    throw InvalidArgument("invalid schema: no caption templates");
  for (const auto& t : schema.templates)
    for (const auto& s : schema.slots) {
      const std::string ph = "{" + s.name + "}";
      const auto first = t.find(ph);
      if (first == std::string::npos || t.find(ph, first + 1) != std::string::npos)
        throw InvalidArgument("invalid schema: template must mention " + ph +
                              " exactly once: " + t);
    }
}

// Default schema: four slots, 3*2*2*2 = 24 compositions on 64x64 images.
inline AttributeSchema FacesLite() {
  AttributeSchema s;
  s.name = "faces-lite";
  s.image_size = 64;
  s.slots = {
      {"hair",
       Rect{0, 0, 16, 64},
       "hair",
       {{"blond", {0.95, 0.82, 0.40}, "blond hair", {}},
        {"black", {0.08, 0.07, 0.07}, "black hair", {}},
        {"red", {0.78, 0.18, 0.08}, "red hair", {}}}},
      {"eyes",
       Rect{24, 0, 12, 64},
       "eyes",
       {{"blue", {0.20, 0.42, 0.92}, "blue eyes", {}},
        {"brown", {0.42, 0.26, 0.12}, "brown eyes", {}}}},
      {"mouth",
       Rect{44, 20, 12, 24},
       "",
       {{"lipstick", {0.86, 0.08, 0.32}, "wearing lipstick", {}},
        {"plain", {0.80, 0.62, 0.56}, "wearing no lipstick", {}}}},
      {"tone",
       std::nullopt,
       "skin",
       {{"pale", {0.96, 0.86, 0.78}, "pale skin", {}},
        {"tan", {0.56, 0.38, 0.26}, "tan skin", {}}}},
  };
  s.templates = {
      "the face has {hair} and {eyes} with {tone} and is {mouth}",
      "this person is {mouth} and has {tone} , {hair} and {eyes}",
      "a portrait with {eyes} , {hair} and {tone} , {mouth}",
  };
  return s;
}

inline std::vector<PartialAssignment> FacesLiteHeldout() {
  return {{{"tone", "tan"}, {"mouth", "lipstick"}},
          {{"hair", "red"}, {"eyes", "blue"}}};
}

// ---------------------------------------------------------------------------
// Assignments.

inline AttributeAssignment CompositionAt(const AttributeSchema& schema,
                                         std::size_t index) {
  AttributeAssignment a;
  a.values.resize(schema.slots.size());
  for (std::size_t i = schema.slots.size(); i-- > 0;) {
    const std::size_t n = schema.slots[i].values.size();
    a.values[i] = static_cast<int>(index % n);
    index /= n;
  }
  return a;
}

inline std::size_t CompositionIndex(const AttributeSchema& schema,
                                    const AttributeAssignment& a) {
  std::size_t idx = 0;
  for (std::size_t i = 0; i < schema.slots.size(); ++i)
    idx = idx * schema.slots[i].values.size() + a.values[i];
  return idx;
}

inline std::vector<AttributeAssignment> AllCompositions(
    const AttributeSchema& schema) {
  std::vector<AttributeAssignment> out;
  for (std::size_t i = 0; i < schema.NumCompositions(); ++i)
    out.push_back(CompositionAt(schema, i));
  return out;
}

inline bool Matches(const AttributeSchema& schema,
                    const AttributeAssignment& a,
                    const PartialAssignment& partial) {
  for (const auto& [slot, value] : partial) {
    const int si = schema.SlotIndex(slot);
    if (si < 0 || schema.ValueIndex(si, value) != a.values[si]) return false;
  }
  return true;
}

inline void ValidatePartial(const AttributeSchema& schema,
                            const PartialAssignment& partial) {
  if (partial.empty())
    throw InvalidArgument("held-out partial assignment is empty");
  for (const auto& [slot, value] : partial) {
    const int si = schema.SlotIndex(slot);
    if (si < 0) throw InvalidArgument("unknown slot in held-out set: " + slot);
    if (schema.ValueIndex(si, value) < 0)
      throw InvalidArgument("unknown value in held-out set: " + slot + "=" +
                            value);
  }
}

inline std::map<std::string, std::string> AssignmentNames(
    const AttributeSchema& schema, const AttributeAssignment& a) {
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < schema.slots.size(); ++i)
    out[schema.slots[i].name] = schema.slots[i].values[a.values[i]].name;
  return out;
}

inline AttributeAssignment AssignmentFromNames(
    const AttributeSchema& schema,
    const std::map<std::string, std::string>& names) {
  if (names.size() != schema.slots.size())
    throw InvalidArgument("assignment must name every slot exactly once");
  AttributeAssignment a;
  a.values.resize(schema.slots.size());
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    auto it = names.find(schema.slots[i].name);
    if (it == names.end())
      throw InvalidArgument("assignment is missing slot " +
                            schema.slots[i].name);
    const int v = schema.ValueIndex(static_cast<int>(i), it->second);
    if (v < 0) throw InvalidArgument("unknown value " + it->second);
    a.values[i] = v;
  }
  return a;
}

inline std::string AssignmentKey(const AttributeSchema& schema,
                                 const AttributeAssignment& a) {
  std::string key;
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    if (i) key += ',';
    key += schema.slots[i].name + "=" +
           schema.slots[i].values[a.values[i]].name;
  }
  return key;
}

// ---------------------------------------------------------------------------
// Captions and dataset.

inline Caption RenderCaption(const AttributeSchema& schema,
                             const AttributeAssignment& a, int template_id) {
  std::string text = schema.templates.at(template_id);
  for (std::size_t i = 0; i < schema.slots.size(); ++i) {
    const std::string ph = "{" + schema.slots[i].name + "}";
    const auto pos = text.find(ph);
    text.replace(pos, ph.size(), schema.slots[i].values[a.values[i]].phrase);
  }
  return Caption{Tokenize(text), a, template_id};
}

inline Dataset BuildDataset(const AttributeSchema& schema,
                            int n_per_composition, std::uint64_t seed) {
  if (n_per_composition < 1)
    throw InvalidArgument("n_per_composition must be >= 1");
  if (schema.NumCompositions() < 2)
    throw InvalidArgument("invalid schema: fewer than 2 compositions");
  ValidateSchema(schema);

  Dataset ds;
  ds.schema = schema;
  ds.seed = seed;
  ds.n_per_composition = n_per_composition;
  Rng rng(MixSeed(seed, "captions"));
  const std::size_t n_comp = schema.NumCompositions();
  ds.records.reserve(n_comp * n_per_composition);
  for (std::size_t c = 0; c < n_comp; ++c) {
    const auto a = CompositionAt(schema, c);
    for (int r = 0; r < n_per_composition; ++r) {
      const int t = static_cast<int>(rng.Index(schema.templates.size()));
      char id[48];
      std::snprintf(id, sizeof(id), "c%03zu-r%03d", c, r);
      ds.records.push_back(Record{id, a, RenderCaption(schema, a, t),
                                  SplitTag::kUnassigned});
    }
  }
  return ds;
}

inline SplitSpec MakeSplits(Dataset& dataset,
                            const std::vector<PartialAssignment>& heldout) {
  for (const auto& p : heldout) ValidatePartial(dataset.schema, p);
  SplitSpec split;
  split.heldout = heldout;
  for (std::size_t i = 0; i < dataset.records.size(); ++i) {
    const bool test = std::any_of(
        heldout.begin(), heldout.end(), [&](const PartialAssignment& p) {
          return Matches(dataset.schema, dataset.records[i].assignment, p);
        });
    (test ? split.test_ids : split.train_ids).push_back(i);
  }
  if (split.test_ids.empty())
    throw InvalidArgument("empty test split: held-out set matches no record");
  if (split.train_ids.empty())
    throw InvalidArgument("empty train split: held-out set covers every record");
  for (auto i : split.train_ids) dataset.records[i].split = SplitTag::kTrain;
  for (auto i : split.test_ids) dataset.records[i].split = SplitTag::kTest;
  return split;
}

// Throws unless every test record matches a held-out partial assignment, no
// train record does, and the two id lists are disjoint.
inline void CheckSplitSoundness(const Dataset& dataset,
                                const SplitSpec& split) {
  auto matches_any = [&](const AttributeAssignment& a) {
    return std::any_of(split.heldout.begin(), split.heldout.end(),
                       [&](const PartialAssignment& p) {
                         return Matches(dataset.schema, a, p);
                       });
  };
  std::set<std::size_t> train(split.train_ids.begin(), split.train_ids.end());
  for (auto i : split.test_ids) {
    if (train.count(i))
      throw InvalidArgument("split unsound: record in both train and test");
    if (!matches_any(dataset.records.at(i).assignment))
      throw InvalidArgument("split unsound: test record " +
                            dataset.records[i].id + " is a seen composition");
  }
  std::set<AttributeAssignment> train_compositions;
  for (auto i : split.train_ids) {
    if (matches_any(dataset.records.at(i).assignment))
      throw InvalidArgument("split unsound: train record " +
                            dataset.records[i].id + " is held out");
    train_compositions.insert(dataset.records[i].assignment);
  }
  for (auto i : split.test_ids)
    if (train_compositions.count(dataset.records[i].assignment))
      throw InvalidArgument("split unsound: test composition seen in train");
}

// ---------------------------------------------------------------------------
// Masks.

inline Rect ScaleRect(const Rect& r, int from, int to) {
  if (from == to) return r;
  auto sc = [&](int v) { return static_cast<int>((static_cast<long>(v) * to) / from); };
  const int r0 = sc(r.row0), c0 = sc(r.col0);
  return Rect{r0, c0, sc(r.row0 + r.rows) - r0, sc(r.col0 + r.cols) - c0};
}

inline Mask GtMask(const AttributeSchema& schema, const std::string& slot,
                   int image_size) {
  const int si = schema.SlotIndex(slot);
  if (si < 0) throw InvalidArgument("unknown slot: " + slot);
  Mask m(image_size, image_size, 0);
  const auto& s = schema.slots[si];
  if (!s.is_background()) {
    const Rect r = ScaleRect(*s.region, schema.image_size, image_size);
    for (int y = r.row0; y < r.row0 + r.rows; ++y)
      for (int x = r.col0; x < r.col0 + r.cols; ++x) m.at(y, x) = 1;
    return m;
  }
  std::fill(m.data.begin(), m.data.end(), 1);
  for (const auto& other : schema.slots) {
    if (other.is_background()) continue;
    const Rect r = ScaleRect(*other.region, schema.image_size, image_size);
    for (int y = r.row0; y < r.row0 + r.rows; ++y)
      for (int x = r.col0; x < r.col0 + r.cols; ++x) m.at(y, x) = 0;
  }
  return m;
}

inline Mask CorruptMask(const Mask& mask, double flip_prob,
                        std::uint64_t seed) {
  if (!(flip_prob >= 0.0 && flip_prob < 0.5))
    throw InvalidArgument("flip_prob must lie in [0, 0.5)");
  Mask out = mask;
  if (flip_prob == 0.0) return out;
  Rng rng(MixSeed(seed, "mask-flip"));
  for (auto& v : out.data)
    if (rng.Bernoulli(flip_prob)) v = static_cast<std::uint8_t>(1 - v);
  return out;
}

// ---------------------------------------------------------------------------
// Serialization.

inline Json ToJson(const AttributeSchema& s) {
  Json slots = Json::array();
  for (const auto& slot : s.slots) {
    Json vals = Json::array();
    for (const auto& v : slot.values)
      vals.push_back({{"name", v.name},
                      {"color", v.color},
                      {"phrase", v.phrase},
                      {"synonyms", v.synonyms}});
    Json js = {{"name", slot.name}, {"noun", slot.noun}, {"values", vals}};
    if (slot.region)
      js["region"] = {slot.region->row0, slot.region->col0, slot.region->rows,
                      slot.region->cols};
    else
      js["region"] = nullptr;
    slots.push_back(js);
  }
  return {{"name", s.name},
          {"image_size", s.image_size},
          {"slots", slots},
          {"templates", s.templates}};
}

inline AttributeSchema SchemaFromJson(const Json& j) {
  AttributeSchema s;
  s.name = j.at("name").get<std::string>();
  s.image_size = j.at("image_size").get<int>();
  for (const auto& js : j.at("slots")) {
    Slot slot;
    slot.name = js.at("name").get<std::string>();
    slot.noun = js.value("noun", "");
    if (!js.at("region").is_null()) {
      const auto r = js.at("region").get<std::vector<int>>();
      if (r.size() != 4) throw InvalidArgument("region needs 4 integers");
      slot.region = Rect{r[0], r[1], r[2], r[3]};
    }
    for (const auto& jv : js.at("values")) {
      SlotValue v;
      v.name = jv.at("name").get<std::string>();
      v.color = jv.at("color").get<Color>();
      v.phrase = jv.at("phrase").get<std::string>();
      v.synonyms = jv.value("synonyms", std::vector<std::string>{});
      slot.values.push_back(v);
    }
    s.slots.push_back(slot);
  }
  s.templates = j.at("templates").get<std::vector<std::string>>();
  ValidateSchema(s);
  return s;
}

inline std::string SchemaHash(const AttributeSchema& s) {
  return HashHex(ToJson(s).dump());
}

inline const char* SplitName(SplitTag t) {
  switch (t) {
    case SplitTag::kTrain:
      return "train";
    case SplitTag::kTest:
      return "test";
    default:
      return "unassigned";
  }
}

inline SplitTag SplitFromName(const std::string& s) {
  if (s == "train") return SplitTag::kTrain;
  if (s == "test") return SplitTag::kTest;
  if (s == "unassigned") return SplitTag::kUnassigned;
  throw InvalidArgument("unknown split tag " + s);
}

inline Json RecordToJson(const AttributeSchema& schema, const Record& r) {
  return {{"id", r.id},
          {"assignment", AssignmentNames(schema, r.assignment)},
          {"caption", r.caption.tokens},
          {"template", r.caption.template_id},
          {"split", SplitName(r.split)}};
}

inline Record RecordFromJson(const AttributeSchema& schema, const Json& j) {
  Record r;
  r.id = j.at("id").get<std::string>();
  r.assignment = AssignmentFromNames(
      schema, j.at("assignment").get<std::map<std::string, std::string>>());
  r.caption.tokens = j.at("caption").get<std::vector<std::string>>();
  r.caption.template_id = j.at("template").get<int>();
  r.caption.source_assignment = r.assignment;
  r.split = SplitFromName(j.at("split").get<std::string>());
  return r;
}

// One JSON object per line.
inline std::string RecordsToJsonl(const Dataset& ds) {
  std::string out;
  for (const auto& r : ds.records) {
    out += RecordToJson(ds.schema, r).dump();
    out += '\n';
  }
  return out;
}

inline Json SplitToJson(const SplitSpec& s) {
  return {{"heldout", s.heldout},
          {"train_ids", s.train_ids},
          {"test_ids", s.test_ids}};
}

inline SplitSpec SplitFromJson(const Json& j) {
  SplitSpec s;
  s.heldout = j.at("heldout").get<std::vector<PartialAssignment>>();
  s.train_ids = j.at("train_ids").get<std::vector<std::size_t>>();
  s.test_ids = j.at("test_ids").get<std::vector<std::size_t>>();
  return s;
}

}  // namespace compt2i
