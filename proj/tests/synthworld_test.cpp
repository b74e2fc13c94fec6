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

#include "compt2i/synthworld.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "compt2i/lexattr.hpp"
#include "test_util.hpp"

namespace compt2i {
namespace {

using testing::ThreeSlotSchema;

TEST(Schema, FacesLiteIsValid) {
  const auto s = FacesLite();
  EXPECT_NO_THROW(ValidateSchema(s));
  EXPECT_EQ(s.NumCompositions(), 24u);
  EXPECT_EQ(s.image_size, 64);
}

TEST(Schema, RejectsDuplicateValueNames) {
  auto s = FacesLite();
  s.slots[1].values[0].name = "blond";
  EXPECT_THROW(ValidateSchema(s), Error);
}

TEST(Schema, RejectsOverlappingRegions) {
  auto s = FacesLite();
  s.slots[1].region = Rect{10, 0, 12, 64};
  EXPECT_THROW(ValidateSchema(s), Error);
}

TEST(Schema, RejectsTooFewSlotsOrValues) {
  auto s = FacesLite();
  s.slots.resize(2);
  EXPECT_THROW(ValidateSchema(s), Error);
  auto t = FacesLite();
  t.slots[2].values.pop_back();
  EXPECT_THROW(ValidateSchema(t), Error);
}

TEST(Schema, JsonRoundTrip) {
  const auto s = FacesLite();
  const auto back = SchemaFromJson(ToJson(s));
  EXPECT_EQ(ToJson(back).dump(), ToJson(s).dump());
  EXPECT_EQ(SchemaHash(back), SchemaHash(s));
}

TEST(BuildDataset, CountsOneRecordPerCompositionReplicate) {
  const auto ds = BuildDataset(ThreeSlotSchema(), 5, 11);
  EXPECT_EQ(ds.records.size(), 60u);
  std::set<std::string> ids;
  for (const auto& r : ds.records) ids.insert(r.id);
  EXPECT_EQ(ids.size(), 60u);
}

TEST(BuildDataset, DeterministicUnderSeed) {
  const auto a = BuildDataset(FacesLite(), 4, 7);
  const auto b = BuildDataset(FacesLite(), 4, 7);
  EXPECT_EQ(RecordsToJsonl(a), RecordsToJsonl(b));
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].id, b.records[i].id);
    EXPECT_EQ(a.records[i].caption.tokens, b.records[i].caption.tokens);
  }
}

TEST(BuildDataset, SeedChangesTemplateDraws) {
  EXPECT_NE(RecordsToJsonl(BuildDataset(FacesLite(), 4, 7)),
            RecordsToJsonl(BuildDataset(FacesLite(), 4, 8)));
}

TEST(BuildDataset, DegenerateSchemaIsRejected) {
  AttributeSchema s;
  s.name = "one";
  s.slots = {{"hair", Rect{0, 0, 8, 8}, "hair", {{"blond", {1, 1, 0}, "blond hair", {}}}}};
  s.templates = {"{hair}"};
  EXPECT_THROW(BuildDataset(s, 1, 0), Error);
}

TEST(BuildDataset, RejectsZeroReplicates) {
  EXPECT_THROW(BuildDataset(FacesLite(), 0, 0), Error);
}

TEST(BuildDataset, CaptionPhrasesMapToSourceAssignment) {
  const auto ds = BuildDataset(FacesLite(), 3, 5);
  const auto vocab = BuildVocabulary(ds.schema);
  for (const auto& r : ds.records) {
    EXPECT_EQ(r.caption.source_assignment, r.assignment);
    const auto got = ExtractAttributes(r.caption, vocab);
    ASSERT_EQ(got.size(), ds.schema.slots.size()) << JoinTokens(r.caption.tokens);
    for (const auto& p : got) EXPECT_EQ(r.assignment.values[p.slot], p.value);
  }
}

TEST(BuildDataset, RecordJsonRoundTrip) {
  const auto ds = BuildDataset(FacesLite(), 2, 3);
  for (const auto& r : ds.records) {
    const Record back = RecordFromJson(ds.schema, RecordToJson(ds.schema, r));
    EXPECT_EQ(back.id, r.id);
    EXPECT_EQ(back.assignment, r.assignment);
    EXPECT_EQ(back.caption.tokens, r.caption.tokens);
    EXPECT_EQ(back.caption.template_id, r.caption.template_id);
  }
}

TEST(Compositions, IndexRoundTrip) {
  const auto s = FacesLite();
  for (std::size_t i = 0; i < s.NumCompositions(); ++i)
    EXPECT_EQ(CompositionIndex(s, CompositionAt(s, i)), i);
}

TEST(MakeSplits, HeldoutPairGoesToTest) {
  auto ds = BuildDataset(FacesLite(), 5, 1);
  const PartialAssignment held{{"tone", "tan"}, {"mouth", "lipstick"}};
  const auto split = MakeSplits(ds, {held});
  EXPECT_EQ(split.train_ids.size() + split.test_ids.size(), ds.records.size());
  const int tone = ds.schema.SlotIndex("tone"), mouth = ds.schema.SlotIndex("mouth");
  const int tan = ds.schema.ValueIndex(tone, "tan");
  const int lip = ds.schema.ValueIndex(mouth, "lipstick");
  for (auto i : split.test_ids) {
    EXPECT_EQ(ds.records[i].assignment.values[tone], tan);
    EXPECT_EQ(ds.records[i].assignment.values[mouth], lip);
    EXPECT_EQ(ds.records[i].split, SplitTag::kTest);
  }
  for (auto i : split.train_ids) {
    const auto& v = ds.records[i].assignment.values;
    EXPECT_FALSE(v[tone] == tan && v[mouth] == lip);
    EXPECT_EQ(ds.records[i].split, SplitTag::kTrain);
  }
  EXPECT_NO_THROW(CheckSplitSoundness(ds, split));
}

TEST(MakeSplits, EmptyHeldoutGivesEmptyTestError) {
  auto ds = BuildDataset(FacesLite(), 1, 1);
  EXPECT_THROW(MakeSplits(ds, {}), Error);
}

TEST(MakeSplits, HeldoutCoveringEverythingGivesEmptyTrainError) {
  auto ds = BuildDataset(FacesLite(), 1, 1);
  const auto schema = FacesLite();
  std::vector<PartialAssignment> all;
  for (const auto& h : schema.slots[0].values) all.push_back({{"hair", h.name}});
  EXPECT_THROW(MakeSplits(ds, all), Error);
}

TEST(MakeSplits, UnknownSlotOrValueRejected) {
  auto ds = BuildDataset(FacesLite(), 1, 1);
  EXPECT_THROW(MakeSplits(ds, {{{"tail", "long"}}}), Error);
  EXPECT_THROW(MakeSplits(ds, {{{"hair", "green"}}}), Error);
}

TEST(MakeSplits, SoundnessHoldsForEveryPairHeldout) {
  // Every single-pair held-out set over two different slots.
  const auto schema = FacesLite();
  int checked = 0;
  for (std::size_t a = 0; a < schema.slots.size(); ++a)
    for (std::size_t b = a + 1; b < schema.slots.size(); ++b)
      for (const auto& va : schema.slots[a].values)
        for (const auto& vb : schema.slots[b].values) {
          auto ds = BuildDataset(schema, 2, 9);
          const PartialAssignment p{{schema.slots[a].name, va.name},
                                    {schema.slots[b].name, vb.name}};
          const auto split = MakeSplits(ds, {p});
          EXPECT_NO_THROW(CheckSplitSoundness(ds, split));
          ++checked;
        }
  EXPECT_GT(checked, 20);
}

TEST(MakeSplits, SoundnessCheckCatchesTampering) {
  auto ds = BuildDataset(FacesLite(), 2, 1);
  auto split = MakeSplits(ds, FacesLiteHeldout());
  auto bad = split;
  bad.train_ids.push_back(bad.test_ids.front());
  EXPECT_THROW(CheckSplitSoundness(ds, bad), Error);
  auto bad2 = split;
  bad2.test_ids.push_back(bad2.train_ids.front());
  EXPECT_THROW(CheckSplitSoundness(ds, bad2), Error);
}

TEST(MakeSplits, JsonRoundTrip) {
  auto ds = BuildDataset(FacesLite(), 2, 1);
  const auto split = MakeSplits(ds, FacesLiteHeldout());
  const auto back = SplitFromJson(SplitToJson(split));
  EXPECT_EQ(back.train_ids, split.train_ids);
  EXPECT_EQ(back.test_ids, split.test_ids);
  EXPECT_EQ(back.heldout, split.heldout);
}

TEST(GtMask, HairBandArea) {
  const auto m = GtMask(FacesLite(), "hair", 64);
  std::size_t ones = 0;
  for (auto v : m.data) ones += v;
  EXPECT_EQ(ones, 16u * 64u);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) EXPECT_EQ(m.at(y, x), y < 16 ? 1 : 0);
}

TEST(GtMask, BackgroundIsComplementOfOtherSlots) {
  const auto s = FacesLite();
  const auto bg = GtMask(s, "tone", 64);
  for (std::size_t p = 0; p < bg.data.size(); ++p) {
    int covered = 0;
    for (const auto& slot : s.slots)
      if (!slot.is_background()) covered += GtMask(s, slot.name, 64).data[p];
    EXPECT_EQ(bg.data[p], covered == 0 ? 1 : 0);
  }
}

TEST(GtMask, RescalesToOtherSizes) {
  const auto m = GtMask(FacesLite(), "hair", 32);
  std::size_t ones = 0;
  for (auto v : m.data) ones += v;
  EXPECT_EQ(ones, 8u * 32u);
}

TEST(GtMask, UnknownSlotIsAnError) {
  EXPECT_THROW(GtMask(FacesLite(), "tail", 64), Error);
}

TEST(CorruptMask, ZeroFlipIsIdentity) {
  const auto m = GtMask(FacesLite(), "eyes", 64);
  EXPECT_EQ(CorruptMask(m, 0.0, 3).data, m.data);
}

TEST(CorruptMask, HammingDistanceWithinBinomialBound) {
  const auto m = GtMask(FacesLite(), "eyes", 64);
  const auto c = CorruptMask(m, 0.1, 3);
  std::size_t flips = 0;
  for (std::size_t i = 0; i < m.data.size(); ++i) flips += m.data[i] != c.data[i];
  const double mean = 4096 * 0.1;
  const double sigma = std::sqrt(4096 * 0.1 * 0.9);
  EXPECT_NEAR(static_cast<double>(flips), mean, 3 * sigma);
}

TEST(CorruptMask, DeterministicUnderSeed) {
  const auto m = GtMask(FacesLite(), "mouth", 64);
  EXPECT_EQ(CorruptMask(m, 0.2, 5).data, CorruptMask(m, 0.2, 5).data);
  EXPECT_NE(CorruptMask(m, 0.2, 5).data, CorruptMask(m, 0.2, 6).data);
}

TEST(CorruptMask, UninformativeFlipRateRejected) {
  const auto m = GtMask(FacesLite(), "eyes", 64);
  EXPECT_THROW(CorruptMask(m, 0.6, 1), Error);
  EXPECT_THROW(CorruptMask(m, 0.5, 1), Error);
  EXPECT_THROW(CorruptMask(m, -0.1, 1), Error);
}

TEST(Tokenize, LowercasesAndSplitsOnWhitespace) {
  EXPECT_EQ(Tokenize("  The Face  has\tBlond hair "),
            (std::vector<std::string>{"the", "face", "has", "blond", "hair"}));
  EXPECT_TRUE(Tokenize("   ").empty());
}

}  // namespace
}  // namespace compt2i
