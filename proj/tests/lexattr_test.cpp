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

#include "compt2i/lexattr.hpp"

#include <gtest/gtest.h>

#include <set>

#include "compt2i/tokens.hpp"

namespace compt2i {
namespace {

std::vector<std::string> Texts(const std::vector<AttributePhrase>& ps) {
  std::vector<std::string> out;
  for (const auto& p : ps) out.push_back(p.text());
  return out;
}

// A bird-like schema whose adjectives share slot nouns.
AttributeSchema BirdSchema() {
  AttributeSchema s;
  s.name = "birds";
  s.image_size = 32;
  s.slots = {
      {"breast",
       Rect{0, 0, 10, 32},
       "breast",
       {{"brown", {0.5, 0.3, 0.1}, "brown breast", {}},
        {"yellow", {0.9, 0.9, 0.1}, "yellow breast", {}}}},
      {"wing",
       Rect{12, 0, 10, 32},
       "wing",
       {{"grey", {0.5, 0.5, 0.5}, "grey wing", {}},
        {"white", {1.0, 1.0, 1.0}, "white wing", {"pale wing"}}}},
      {"bill",
       Rect{24, 0, 8, 32},
       "",
       {{"hooked", {0.2, 0.2, 0.2}, "hooked bill", {}},
        {"straight", {0.8, 0.6, 0.2}, "straight bill", {}}}},
  };
  s.templates = {"the bird has a {breast} , a {wing} and a {bill}"};
  return s;
}

TEST(Vocabulary, FacesLiteHasNinePhrases) {
  const auto v = BuildVocabulary(FacesLite());
  EXPECT_EQ(v.phrases.size(), 9u);
  std::set<std::pair<int, int>> covered;
  std::set<std::vector<std::string>> unique;
  for (const auto& p : v.phrases) {
    EXPECT_FALSE(p.tokens.empty());
    covered.insert({p.slot, p.value});
    unique.insert(p.tokens);
  }
  EXPECT_EQ(covered.size(), 9u);
  EXPECT_EQ(unique.size(), 9u);
  EXPECT_EQ(v.Canonical(2, 0).text(), "wearing lipstick");
}

TEST(Vocabulary, SynonymsAddPhrases) {
  const auto v = BuildVocabulary(BirdSchema());
  EXPECT_EQ(v.phrases.size(), 7u);
  const AttributePhrase* p = v.Find({"pale", "wing"});
  ASSERT_NE(p, nullptr);
  EXPECT_EQ(p->slot, 1);
  EXPECT_EQ(p->value, 1);
  // The canonical phrase is the declared one, not the synonym.
  EXPECT_EQ(v.Canonical(1, 1).text(), "white wing");
}

TEST(Vocabulary, DuplicatePhraseIsAnError) {
  auto s = BirdSchema();
  s.slots[1].values[0].synonyms.push_back("white wing");
  EXPECT_THROW(BuildVocabulary(s), Error);
}

TEST(Vocabulary, EveryPhraseRoundTrips) {
  const auto v = BuildVocabulary(FacesLite());
  for (const auto& p : v.phrases) {
    std::vector<std::string> caption{"a", "face", "with"};
    caption.insert(caption.end(), p.tokens.begin(), p.tokens.end());
    caption.push_back("here");
    const auto got = ExtractAttributes(caption, v);
    ASSERT_EQ(got.size(), 1u) << p.text();
    EXPECT_EQ(got[0], p);
  }
}

TEST(Extract, DirectMatches) {
  const auto v = BuildVocabulary(FacesLite());
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("the face has blond hair and is wearing lipstick"), v)),
            (std::vector<std::string>{"blond hair", "wearing lipstick"}));
}

TEST(Extract, ConjunctionDistributesOverTheNoun) {
  const auto v = BuildVocabulary(BirdSchema());
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("the bird has a brown and yellow breast"), v)),
            (std::vector<std::string>{"brown breast", "yellow breast"}));
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("grey , white and pale wing"), v)),
            (std::vector<std::string>{"grey wing", "white wing"}));
}

TEST(Extract, ConjunctionAcrossSlotsDoesNotDistribute) {
  const auto v = BuildVocabulary(FacesLite());
  // "blond and blue eyes" must not invent "blond eyes".
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("blond and blue eyes"), v)),
            (std::vector<std::string>{"blue eyes"}));
}

TEST(Extract, LongestMatchWins) {
  const auto v = BuildVocabulary(FacesLite());
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("she is wearing no lipstick"), v)),
            (std::vector<std::string>{"wearing no lipstick"}));
}

TEST(Extract, NoHitsGivesEmptyList) {
  const auto v = BuildVocabulary(FacesLite());
  EXPECT_TRUE(ExtractAttributes(Tokenize("a picture of a cat"), v).empty());
  EXPECT_TRUE(ExtractAttributes(std::vector<std::string>{}, v).empty());
}

TEST(Extract, DeduplicatesAndKeepsOrder) {
  const auto v = BuildVocabulary(FacesLite());
  EXPECT_EQ(Texts(ExtractAttributes(Tokenize("tan skin , red hair and tan skin"), v)),
            (std::vector<std::string>{"tan skin", "red hair"}));
}

TEST(Extract, ContradictoryValuesAreBothKept) {
  const auto v = BuildVocabulary(FacesLite());
  const auto got = ExtractAttributes(Tokenize("blond hair and black hair"), v);
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].slot, got[1].slot);
}

TEST(Extract, GeneratedCaptionsYieldExactlyTheirAssignment) {
  const auto schema = FacesLite();
  const auto v = BuildVocabulary(schema);
  for (const auto& a : AllCompositions(schema))
    for (int t = 0; t < static_cast<int>(schema.templates.size()); ++t) {
      const Caption c = RenderCaption(schema, a, t);
      const auto got = ExtractAttributes(c, v);
      std::set<std::pair<int, int>> g, e;
      for (const auto& p : got) g.insert({p.slot, p.value});
      for (const auto& p : ExpectedPhrases(v, a)) e.insert({p.slot, p.value});
      EXPECT_EQ(g, e) << JoinTokens(c.tokens);
      EXPECT_EQ(got.size(), e.size());
      // Idempotence.
      EXPECT_EQ(ExtractAttributes(c, v), got);
    }
}

TEST(TokenVocab, CoversTemplatesAndPhrasesWithUnk) {
  const auto schema = FacesLite();
  const TokenVocab tv = BuildTokenVocab(schema);
  EXPECT_EQ(tv.Id("<unk>"), TokenVocab::kUnk);
  EXPECT_EQ(tv.Id("zebra"), TokenVocab::kUnk);
  for (const auto& a : AllCompositions(schema))
    for (const auto& tok : RenderCaption(schema, a, 0).tokens)
      EXPECT_NE(tv.Id(tok), TokenVocab::kUnk) << tok;
  const TokenVocab back(tv.Words());
  EXPECT_EQ(back.Words(), tv.Words());
}

}  // namespace
}  // namespace compt2i
