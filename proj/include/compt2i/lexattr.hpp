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

// Attribute vocabulary and phrase extraction. Extraction is a longest-match
// scan over vocabulary phrases plus two dependency-style rules over the
// closed caption language:
//   amod: <adj> <noun>                    -> (adj noun)
//   conj: <adj> (and|,) <adj> ... <noun>  -> (adj noun) for every adj

#pragma once

#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/synthworld.hpp"

namespace compt2i {

struct AttributePhrase {
  std::vector<std::string> tokens;
  int slot = -1;
  int value = -1;

  std::string text() const { return JoinTokens(tokens); }
  friend bool operator==(const AttributePhrase&, const AttributePhrase&) = default;
};

struct Vocabulary {
  std::vector<AttributePhrase> phrases;
  // slot noun -> (adjective -> (slot, value))
  std::map<std::string, std::map<std::string, std::pair<int, int>>> adjectives;
  std::size_t n_slots = 0;

  // Canonical phrase of (slot, value): the first one registered.
  const AttributePhrase& Canonical(int slot, int value) const {
    for (const auto& p : phrases)
      if (p.slot == slot && p.value == value) return p;
    throw InvalidArgument("no phrase for slot/value");
  }

  const AttributePhrase* Find(const std::vector<std::string>& tokens) const {
    for (const auto& p : phrases)
      if (p.tokens == tokens) return &p;
    return nullptr;
  }
};

inline Vocabulary BuildVocabulary(const AttributeSchema& schema) {
  ValidateSchema(schema);
  Vocabulary v;
  v.n_slots = schema.slots.size();
  std::set<std::vector<std::string>> seen;
  for (std::size_t s = 0; s < schema.slots.size(); ++s) {
    const auto& slot = schema.slots[s];
    for (std::size_t k = 0; k < slot.values.size(); ++k) {
      std::vector<std::string> texts{slot.values[k].phrase};
      texts.insert(texts.end(), slot.values[k].synonyms.begin(),
                   slot.values[k].synonyms.end());
      for (const auto& text : texts) {
        auto tokens = Tokenize(text);
        if (tokens.empty()) throw InvalidArgument("empty attribute phrase");
        if (!seen.insert(tokens).second)
          throw InvalidArgument("duplicate attribute phrase: " + text);
        if (!slot.noun.empty() && tokens.size() == 2 && tokens[1] == slot.noun)
          v.adjectives[slot.noun][tokens[0]] = {static_cast<int>(s),
                                                static_cast<int>(k)};
        v.phrases.push_back(
            {std::move(tokens), static_cast<int>(s), static_cast<int>(k)});
      }
    }
  }
  return v;
}

namespace detail {

inline bool IsConjunction(const std::string& t) { return t == "and" || t == ","; }

// Adjective chain starting at i: adj ((and|,)+ adj)* noun, with at least two
// adjectives that all modify `noun`. Returns the phrases and sets `end` one
// past the noun; empty when no chain starts at i.
inline std::vector<AttributePhrase> ConjChain(const std::vector<std::string>& t,
                                              std::size_t i,
                                              const Vocabulary& vocab,
                                              std::size_t& end) {
  for (const auto& [noun, table] : vocab.adjectives) {
    std::vector<std::string> adjs;
    std::size_t k = i;
    while (k < t.size() && table.count(t[k])) {
      adjs.push_back(t[k]);
      ++k;
      std::size_t j = k;
      while (j < t.size() && IsConjunction(t[j])) ++j;
      if (j == k || j >= t.size() || !table.count(t[j])) break;
      k = j;
    }
    if (adjs.size() >= 2 && k < t.size() && t[k] == noun) {
      std::vector<AttributePhrase> out;
      for (const auto& a : adjs) {
        const auto [slot, value] = table.at(a);
        out.push_back({{a, noun}, slot, value});
      }
      end = k + 1;
      return out;
    }
  }
  return {};
}

}  // namespace detail

// Phrases in order of appearance, one per (slot, value).
inline std::vector<AttributePhrase> ExtractAttributes(
    const std::vector<std::string>& tokens, const Vocabulary& vocab) {
  std::vector<AttributePhrase> hits;
  std::size_t i = 0;
  while (i < tokens.size()) {
    std::size_t end = 0;
    auto chain = detail::ConjChain(tokens, i, vocab, end);
    if (!chain.empty()) {
      hits.insert(hits.end(), chain.begin(), chain.end());
      i = end;
      continue;
    }
    const AttributePhrase* best = nullptr;
    for (const auto& p : vocab.phrases) {
      const std::size_t n = p.tokens.size();
      if (i + n > tokens.size()) continue;
      if (!std::equal(p.tokens.begin(), p.tokens.end(), tokens.begin() + i))
        continue;
      if (!best || n > best->tokens.size()) best = &p;
    }
    if (best) {
      hits.push_back(*best);
      i += best->tokens.size();
    } else {
      ++i;
    }
  }
  std::vector<AttributePhrase> out;
  std::set<std::pair<int, int>> seen;
  for (auto& h : hits)
    if (seen.insert({h.slot, h.value}).second) out.push_back(std::move(h));
  return out;
}

inline std::vector<AttributePhrase> ExtractAttributes(const Caption& caption,
                                                      const Vocabulary& vocab) {
  return ExtractAttributes(caption.tokens, vocab);
}

// Phrases a caption generated from `a` must yield.
inline std::vector<AttributePhrase> ExpectedPhrases(const Vocabulary& vocab,
                                                    const AttributeAssignment& a) {
  std::vector<AttributePhrase> out;
  for (std::size_t s = 0; s < a.values.size(); ++s)
    out.push_back(vocab.Canonical(static_cast<int>(s), a.values[s]));
  return out;
}

inline Json ToJson(const Vocabulary& v) {
  Json phrases = Json::array();
  for (const auto& p : v.phrases)
    phrases.push_back({{"tokens", p.tokens}, {"slot", p.slot}, {"value", p.value}});
  return {{"phrases", phrases}, {"n_slots", v.n_slots}};
}

}  // namespace compt2i
