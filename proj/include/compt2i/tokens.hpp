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

#pragma once

#include <map>
#include <string>
#include <vector>

#include "compt2i/error.hpp"
#include "compt2i/synthworld.hpp"

namespace compt2i {

// Closed token vocabulary; id 0 is the reserved unknown token.
class TokenVocab {
 public:
  static constexpr int kUnk = 0;
  static constexpr const char* kUnkToken = "<unk>";

  TokenVocab() : tokens_{kUnkToken} {}

  explicit TokenVocab(std::vector<std::string> tokens) : TokenVocab() {
    for (auto& t : tokens) Add(t);
  }

  int Add(const std::string& token) {
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    index_.emplace(token, id);
    return id;
  }

  int Id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  std::vector<int> Ids(const std::vector<std::string>& tokens) const {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const auto& t : tokens) ids.push_back(Id(t));
    return ids;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Tokens in id order, without the reserved entry.
  std::vector<std::string> Words() const {
    return {tokens_.begin() + 1, tokens_.end()};
  }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, int> index_;
};

// Every token that can appear in a caption or attribute phrase of `schema`.
inline TokenVocab BuildTokenVocab(const AttributeSchema& schema) {
  TokenVocab v;
  for (const auto& t : schema.templates)
    for (const auto& tok : Tokenize(t))
      if (tok.front() != '{') v.Add(tok);
  for (const auto& slot : schema.slots)
    for (const auto& val : slot.values) {
      for (const auto& tok : Tokenize(val.phrase)) v.Add(tok);
      for (const auto& syn : val.synonyms)
        for (const auto& tok : Tokenize(syn)) v.Add(tok);
    }
  return v;
}

}  // namespace compt2i
