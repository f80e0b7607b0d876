// Copyright 2026 The rmgap Authors
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

#include <cstdint>
#include <string>
#include <vector>

#include "rmgap/seqmodel.hpp"

namespace rmgap {

struct PreferenceExample {
  TokenSeq prompt;
  TokenSeq chosen;
  TokenSeq rejected;

  PreferenceExample() = default;
  PreferenceExample(TokenSeq x, TokenSeq pos, TokenSeq neg)
      : prompt(std::move(x)), chosen(std::move(pos)), rejected(std::move(neg)) {
    if (chosen.empty() || rejected.empty()) throw InputError("chosen and rejected must be non-empty");
    if (chosen == rejected) throw InputError("chosen and rejected must differ");
  }

  bool operator==(const PreferenceExample&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferenceExample> examples;
  std::string name;
  std::uint64_t seed = 0;

  std::size_t size() const { return examples.size(); }
  bool empty() const { return examples.empty(); }
  auto begin() const { return examples.begin(); }
  auto end() const { return examples.end(); }
};

inline void require_non_empty(const PreferenceDataset& d) {
  if (d.empty()) throw InputError("dataset '" + d.name + "' is empty");
}

inline bool is_single_token(const PreferenceExample& e) {
  return e.chosen.size() == 1 && e.rejected.size() == 1;
}

}  // namespace rmgap
