#pragma once

#include <algorithm>
#include <cstdlib>
#include <map>
#include <vector>

#include "pcmgen/textcore.hpp"

namespace pcmgen::oracle {

// Input ids are distinct, so each output token identifies its pre-shuffle
// position among the survivors.
struct NoiseCheck {
  bool subset = true;
  bool survived = true;
  int max_displacement = 0;
  std::size_t dropped = 0;
};

inline NoiseCheck check_noise(const Sentence& in, const Sentence& out) {
  NoiseCheck c;
  c.survived = !out.ids.empty();
  std::map<int, std::size_t> pos_in;
  for (std::size_t i = 0; i < in.ids.size(); ++i) pos_in[in.ids[i]] = i;
  std::vector<std::size_t> src_pos;
  for (int id : out.ids) {
    auto it = pos_in.find(id);
    if (it == pos_in.end()) {
      c.subset = false;
      return c;
    }
    src_pos.push_back(it->second);
  }
  std::vector<std::size_t> kept = src_pos;
  std::sort(kept.begin(), kept.end());
  if (std::adjacent_find(kept.begin(), kept.end()) != kept.end()) c.subset = false;
  // Post-drop index = rank among the kept original positions.
  for (std::size_t now = 0; now < src_pos.size(); ++now) {
    const auto rank = static_cast<int>(std::lower_bound(kept.begin(), kept.end(), src_pos[now]) - kept.begin());
    c.max_displacement = std::max(c.max_displacement, std::abs(rank - static_cast<int>(now)));
  }
  c.dropped = in.ids.size() - out.ids.size();
  return c;
}

}  // namespace pcmgen::oracle
