#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "drt/tensor.hpp"

namespace drt::detail {

using IndexPtr = std::shared_ptr<const std::vector<Index>>;

// Memoizes gather index maps by geometry. The first key entry is a tag that
// distinguishes the kind of map.
inline IndexPtr cached_index(std::vector<Index> key,
                             const std::function<std::vector<Index>()>& build) {
  static std::mutex mu;
  static std::map<std::vector<Index>, IndexPtr> cache;
  {
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto built = std::make_shared<const std::vector<Index>>(build());
  std::lock_guard<std::mutex> lock(mu);
  if (cache.size() >= 512) cache.clear();
  return cache.emplace(std::move(key), std::move(built)).first->second;
}

}  // namespace drt::detail
