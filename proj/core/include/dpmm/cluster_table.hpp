#pragma once

#include <cstddef>
#include <vector>

#include "dpmm/model.hpp"

namespace dpmm {

// Slot storage for clusters. Indices stay valid until erase(); freed entries
// are reused most-recent-first, so the layout is a deterministic function of
// the sequence of insert/erase calls.
class ClusterTable {
 public:
  std::size_t insert(Cluster c);
  void erase(std::size_t index);
  void clear();

  bool live(std::size_t index) const { return index < live_.size() && live_[index]; }
  Cluster& operator[](std::size_t index) { return entries_[index]; }
  const Cluster& operator[](std::size_t index) const { return entries_[index]; }

  // Raw entry storage; dead entries keep their last contents.
  std::span<const Cluster> entries() const { return entries_; }
  std::size_t capacity() const { return entries_.size(); }

  std::vector<std::size_t> live_indices() const;
  std::vector<std::size_t> indices_with(ClusterStatus status) const;
  std::size_t count_with(ClusterStatus status) const;

 private:
  std::vector<Cluster> entries_;
  std::vector<bool> live_;
  std::vector<std::size_t> free_;
};

}  // namespace dpmm
