#include "dpmm/cluster_table.hpp"

#include <stdexcept>

namespace dpmm {

std::size_t ClusterTable::insert(Cluster c) {
  if (!free_.empty()) {
    const std::size_t index = free_.back();
    free_.pop_back();
    entries_[index] = std::move(c);
    live_[index] = true;
    return index;
  }
  entries_.push_back(std::move(c));
  live_.push_back(true);
  return entries_.size() - 1;
}

void ClusterTable::erase(std::size_t index) {
  if (!live(index)) throw std::logic_error("ClusterTable::erase: entry not live");
  live_[index] = false;
  free_.push_back(index);
}

void ClusterTable::clear() {
  entries_.clear();
  live_.clear();
  free_.clear();
}

std::vector<std::size_t> ClusterTable::live_indices() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (live_[i]) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> ClusterTable::indices_with(ClusterStatus status) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (live_[i] && entries_[i].status == status) out.push_back(i);
  }
  return out;
}

std::size_t ClusterTable::count_with(ClusterStatus status) const {
  std::size_t n = 0;
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (live_[i] && entries_[i].status == status) ++n;
  }
  return n;
}

}  // namespace dpmm
