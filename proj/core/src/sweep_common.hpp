#pragma once

// Allocation bookkeeping shared by the serial sampler and distributed workers.

#include <span>
#include <vector>

#include "dpmm/cluster_table.hpp"
#include "dpmm/model.hpp"
#include "dpmm/numeric.hpp"
#include "dpmm/serial.hpp"

namespace dpmm::detail {

// Removes x from entry `index`. When the entry is a cluster of status
// `vanishing` and becomes empty, it turns into an auxiliary slot that keeps its
// theta, and one of the previously existing slots (uniformly chosen) is
// discarded so the slot count stays put.
inline void detach(ClusterTable& table, std::size_t index, std::span<const std::uint32_t> x,
                   ClusterStatus vanishing, Rng& rng) {
  Cluster& c = table[index];
  c.remove(x);
  if (c.count != 0 || c.status != vanishing) return;
  auto slots = table.indices_with(ClusterStatus::empty);
  c.status = ClusterStatus::empty;
  c.clear_counts();
  if (!slots.empty()) {
    const auto pick = static_cast<std::size_t>(sample_uniform(rng) * static_cast<double>(slots.size()));
    table.erase(slots[std::min(pick, slots.size() - 1)]);
  }
}

// Deletes uniformly chosen slots until at most m remain, or tops up with
// draws from `fresh` until m exist.
template <class Fresh>
void normalize_slots(ClusterTable& table, std::size_t m, Rng& rng, Fresh&& fresh) {
  auto slots = table.indices_with(ClusterStatus::empty);
  while (slots.size() > m) {
    const auto pick = std::min(
        static_cast<std::size_t>(sample_uniform(rng) * static_cast<double>(slots.size())),
        slots.size() - 1);
    table.erase(slots[pick]);
    slots.erase(slots.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  for (std::size_t k = slots.size(); k < m; ++k) {
    table.insert(Cluster(0, ClusterStatus::empty, fresh()));
  }
}

// Normalizes the slot count of `table` to m and refreshes every slot per
// `mode`; the empirical proposal sees only `rows` and their assignments `z`.
void refresh_table_slots(ClusterTable& table, const CountDataset& data,
                         std::span<const std::size_t> rows, std::span<const std::size_t> z,
                         std::span<const double> coefficients, const ModelConfig& config,
                         RefreshMode mode, Rng& rng, KernelStats* stats);

ProposalContext make_context(const ClusterTable& table, const CountDataset& data,
                             std::span<const std::size_t> rows, std::span<const std::size_t> z,
                             std::span<const double> coefficients, const ModelConfig& config);

std::vector<double> log_coefficients(const CountDataset& data);

}  // namespace dpmm::detail
