#include "acl/replay.hpp"

#include <algorithm>
#include <map>

#include "acl/error.hpp"

namespace acl::cl {

std::size_t ReplayBuffer::count_task(int task_id) const {
  return static_cast<std::size_t>(std::count_if(
      entries.begin(), entries.end(), [&](const BufferEntry& e) { return e.task_id == task_id; }));
}

void buffer_insert_task_end(ReplayBuffer& buffer, const data::LabelledSet& data, int task_id,
                            std::uint64_t seed) {
  if (buffer.capacity == 0) return;
  Rng rng(seed);
  const int t = buffer.tasks_seen + 1;
  const std::size_t q = (buffer.capacity + static_cast<std::size_t>(t) - 1) / static_cast<std::size_t>(t);

  std::map<int, std::vector<std::size_t>> by_task;
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
    by_task[buffer.entries[i].task_id].push_back(i);
  }
  std::vector<char> keep(buffer.entries.size(), 1);
  for (auto& [tid, slots] : by_task) {
    if (slots.size() <= q) continue;
    for (std::size_t s : slots) keep[s] = 0;
    for (std::size_t pick : rng.sample_without_replacement(slots.size(), q)) keep[slots[pick]] = 1;
  }
  std::vector<BufferEntry> kept;
  kept.reserve(buffer.capacity);
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
    if (keep[i]) kept.push_back(std::move(buffer.entries[i]));
  }
  buffer.entries = std::move(kept);

  const std::size_t room = buffer.capacity - std::min(buffer.capacity, buffer.entries.size());
  const std::size_t take = std::min({q, room, data.size()});
  auto picks = rng.sample_without_replacement(data.size(), take);
  std::sort(picks.begin(), picks.end());
  for (std::size_t p : picks) {
    buffer.entries.push_back(BufferEntry{data.input(p), data.label(p), {}, task_id});
  }
  buffer.items_seen += data.size();
  buffer.tasks_seen = t;
}

void buffer_reservoir_insert(ReplayBuffer& buffer, BufferEntry item, Rng& rng) {
  ++buffer.items_seen;
  if (buffer.capacity == 0) return;
  if (buffer.entries.size() < buffer.capacity) {
    buffer.entries.push_back(std::move(item));
    return;
  }
  const std::size_t j = rng.uniform_index(static_cast<std::size_t>(buffer.items_seen));
  if (j < buffer.capacity) buffer.entries[j] = std::move(item);
}

ReplayBatch replay_batch(const ReplayBuffer& buffer, std::size_t k, Rng& rng,
                         const std::vector<std::size_t>& eligible) {
  const std::size_t pool = eligible.empty() ? buffer.entries.size() : eligible.size();
  if (pool == 0) throw ContractError("replay_batch: empty buffer");
  ReplayBatch out;
  std::vector<std::size_t> picks(k);
  bool all_logits = true;
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t r = rng.uniform_index(pool);
    picks[i] = eligible.empty() ? r : eligible[r];
    all_logits = all_logits && buffer.entries[picks[i]].logits.size() > 0;
  }
  if (k == 0) return out;
  const auto dim = buffer.entries[picks[0]].input.size();
  out.inputs.resize(static_cast<Eigen::Index>(k), dim);
  if (all_logits) {
    out.logits.resize(static_cast<Eigen::Index>(k), buffer.entries[picks[0]].logits.size());
  }
  for (std::size_t i = 0; i < k; ++i) {
    const BufferEntry& e = buffer.entries[picks[i]];
    const auto row = static_cast<Eigen::Index>(i);
    out.inputs.row(row) = e.input.transpose();
    out.labels.push_back(e.label);
    out.task_ids.push_back(e.task_id);
    if (all_logits) out.logits.row(row) = e.logits.transpose();
  }
  return out;
}

ReplayBatch replay_batch(const ReplayBuffer& buffer, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  return replay_batch(buffer, k, rng);
}

data::LabelledSet buffer_as_set(const ReplayBuffer& buffer) {
  if (buffer.entries.empty()) return {};
  Matrix x(static_cast<Eigen::Index>(buffer.entries.size()), buffer.entries.front().input.size());
  std::vector<int> y;
  y.reserve(buffer.entries.size());
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
    x.row(static_cast<Eigen::Index>(i)) = buffer.entries[i].input.transpose();
    y.push_back(buffer.entries[i].label);
  }
  return data::LabelledSet(std::move(x), std::move(y));
}

}  // namespace acl::cl
