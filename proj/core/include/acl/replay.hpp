#pragma once

// Fixed-capacity episodic memory shared by the rehearsal strategies.

#include <cstddef>
#include <cstdint>
#include <vector>

#include "acl/data.hpp"
#include "acl/nn.hpp"
#include "acl/rng.hpp"

namespace acl::cl {

using nn::Matrix;
using nn::Vector;

struct BufferEntry {
  Vector input;
  int label = 0;
  Vector logits;  // empty unless written by DER / DER++
  int task_id = 0;
};

enum class BufferPolicy { per_task_quota, reservoir };

struct ReplayBuffer {
  std::size_t capacity = 400;
  BufferPolicy policy = BufferPolicy::per_task_quota;
  std::vector<BufferEntry> entries;
  std::uint64_t items_seen = 0;
  int tasks_seen = 0;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
  std::size_t count_task(int task_id) const;
};

// Quota policy. With t = tasks_seen + 1 and q = ceil(m / t), every stored
// task is down-sampled uniformly to at most q entries, then min(q, m - size)
// uniformly chosen items of `data` are added. Kept entries preserve order.
void buffer_insert_task_end(ReplayBuffer& buffer, const data::LabelledSet& data, int task_id,
                            std::uint64_t seed);

// Classic reservoir step: the first m items are stored, item k > m replaces a
// uniform slot with probability m / k.
void buffer_reservoir_insert(ReplayBuffer& buffer, BufferEntry item, Rng& rng);

struct ReplayBatch {
  Matrix inputs;
  std::vector<int> labels;
  std::vector<int> task_ids;
  Matrix logits;  // rows x classes when every drawn entry carries logits, else 0 x 0

  std::size_t size() const { return labels.size(); }
  bool has_logits() const { return logits.rows() > 0; }
};

// k uniform draws with replacement over the entries accepted by `eligible`
// (all entries when eligible is empty). Throws ContractError when nothing
// is eligible.
ReplayBatch replay_batch(const ReplayBuffer& buffer, std::size_t k, Rng& rng,
                         const std::vector<std::size_t>& eligible = {});
ReplayBatch replay_batch(const ReplayBuffer& buffer, std::size_t k, std::uint64_t seed);

// Buffer contents as a dense set (for GDumb retraining and inspection).
data::LabelledSet buffer_as_set(const ReplayBuffer& buffer);

}  // namespace acl::cl
