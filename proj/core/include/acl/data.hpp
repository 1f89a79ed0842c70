#pragma once

// Labelled sets, AL tasks and task streams.
//
// Sample storage is shared: a permuted stream keeps one copy of the base
// pixels plus one column permutation per task, and rows are materialized on
// demand for minibatches and pool scoring.

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "acl/nn.hpp"

namespace acl::data {

using nn::Matrix;
using nn::Vector;

enum class Scenario { domain_il, class_il, task_il };

std::string to_string(Scenario s);
Scenario scenario_from_string(const std::string& s);

// Immutable row storage with an optional column permutation applied on read.
class FeatureSource {
 public:
  explicit FeatureSource(std::shared_ptr<const Matrix> base,
                         std::shared_ptr<const std::vector<int>> column_perm = nullptr);

  Eigen::Index dim() const { return base_->cols(); }
  std::size_t rows() const { return static_cast<std::size_t>(base_->rows()); }
  const std::vector<int>* column_perm() const { return perm_.get(); }

  void gather_into(std::span<const std::size_t> rows, Matrix& out) const;
  Vector row(std::size_t r) const;

  // Same storage, different column permutation.
  std::shared_ptr<const FeatureSource> with_permutation(
      std::shared_ptr<const std::vector<int>> perm) const;

 private:
  std::shared_ptr<const Matrix> base_;
  std::shared_ptr<const std::vector<int>> perm_;
};

class LabelledSet {
 public:
  LabelledSet() = default;
  LabelledSet(Matrix inputs, std::vector<int> labels);
  LabelledSet(std::shared_ptr<const FeatureSource> source, std::vector<std::size_t> rows,
              std::vector<int> labels);

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  Eigen::Index dim() const { return source_ ? source_->dim() : 0; }

  std::span<const int> labels() const { return labels_; }
  int label(std::size_t i) const { return labels_[i]; }

  Matrix inputs() const;
  Matrix gather(std::span<const std::size_t> positions) const;
  Vector input(std::size_t i) const;

  LabelledSet subset(std::span<const std::size_t> positions) const;
  // Concatenation; both sets must share one FeatureSource.
  LabelledSet concat(const LabelledSet& other) const;

  const std::shared_ptr<const FeatureSource>& source() const { return source_; }
  std::span<const std::size_t> source_rows() const { return rows_; }

 private:
  std::shared_ptr<const FeatureSource> source_;
  std::vector<std::size_t> rows_;
  std::vector<int> labels_;
};

// One AL task. Pool items are addressed by their stable pool id
// (0..initial_pool_size()-1); the labelled set is always kept in ascending
// pool-id order so that identical contents train identically.
class Task {
 public:
  Task(int task_id, LabelledSet pool_with_oracle, LabelledSet val, LabelledSet test,
       std::size_t budget, std::size_t query_size, std::vector<int> class_subset);

  int id() const { return id_; }
  void set_id(int id) { id_ = id; }
  // Id assigned at construction; survives reorder_tasks.
  int origin() const { return origin_; }

  const std::vector<int>& classes() const { return classes_; }
  const LabelledSet& val() const { return val_; }
  const LabelledSet& test() const { return test_; }

  const LabelledSet& labelled() const { return labelled_; }
  std::span<const std::size_t> labelled_pool_ids() const { return labelled_ids_; }

  std::size_t initial_pool_size() const { return pool_.size(); }
  std::size_t pool_size() const { return pool_remaining_; }
  bool in_pool(std::size_t pool_id) const { return in_pool_[pool_id] != 0; }
  // Remaining pool ids, ascending.
  std::vector<std::size_t> pool_ids() const;
  Matrix pool_inputs(std::span<const std::size_t> pool_ids) const;
  Eigen::Index dim() const { return pool_.dim(); }

  std::size_t budget_total() const { return budget_total_; }
  std::size_t budget_remaining() const { return budget_remaining_; }
  std::size_t annotated() const { return annotated_; }
  std::size_t query_size() const { return query_size_; }

  // Moves pool items into the labelled set, revealing their oracle labels.
  // Throws BudgetError (and leaves the task untouched) on duplicate ids, ids
  // no longer in the pool, or a request larger than the remaining budget.
  void annotate(std::span<const std::size_t> pool_ids);

  // Treats the whole pool as pre-labelled seed data, outside the AL budget.
  void reveal_all();

 private:
  void rebuild_labelled();

  int id_;
  int origin_;
  LabelledSet pool_;  // labels are the hidden oracle
  LabelledSet val_;
  LabelledSet test_;
  std::vector<int> classes_;
  std::vector<char> in_pool_;
  std::vector<std::size_t> labelled_ids_;
  LabelledSet labelled_;
  std::size_t pool_remaining_;
  std::size_t budget_total_;
  std::size_t budget_remaining_;
  std::size_t query_size_;
  std::size_t annotated_ = 0;
};

Task annotate(Task task, std::span<const std::size_t> pool_ids);

struct TaskStream {
  std::vector<Task> tasks;
  Scenario scenario = Scenario::domain_il;
  int num_classes_total = 0;

  std::size_t size() const { return tasks.size(); }
  // Throws ConfigError when the scenario/class-subset rules are broken.
  void validate() const;
};

struct BudgetRule {
  double val_fraction = 0.05;
  double budget_fraction = 0.10;
  double query_fraction = 0.005;
};

// budget = floor(budget_fraction * pool), query = max(1, floor(query_fraction * pool)).
std::size_t budget_for(std::size_t pool, double budget_fraction);
std::size_t query_size_for(std::size_t pool, double query_fraction);

TaskStream make_permuted_stream(const LabelledSet& base_train, const LabelledSet& base_test,
                                int num_tasks, const BudgetRule& rule, std::uint64_t seed);

TaskStream make_split_stream(const LabelledSet& base_train, const LabelledSet& base_test,
                             int classes_per_task, std::span<const int> class_order,
                             Scenario scenario, const BudgetRule& rule, std::uint64_t seed);

struct SyntheticSpec {
  int tasks = 3;
  int classes_per_task = 2;
  int dim = 8;
  int samples_per_class = 60;
  int test_per_class = 30;
  double cluster_separation = 6.0;
};

TaskStream make_synthetic_stream(const SyntheticSpec& spec, Scenario scenario,
                                 const BudgetRule& rule, std::uint64_t seed);

// New stream whose task k is the old task order[k]; ids are renumbered.
TaskStream reorder_tasks(const TaskStream& stream, std::span<const std::size_t> order);

}  // namespace acl::data
