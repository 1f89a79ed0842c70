#include "acl/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "acl/error.hpp"
#include "acl/rng.hpp"

namespace acl::data {

namespace {

void check_fraction(double f, const char* name) {
  if (!(f > 0.0 && f <= 1.0)) {
    throw ConfigError(std::string(name) + " must lie in (0, 1]", name);
  }
}

int class_count(const LabelledSet& set) {
  int mx = -1;
  for (int y : set.labels()) mx = std::max(mx, y);
  return mx + 1;
}

// Splits positions 0..n-1 into (pool, val) with a seeded shuffle; both sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_val(
    std::vector<std::size_t> positions, double val_fraction, std::uint64_t seed) {
  Rng rng(seed);
  rng.shuffle(positions);
  const auto n_val = static_cast<std::size_t>(
      std::floor(val_fraction * static_cast<double>(positions.size())));
  std::vector<std::size_t> val(positions.begin(), positions.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> pool(positions.begin() + static_cast<std::ptrdiff_t>(n_val), positions.end());
  std::sort(val.begin(), val.end());
  std::sort(pool.begin(), pool.end());
  return {std::move(pool), std::move(val)};
}

LabelledSet rebase(const LabelledSet& set, std::shared_ptr<const FeatureSource> source,
                   std::span<const std::size_t> positions) {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  rows.reserve(positions.size());
  labels.reserve(positions.size());
  for (std::size_t p : positions) {
    rows.push_back(set.source_rows()[p]);
    labels.push_back(set.label(p));
  }
  return LabelledSet(std::move(source), std::move(rows), std::move(labels));
}

std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  return p;
}

Task build_task(int id, LabelledSet pool, LabelledSet val, LabelledSet test,
                const BudgetRule& rule, std::vector<int> classes) {
  const std::size_t budget = budget_for(pool.size(), rule.budget_fraction);
  const std::size_t query = query_size_for(pool.size(), rule.query_fraction);
  return Task(id, std::move(pool), std::move(val), std::move(test), budget, query,
              std::move(classes));
}

}  // namespace

std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::domain_il: return "domain_il";
    case Scenario::class_il: return "class_il";
    case Scenario::task_il: return "task_il";
  }
  return "unknown";
}

Scenario scenario_from_string(const std::string& s) {
  if (s == "domain_il") return Scenario::domain_il;
  if (s == "class_il") return Scenario::class_il;
  if (s == "task_il") return Scenario::task_il;
  throw ConfigError("unknown scenario '" + s + "'", "scenario");
}

// ---------------------------------------------------------------------------

FeatureSource::FeatureSource(std::shared_ptr<const Matrix> base,
                             std::shared_ptr<const std::vector<int>> column_perm)
    : base_(std::move(base)), perm_(std::move(column_perm)) {
  if (!base_) throw ContractError("FeatureSource: null storage");
  if (perm_ && static_cast<Eigen::Index>(perm_->size()) != base_->cols()) {
    throw ContractError("FeatureSource: permutation width mismatch");
  }
}

void FeatureSource::gather_into(std::span<const std::size_t> rows, Matrix& out) const {
  const Eigen::Index d = base_->cols();
  out.resize(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(rows[i]);
    if (r >= base_->rows()) throw ContractError("FeatureSource: row out of range");
    const auto ii = static_cast<Eigen::Index>(i);
    if (perm_) {
      const double* src = base_->data() + r * d;
      double* dst = out.data() + ii * d;
      for (Eigen::Index c = 0; c < d; ++c) dst[c] = src[(*perm_)[static_cast<std::size_t>(c)]];
    } else {
      out.row(ii) = base_->row(r);
    }
  }
}

Vector FeatureSource::row(std::size_t r) const {
  Matrix m;
  const std::size_t rows[1] = {r};
  gather_into(rows, m);
  return m.row(0).transpose();
}

std::shared_ptr<const FeatureSource> FeatureSource::with_permutation(
    std::shared_ptr<const std::vector<int>> perm) const {
  if (perm && perm_) {
    // Reading column c yields base column old[new[c]].
    auto composed = std::make_shared<std::vector<int>>(perm->size());
    for (std::size_t c = 0; c < perm->size(); ++c) {
      (*composed)[c] = (*perm_)[static_cast<std::size_t>((*perm)[c])];
    }
    return std::make_shared<FeatureSource>(base_, std::move(composed));
  }
  return std::make_shared<FeatureSource>(base_, perm ? std::move(perm) : perm_);
}

// ---------------------------------------------------------------------------

LabelledSet::LabelledSet(Matrix inputs, std::vector<int> labels) {
  if (static_cast<std::size_t>(inputs.rows()) != labels.size()) {
    throw ContractError("LabelledSet: input rows and label count differ");
  }
  if (!inputs.allFinite()) throw ContractError("LabelledSet: non-finite inputs");
  rows_ = all_positions(labels.size());
  labels_ = std::move(labels);
  source_ = std::make_shared<FeatureSource>(std::make_shared<const Matrix>(std::move(inputs)));
}

LabelledSet::LabelledSet(std::shared_ptr<const FeatureSource> source,
                         std::vector<std::size_t> rows, std::vector<int> labels)
    : source_(std::move(source)), rows_(std::move(rows)), labels_(std::move(labels)) {
  if (rows_.size() != labels_.size()) {
    throw ContractError("LabelledSet: row and label count differ");
  }
  if (!source_ && !rows_.empty()) throw ContractError("LabelledSet: rows without storage");
}

Matrix LabelledSet::inputs() const {
  Matrix out;
  if (!source_) return out;
  source_->gather_into(rows_, out);
  return out;
}

Matrix LabelledSet::gather(std::span<const std::size_t> positions) const {
  std::vector<std::size_t> rows;
  rows.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= rows_.size()) throw ContractError("LabelledSet: position out of range");
    rows.push_back(rows_[p]);
  }
  Matrix out;
  if (source_) source_->gather_into(rows, out);
  return out;
}

Vector LabelledSet::input(std::size_t i) const {
  if (i >= rows_.size()) throw ContractError("LabelledSet: position out of range");
  return source_->row(rows_[i]);
}

LabelledSet LabelledSet::subset(std::span<const std::size_t> positions) const {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
  rows.reserve(positions.size());
  labels.reserve(positions.size());
  for (std::size_t p : positions) {
    if (p >= rows_.size()) throw ContractError("LabelledSet: position out of range");
    rows.push_back(rows_[p]);
    labels.push_back(labels_[p]);
  }
  return LabelledSet(source_, std::move(rows), std::move(labels));
}

LabelledSet LabelledSet::concat(const LabelledSet& other) const {
  if (empty()) return other;
  if (other.empty()) return *this;
  if (source_ != other.source_) throw ContractError("LabelledSet::concat: different storage");
  std::vector<std::size_t> rows = rows_;
  std::vector<int> labels = labels_;
  rows.insert(rows.end(), other.rows_.begin(), other.rows_.end());
  labels.insert(labels.end(), other.labels_.begin(), other.labels_.end());
  return LabelledSet(source_, std::move(rows), std::move(labels));
}

// ---------------------------------------------------------------------------

Task::Task(int task_id, LabelledSet pool_with_oracle, LabelledSet val, LabelledSet test,
           std::size_t budget, std::size_t query_size, std::vector<int> class_subset)
    : id_(task_id),
      origin_(task_id),
      pool_(std::move(pool_with_oracle)),
      val_(std::move(val)),
      test_(std::move(test)),
      classes_(std::move(class_subset)),
      in_pool_(pool_.size(), 1),
      labelled_(pool_.source(), {}, {}),
      pool_remaining_(pool_.size()),
      budget_total_(budget),
      budget_remaining_(budget),
      query_size_(query_size) {
  if (task_id < 0) throw ContractError("Task: negative id");
  if (budget > pool_.size()) throw ContractError("Task: budget exceeds pool size");
  if (query_size == 0) throw ContractError("Task: query size must be positive");
  if (budget > 0 && query_size > budget) throw ContractError("Task: query size exceeds budget");
  std::sort(classes_.begin(), classes_.end());
}

std::vector<std::size_t> Task::pool_ids() const {
  std::vector<std::size_t> out;
  out.reserve(pool_remaining_);
  for (std::size_t i = 0; i < in_pool_.size(); ++i) {
    if (in_pool_[i]) out.push_back(i);
  }
  return out;
}

Matrix Task::pool_inputs(std::span<const std::size_t> pool_ids) const {
  return pool_.gather(pool_ids);
}

void Task::annotate(std::span<const std::size_t> pool_ids) {
  if (pool_ids.size() > budget_remaining_) {
    throw BudgetError("annotate: request of " + std::to_string(pool_ids.size()) +
                      " exceeds remaining budget " + std::to_string(budget_remaining_));
  }
  std::set<std::size_t> seen;
  for (std::size_t id : pool_ids) {
    if (id >= in_pool_.size()) throw BudgetError("annotate: pool id out of range");
    if (!in_pool_[id]) throw BudgetError("annotate: item " + std::to_string(id) + " already labelled");
    if (!seen.insert(id).second) throw BudgetError("annotate: duplicate id " + std::to_string(id));
  }
  for (std::size_t id : pool_ids) in_pool_[id] = 0;
  labelled_ids_.insert(labelled_ids_.end(), pool_ids.begin(), pool_ids.end());
  std::sort(labelled_ids_.begin(), labelled_ids_.end());
  pool_remaining_ -= pool_ids.size();
  budget_remaining_ -= pool_ids.size();
  annotated_ += pool_ids.size();
  rebuild_labelled();
}

void Task::reveal_all() {
  for (std::size_t i = 0; i < in_pool_.size(); ++i) {
    if (in_pool_[i]) {
      in_pool_[i] = 0;
      labelled_ids_.push_back(i);
    }
  }
  std::sort(labelled_ids_.begin(), labelled_ids_.end());
  pool_remaining_ = 0;
  budget_remaining_ = 0;
  rebuild_labelled();
}

void Task::rebuild_labelled() { labelled_ = pool_.subset(labelled_ids_); }

Task annotate(Task task, std::span<const std::size_t> pool_ids) {
  task.annotate(pool_ids);
  return task;
}

void TaskStream::validate() const {
  for (std::size_t t = 0; t < tasks.size(); ++t) {
    if (tasks[t].id() != static_cast<int>(t)) throw ConfigError("task ids must be 0..T-1 in order");
  }
  if (scenario == Scenario::domain_il) {
    for (const Task& t : tasks) {
      if (t.classes() != tasks.front().classes()) {
        throw ConfigError("domain-IL tasks must share one class subset", "scenario");
      }
    }
  } else {
    std::set<int> seen;
    for (const Task& t : tasks) {
      for (int c : t.classes()) {
        if (!seen.insert(c).second) {
          throw ConfigError("class/task-IL class subsets must be disjoint", "scenario");
        }
      }
    }
  }
}

std::size_t budget_for(std::size_t pool, double budget_fraction) {
  return static_cast<std::size_t>(std::floor(budget_fraction * static_cast<double>(pool)));
}

std::size_t query_size_for(std::size_t pool, double query_fraction) {
  return std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(query_fraction * static_cast<double>(pool))));
}

TaskStream make_permuted_stream(const LabelledSet& base_train, const LabelledSet& base_test,
                                int num_tasks, const BudgetRule& rule, std::uint64_t seed) {
  if (num_tasks < 1) throw ConfigError("num_tasks must be >= 1", "num_tasks");
  check_fraction(rule.budget_fraction, "budget_fraction");
  check_fraction(rule.query_fraction, "query_fraction");
  check_fraction(rule.val_fraction, "val_fraction");
  if (base_train.empty() || base_test.empty()) throw ContractError("make_permuted_stream: empty base set");

  const int classes_total = std::max(class_count(base_train), class_count(base_test));
  std::vector<int> classes(static_cast<std::size_t>(classes_total));
  std::iota(classes.begin(), classes.end(), 0);

  auto [pool_pos, val_pos] =
      split_val(all_positions(base_train.size()), rule.val_fraction, derive_seed(seed, {1}));
  const std::vector<std::size_t> test_pos = all_positions(base_test.size());
  const auto dim = static_cast<std::size_t>(base_train.dim());

  TaskStream stream;
  stream.scenario = Scenario::domain_il;
  stream.num_classes_total = classes_total;
  for (int t = 0; t < num_tasks; ++t) {
    std::shared_ptr<const std::vector<int>> perm;
    if (t > 0) {
      Rng rng(derive_seed(seed, {2, static_cast<std::uint64_t>(t)}));
      auto p = std::make_shared<std::vector<int>>(dim);
      std::iota(p->begin(), p->end(), 0);
      rng.shuffle(*p);
      perm = std::move(p);
    }
    auto train_src = base_train.source()->with_permutation(perm);
    auto test_src = base_test.source()->with_permutation(perm);
    stream.tasks.push_back(build_task(t, rebase(base_train, train_src, pool_pos),
                                      rebase(base_train, train_src, val_pos),
                                      rebase(base_test, test_src, test_pos), rule, classes));
  }
  return stream;
}

TaskStream make_split_stream(const LabelledSet& base_train, const LabelledSet& base_test,
                             int classes_per_task, std::span<const int> class_order,
                             Scenario scenario, const BudgetRule& rule, std::uint64_t seed) {
  check_fraction(rule.budget_fraction, "budget_fraction");
  check_fraction(rule.query_fraction, "query_fraction");
  check_fraction(rule.val_fraction, "val_fraction");
  if (scenario == Scenario::domain_il) {
    throw ConfigError("split streams are class-IL or task-IL", "scenario");
  }
  const int classes_total = std::max(class_count(base_train), class_count(base_test));
  if (classes_per_task < 1 || classes_total % classes_per_task != 0) {
    throw ConfigError("class count " + std::to_string(classes_total) +
                          " is not divisible by classes_per_task " +
                          std::to_string(classes_per_task),
                      "classes_per_task");
  }
  {
    std::vector<int> sorted(class_order.begin(), class_order.end());
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> expect(static_cast<std::size_t>(classes_total));
    std::iota(expect.begin(), expect.end(), 0);
    if (sorted != expect) throw ConfigError("class_order must permute all classes", "class_order");
  }

  TaskStream stream;
  stream.scenario = scenario;
  stream.num_classes_total = classes_total;
  const int num_tasks = classes_total / classes_per_task;
  for (int t = 0; t < num_tasks; ++t) {
    std::vector<int> subset(class_order.begin() + t * classes_per_task,
                            class_order.begin() + (t + 1) * classes_per_task);
    std::sort(subset.begin(), subset.end());
    auto member = [&](int y) { return std::binary_search(subset.begin(), subset.end(), y); };

    std::vector<std::size_t> train_pos, test_pos;
    for (std::size_t i = 0; i < base_train.size(); ++i) {
      if (member(base_train.label(i))) train_pos.push_back(i);
    }
    for (std::size_t i = 0; i < base_test.size(); ++i) {
      if (member(base_test.label(i))) test_pos.push_back(i);
    }
    // Seeded by the first class so a task keeps its split under any order.
    auto [pool_pos, val_pos] = split_val(
        train_pos, rule.val_fraction,
        derive_seed(seed, {3, static_cast<std::uint64_t>(subset.front())}));
    auto pool = base_train.subset(pool_pos);
    auto val = base_train.subset(val_pos);
    auto test = base_test.subset(test_pos);
    stream.tasks.push_back(build_task(t, std::move(pool), std::move(val), std::move(test),
                                      rule, std::move(subset)));
  }
  return stream;
}

TaskStream make_synthetic_stream(const SyntheticSpec& spec, Scenario scenario,
                                 const BudgetRule& rule, std::uint64_t seed) {
  if (spec.tasks < 1 || spec.classes_per_task < 1 || spec.dim < 1 ||
      spec.samples_per_class < 1 || spec.test_per_class < 1) {
    throw ConfigError("synthetic stream counts must be positive", "synthetic");
  }
  const bool shared_labels = scenario == Scenario::domain_il;
  const int classes_total = shared_labels ? spec.classes_per_task : spec.tasks * spec.classes_per_task;
  if (classes_total < 2) throw ConfigError("synthetic stream needs at least two classes", "synthetic");

  // Class means sit on distinct vertices of a hypercube with edge
  // `cluster_separation`, so any two means are at least that far apart.
  Rng mean_rng(derive_seed(seed, {10}));
  const int bits = std::min(spec.dim, 20);
  if ((1LL << bits) < classes_total) throw ConfigError("synthetic dim too small for class count", "synthetic");
  const auto vertices =
      mean_rng.sample_without_replacement(std::size_t{1} << bits, static_cast<std::size_t>(classes_total));
  Matrix means = Matrix::Zero(classes_total, spec.dim);
  for (int c = 0; c < classes_total; ++c) {
    for (int j = 0; j < spec.dim; ++j) {
      const bool on = j < bits && ((vertices[static_cast<std::size_t>(c)] >> j) & 1U);
      means(c, j) = on ? spec.cluster_separation / 2.0 : -spec.cluster_separation / 2.0;
    }
  }

  TaskStream stream;
  stream.scenario = scenario;
  stream.num_classes_total = classes_total;
  for (int t = 0; t < spec.tasks; ++t) {
    std::vector<int> subset;
    for (int c = 0; c < spec.classes_per_task; ++c) {
      subset.push_back(shared_labels ? c : t * spec.classes_per_task + c);
    }
    // Domain-IL tasks see the shared classes through a task-specific
    // coordinate permutation (identity for task 0).
    std::vector<int> perm(static_cast<std::size_t>(spec.dim));
    std::iota(perm.begin(), perm.end(), 0);
    Rng rng(derive_seed(seed, {11, static_cast<std::uint64_t>(t)}));
    if (shared_labels && t > 0) rng.shuffle(perm);

    auto draw = [&](int per_class) {
      Matrix x(per_class * spec.classes_per_task, spec.dim);
      std::vector<int> y;
      Eigen::Index r = 0;
      for (int c : subset) {
        for (int s = 0; s < per_class; ++s, ++r) {
          for (int j = 0; j < spec.dim; ++j) {
            x(r, j) = means(c, perm[static_cast<std::size_t>(j)]) + rng.normal();
          }
          y.push_back(c);
        }
      }
      return LabelledSet(std::move(x), std::move(y));
    };
    LabelledSet train = draw(spec.samples_per_class);
    LabelledSet test = draw(spec.test_per_class);
    auto [pool_pos, val_pos] = split_val(all_positions(train.size()), rule.val_fraction,
                                         derive_seed(seed, {12, static_cast<std::uint64_t>(t)}));
    stream.tasks.push_back(build_task(t, train.subset(pool_pos), train.subset(val_pos),
                                      std::move(test), rule, subset));
  }
  return stream;
}

TaskStream reorder_tasks(const TaskStream& stream, std::span<const std::size_t> order) {
  std::vector<std::size_t> sorted(order.begin(), order.end());
  std::sort(sorted.begin(), sorted.end());
  bool ok = sorted.size() == stream.size();
  for (std::size_t i = 0; ok && i < sorted.size(); ++i) ok = sorted[i] == i;
  if (!ok) throw ConfigError("task order must be a permutation of 0..T-1", "task_orders");
  TaskStream out;
  out.scenario = stream.scenario;
  out.num_classes_total = stream.num_classes_total;
  out.tasks.reserve(order.size());
  for (std::size_t k = 0; k < order.size(); ++k) {
    out.tasks.push_back(stream.tasks[order[k]]);
    out.tasks.back().set_id(static_cast<int>(k));
  }
  return out;
}

}  // namespace acl::data
