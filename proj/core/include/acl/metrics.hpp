#pragma once

// Accuracy, forgetting and learning-speed measures over run logs.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "acl/engine.hpp"

namespace acl::metrics {

// Lower-triangular: row i holds accuracies of tasks 0..i after task i.
using AccuracyMatrix = std::vector<std::vector<double>>;

// Throws ContractError unless the matrix is non-empty and row i has i+1 entries.
void check_triangular(const AccuracyMatrix& a);

// Mean of the last row.
double avg_accuracy(const AccuracyMatrix& a);

// Mean over tasks j < T-1 of max_{k >= j} A[k][j] - A[T-1][j]. Needs T >= 2.
double forgetting_rate(const AccuracyMatrix& a);

// Mean of the curve (equally spaced rounds, round 0 included).
double lca(std::span<const double> curve);

std::vector<double> current_task_curve(const std::vector<engine::RoundPoint>& rounds);
std::vector<double> seen_tasks_curve(const std::vector<engine::RoundPoint>& rounds);
double lca_seen_tasks(const std::vector<engine::RoundPoint>& rounds);

struct ProfilePoint {
  double lca = 0.0;
  double forgetting_rate = 0.0;
  std::string label;
};

// LCA is the unweighted mean of per-task current-task LCAs. Throws when the
// log has no round curves (supervised CL).
ProfilePoint profile_point(const engine::RunLog& log, std::string label = {});

// fr_acl / fr_cl; throws ContractError when fr_cl == 0.
double normalized_fr(double fr_acl, double fr_cl);

// Forgetting rate of a milestone snapshot; throws unless every row was reached.
double milestone_forgetting_rate(const engine::MilestoneLog& m);

// |a n b| / |a u b| over the distinct elements; 1 when both are empty.
double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b);

}  // namespace acl::metrics
