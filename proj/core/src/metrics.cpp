#include "acl/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "acl/error.hpp"

namespace acl::metrics {

void check_triangular(const AccuracyMatrix& a) {
  if (a.empty()) throw ContractError("accuracy matrix is empty");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].size() != i + 1) {
      throw ContractError("accuracy matrix row " + std::to_string(i) + " has " +
                          std::to_string(a[i].size()) + " entries, expected " +
                          std::to_string(i + 1));
    }
  }
}

double avg_accuracy(const AccuracyMatrix& a) {
  check_triangular(a);
  const auto& last = a.back();
  return std::accumulate(last.begin(), last.end(), 0.0) / static_cast<double>(last.size());
}

double forgetting_rate(const AccuracyMatrix& a) {
  check_triangular(a);
  const std::size_t T = a.size();
  if (T < 2) throw ContractError("forgetting_rate needs at least two tasks");
  double total = 0.0;
  for (std::size_t j = 0; j + 1 < T; ++j) {
    double best = a[j][j];
    for (std::size_t k = j + 1; k < T; ++k) best = std::max(best, a[k][j]);
    total += best - a[T - 1][j];
  }
  return total / static_cast<double>(T - 1);
}

double lca(std::span<const double> curve) {
  if (curve.empty()) throw ContractError("lca of an empty curve");
  return std::accumulate(curve.begin(), curve.end(), 0.0) / static_cast<double>(curve.size());
}

std::vector<double> current_task_curve(const std::vector<engine::RoundPoint>& rounds) {
  std::vector<double> out;
  out.reserve(rounds.size());
  for (const auto& r : rounds) out.push_back(r.current_acc);
  return out;
}

std::vector<double> seen_tasks_curve(const std::vector<engine::RoundPoint>& rounds) {
  std::vector<double> out;
  out.reserve(rounds.size());
  for (const auto& r : rounds) out.push_back(r.seen_mean);
  return out;
}

double lca_seen_tasks(const std::vector<engine::RoundPoint>& rounds) {
  return lca(seen_tasks_curve(rounds));
}

ProfilePoint profile_point(const engine::RunLog& log, std::string label) {
  if (log.rounds.empty() ||
      std::any_of(log.rounds.begin(), log.rounds.end(), [](const auto& r) { return r.empty(); })) {
    throw ContractError("profile_point: run log has no round curves, LCA is undefined");
  }
  ProfilePoint p;
  double total = 0.0;
  for (const auto& r : log.rounds) total += lca(current_task_curve(r));
  p.lca = total / static_cast<double>(log.rounds.size());
  p.forgetting_rate = forgetting_rate(log.accuracy);
  p.label = std::move(label);
  return p;
}

double normalized_fr(double fr_acl, double fr_cl) {
  if (fr_cl == 0.0) throw ContractError("normalized_fr: baseline forgetting rate is zero");
  return fr_acl / fr_cl;
}

double milestone_forgetting_rate(const engine::MilestoneLog& m) {
  if (!m.complete()) throw ContractError("milestone snapshot is incomplete");
  return forgetting_rate(m.matrix);
}

double jaccard(std::span<const std::size_t> a, std::span<const std::size_t> b) {
  const std::set<std::size_t> sa(a.begin(), a.end());
  const std::set<std::size_t> sb(b.begin(), b.end());
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t inter = 0;
  for (std::size_t x : sa) inter += sb.count(x);
  return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

}  // namespace acl::metrics
