#include "acl/al.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "acl/error.hpp"
#include "acl/rng.hpp"

namespace acl::al {

namespace {

constexpr Eigen::Index kChunk = 4096;

void check_k(std::size_t k, std::size_t n, const char* who) {
  if (k > n) {
    throw ContractError(std::string(who) + ": k=" + std::to_string(k) + " exceeds " +
                        std::to_string(n) + " candidates");
  }
}

void check_distributions(const Matrix& probs) {
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    if (std::abs(probs.row(i).sum() - 1.0) > 1e-6) {
      throw ContractError("row " + std::to_string(i) + " is not a probability distribution");
    }
  }
}

// k-means++ / D^2 sampling. dist(c) returns squared distances of every row to row c.
template <typename DistFn>
std::vector<std::size_t> d2_sample(std::size_t n, std::size_t k, Rng& rng, DistFn dist) {
  std::vector<std::size_t> chosen;
  if (k == 0) return chosen;
  chosen.reserve(k);
  std::vector<char> taken(n, 0);
  Vector mind = Vector::Constant(static_cast<Eigen::Index>(n), std::numeric_limits<double>::infinity());
  std::size_t next = rng.uniform_index(n);
  for (;;) {
    chosen.push_back(next);
    taken[next] = 1;
    if (chosen.size() == k) break;
    const Vector d = dist(next);
    for (std::size_t i = 0; i < n; ++i) {
      const auto ii = static_cast<Eigen::Index>(i);
      mind[ii] = taken[i] ? 0.0 : std::min(mind[ii], std::max(0.0, d[ii]));
    }
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += mind[static_cast<Eigen::Index>(i)];
    if (total > 0.0) {
      const double u = rng.uniform01() * total;
      double acc = 0.0;
      std::size_t pick = n;
      for (std::size_t i = 0; i < n; ++i) {
        const double w = mind[static_cast<Eigen::Index>(i)];
        if (w <= 0.0) continue;
        acc += w;
        pick = i;
        if (acc > u) break;
      }
      next = pick;
    } else {
      std::vector<std::size_t> rest;
      for (std::size_t i = 0; i < n; ++i) {
        if (!taken[i]) rest.push_back(i);
      }
      next = rest[rng.uniform_index(rest.size())];
    }
  }
  return chosen;
}

Vector row_sq_dist(const Matrix& x, Eigen::Index c) {
  return (x.rowwise() - x.row(c)).rowwise().squaredNorm();
}

struct PoolTrace {
  Matrix probs;
  Matrix penultimate;
};

PoolTrace trace_of(const nn::ModelState& proxy, const Matrix& x, const nn::RowMasks& masks) {
  nn::ForwardTrace t = nn::forward(proxy, x, masks);
  return {std::move(t.probs), std::move(t.penultimate)};
}

std::vector<std::size_t> select_from_trace(Strategy strategy, const PoolTrace& pool,
                                           const Matrix& labelled_pen, std::size_t n,
                                           std::size_t k, std::uint64_t seed,
                                           std::vector<double>* scores) {
  check_k(k, n, "query");
  std::vector<std::size_t> picks;
  switch (strategy) {
    case Strategy::random: {
      Rng rng(seed);
      picks = rng.sample_without_replacement(n, k);
      break;
    }
    case Strategy::entropy:
    case Strategy::margin: {
      const Vector s = strategy == Strategy::entropy ? score_entropy(pool.probs) : score_margin(pool.probs);
      picks = select_top_k(s, k);
      if (scores) {
        scores->clear();
        for (std::size_t p : picks) scores->push_back(s[static_cast<Eigen::Index>(p)]);
      }
      break;
    }
    case Strategy::badge: {
      Matrix a = pool.probs;
      const auto pred = nn::argmax_rows(pool.probs);
      for (Eigen::Index r = 0; r < a.rows(); ++r) a(r, pred[static_cast<std::size_t>(r)]) -= 1.0;
      picks = badge_select_factored(a, pool.penultimate, k, seed);
      break;
    }
    case Strategy::coreset:
      picks = coreset_select(pool.penultimate, labelled_pen, k);
      break;
    case Strategy::kmeans:
      picks = kmeans_select(pool.penultimate, k, seed);
      break;
  }
  return picks;
}

bool needs_forward(Strategy s) { return s != Strategy::random; }

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::random: return "random";
    case Strategy::entropy: return "entropy";
    case Strategy::margin: return "margin";
    case Strategy::badge: return "badge";
    case Strategy::coreset: return "coreset";
    case Strategy::kmeans: return "kmeans";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::random, Strategy::entropy, Strategy::margin, Strategy::badge,
                     Strategy::coreset, Strategy::kmeans}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown AL strategy '" + s + "'", "al");
}

Vector score_entropy(const Matrix& probs) {
  check_distributions(probs);
  Vector out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double h = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > 0.0) h -= p * std::log(p);
    }
    out[i] = h;
  }
  return out;
}

Vector score_margin(const Matrix& probs) {
  if (probs.cols() < 2) throw ContractError("score_margin: need at least two classes");
  check_distributions(probs);
  Vector out(probs.rows());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    double first = -1.0, second = -1.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const double p = probs(i, c);
      if (p > first) {
        second = first;
        first = p;
      } else if (p > second) {
        second = p;
      }
    }
    out[i] = -(first - second);
  }
  return out;
}

std::vector<std::size_t> select_top_k(const Vector& scores, std::size_t k) {
  const auto n = static_cast<std::size_t>(scores.size());
  check_k(k, n, "select_top_k");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return scores[static_cast<Eigen::Index>(a)] > scores[static_cast<Eigen::Index>(b)];
  });
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> badge_select(const Matrix& grad_embeddings, std::size_t k,
                                      std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(grad_embeddings.rows());
  check_k(k, n, "badge_select");
  Rng rng(seed);
  return d2_sample(n, k, rng, [&](std::size_t c) {
    return row_sq_dist(grad_embeddings, static_cast<Eigen::Index>(c));
  });
}

std::vector<std::size_t> badge_select_factored(const Matrix& a, const Matrix& h, std::size_t k,
                                               std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(a.rows());
  if (h.rows() != a.rows()) throw ContractError("badge_select_factored: factor row mismatch");
  check_k(k, n, "badge_select");
  // ||a_i (x) g_i - a_j (x) g_j||^2 = |a_i|^2|g_i|^2 + |a_j|^2|g_j|^2 - 2 (a_i.a_j)(g_i.g_j)
  // with g = [h; 1].
  Matrix g(h.rows(), h.cols() + 1);
  g.leftCols(h.cols()) = h;
  g.col(h.cols()).setOnes();
  Vector norm_a(a.rows()), norm_g(g.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    norm_a[i] = a.row(i).dot(a.row(i));
    norm_g[i] = g.row(i).dot(g.row(i));
  }
  Rng rng(seed);
  return d2_sample(n, k, rng, [&](std::size_t c) {
    const auto cc = static_cast<Eigen::Index>(c);
    Vector out(a.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
      out[i] = norm_a[i] * norm_g[i] + norm_a[cc] * norm_g[cc] -
               2.0 * a.row(i).dot(a.row(cc)) * g.row(i).dot(g.row(cc));
    }
    return out;
  });
}

std::vector<std::size_t> coreset_select(const Matrix& pool_emb, const Matrix& labelled_emb,
                                        std::size_t k) {
  const auto n = static_cast<std::size_t>(pool_emb.rows());
  check_k(k, n, "coreset_select");
  std::vector<std::size_t> out;
  if (k == 0) return out;
  Vector mind = Vector::Constant(pool_emb.rows(), std::numeric_limits<double>::infinity());
  for (Eigen::Index j = 0; j < labelled_emb.rows(); ++j) {
    mind = mind.cwiseMin((pool_emb.rowwise() - labelled_emb.row(j)).rowwise().squaredNorm());
  }
  std::vector<char> taken(n, 0);
  const bool cold = labelled_emb.rows() == 0;
  while (out.size() < k) {
    std::size_t best = n;
    if (cold && out.empty()) {
      best = 0;
    } else {
      double best_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d = mind[static_cast<Eigen::Index>(i)];
        if (!taken[i] && d > best_d) {
          best_d = d;
          best = i;
        }
      }
    }
    taken[best] = 1;
    out.push_back(best);
    mind = mind.cwiseMin(row_sq_dist(pool_emb, static_cast<Eigen::Index>(best)));
  }
  return out;
}

std::vector<std::size_t> kmeans_select(const Matrix& pool_emb, std::size_t k, std::uint64_t seed,
                                       const KMeansOptions& opts) {
  const auto n = static_cast<std::size_t>(pool_emb.rows());
  check_k(k, n, "kmeans_select");
  if (k == 0) return {};
  Rng rng(seed);
  const auto init = d2_sample(n, k, rng, [&](std::size_t c) {
    return row_sq_dist(pool_emb, static_cast<Eigen::Index>(c));
  });
  const auto kk = static_cast<Eigen::Index>(k);
  Matrix centroids(kk, pool_emb.cols());
  for (Eigen::Index c = 0; c < kk; ++c) centroids.row(c) = pool_emb.row(static_cast<Eigen::Index>(init[static_cast<std::size_t>(c)]));

  const Vector xnorm = pool_emb.rowwise().squaredNorm();
  std::vector<Eigen::Index> assign(n, 0);
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    const Vector cnorm = centroids.rowwise().squaredNorm();
    for (Eigen::Index lo = 0; lo < pool_emb.rows(); lo += kChunk) {
      const Eigen::Index len = std::min(kChunk, pool_emb.rows() - lo);
      const Matrix cross = pool_emb.middleRows(lo, len) * centroids.transpose();
      for (Eigen::Index r = 0; r < len; ++r) {
        Eigen::Index best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < kk; ++c) {
          const double d = xnorm[lo + r] + cnorm[c] - 2.0 * cross(r, c);
          if (d < best_d) {
            best_d = d;
            best = c;
          }
        }
        assign[static_cast<std::size_t>(lo + r)] = best;
      }
    }
    Matrix sums = Matrix::Zero(kk, pool_emb.cols());
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      sums.row(assign[i]) += pool_emb.row(static_cast<Eigen::Index>(i));
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    double shift = 0.0;
    for (Eigen::Index c = 0; c < kk; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) continue;  // empty cluster keeps its centroid
      const Eigen::RowVectorXd next = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);
      shift = std::max(shift, (next - centroids.row(c)).norm());
      centroids.row(c) = next;
    }
    if (shift < opts.tol) break;
  }

  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(k);
  for (Eigen::Index c = 0; c < kk; ++c) {
    const Vector d = (pool_emb.rowwise() - centroids.row(c)).rowwise().squaredNorm();
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!taken[i] && d[static_cast<Eigen::Index>(i)] < best_d) {
        best_d = d[static_cast<Eigen::Index>(i)];
        best = i;
      }
    }
    taken[best] = 1;
    out.push_back(best);
  }
  return out;
}

std::vector<std::size_t> select_candidates(Strategy strategy, const nn::ModelState& proxy,
                                           const Matrix& candidates, const nn::RowMasks& masks,
                                           const Matrix& labelled_inputs, std::size_t k,
                                           std::uint64_t seed, std::vector<double>* scores) {
  const auto n = static_cast<std::size_t>(candidates.rows());
  PoolTrace pool;
  Matrix labelled_pen;
  if (needs_forward(strategy)) {
    pool = trace_of(proxy, candidates, masks);
    if (strategy == Strategy::coreset && labelled_inputs.rows() > 0) {
      labelled_pen = nn::forward(proxy, labelled_inputs).penultimate;
    }
  }
  return select_from_trace(strategy, pool, labelled_pen, n, k, seed, scores);
}

QueryBatch query(Strategy strategy, const nn::ModelState& proxy, const data::Task& task,
                 std::size_t k, std::uint64_t seed, const nn::ClassMask* mask) {
  const std::vector<std::size_t> ids = task.pool_ids();
  if (ids.empty()) throw ContractError("query: empty pool");
  if (k > std::min(ids.size(), task.budget_remaining())) {
    throw BudgetError("query: k=" + std::to_string(k) + " exceeds pool or remaining budget");
  }
  QueryBatch out;
  out.strategy = strategy;
  PoolTrace pool;
  Matrix labelled_pen;
  if (needs_forward(strategy)) {
    const nn::RowMasks masks = mask ? nn::RowMasks{mask} : nn::RowMasks{};
    const auto n = static_cast<Eigen::Index>(ids.size());
    for (Eigen::Index lo = 0; lo < n; lo += kChunk) {
      const Eigen::Index len = std::min(kChunk, n - lo);
      const std::span<const std::size_t> part(ids.data() + lo, static_cast<std::size_t>(len));
      PoolTrace t = trace_of(proxy, task.pool_inputs(part), masks);
      if (lo == 0) {
        pool.probs.resize(n, t.probs.cols());
        pool.penultimate.resize(n, t.penultimate.cols());
      }
      pool.probs.middleRows(lo, len) = t.probs;
      pool.penultimate.middleRows(lo, len) = t.penultimate;
    }
    if (strategy == Strategy::coreset && !task.labelled().empty()) {
      labelled_pen = nn::forward(proxy, task.labelled().inputs()).penultimate;
    }
  }
  const auto picks = select_from_trace(strategy, pool, labelled_pen, ids.size(), k, seed, &out.scores);
  out.pool_indices.reserve(picks.size());
  for (std::size_t p : picks) out.pool_indices.push_back(ids[p]);
  return out;
}

}  // namespace acl::al
