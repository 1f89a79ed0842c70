#pragma once

// Acquisition functions: score or select unlabelled pool items for annotation.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "acl/data.hpp"
#include "acl/nn.hpp"

namespace acl::al {

using nn::Matrix;
using nn::Vector;

enum class Strategy { random, entropy, margin, badge, coreset, kmeans };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);

// Natural-log entropy per row; 0 log 0 = 0. Rows must sum to 1 within 1e-6.
Vector score_entropy(const Matrix& probs);
// -(p_top1 - p_top2) per row.
Vector score_margin(const Matrix& probs);

// Indices of the k largest scores, descending, lower index first on ties.
std::vector<std::size_t> select_top_k(const Vector& scores, std::size_t k);

// k-means++ seeding over explicit gradient embeddings (rows).
std::vector<std::size_t> badge_select(const Matrix& grad_embeddings, std::size_t k,
                                      std::uint64_t seed);

// Same sampling law over embeddings of the form a_i (x) [h_i; 1], given the
// factors a (n x C) and h (n x H) without materializing the outer products.
std::vector<std::size_t> badge_select_factored(const Matrix& a, const Matrix& h, std::size_t k,
                                               std::uint64_t seed);

// Greedy k-center against labelled embeddings and earlier picks. With no
// labelled rows the first pick is index 0. Lower index wins ties.
std::vector<std::size_t> coreset_select(const Matrix& pool_emb, const Matrix& labelled_emb,
                                        std::size_t k);

struct KMeansOptions {
  int max_iter = 100;
  double tol = 1e-6;
};

// Lloyd's k-means (k-means++ init), then the pool point nearest each centroid,
// falling back to the next nearest (by distance, then index) on collisions.
std::vector<std::size_t> kmeans_select(const Matrix& pool_emb, std::size_t k, std::uint64_t seed,
                                       const KMeansOptions& opts = {});

struct QueryBatch {
  std::vector<std::size_t> pool_indices;  // stable pool ids, in selection order
  std::vector<double> scores;             // entropy / margin only
  Strategy strategy = Strategy::random;
};

// Selection over an arbitrary candidate set. `masks` applies to the proxy's
// forward pass (empty, shared, or one per candidate). Returns candidate
// positions in selection order; `scores` receives per-pick scores when the
// strategy has them.
std::vector<std::size_t> select_candidates(Strategy strategy, const nn::ModelState& proxy,
                                           const Matrix& candidates, const nn::RowMasks& masks,
                                           const Matrix& labelled_inputs, std::size_t k,
                                           std::uint64_t seed, std::vector<double>* scores = nullptr);

// Builds the annotation query for one task from its current unlabelled pool.
QueryBatch query(Strategy strategy, const nn::ModelState& proxy, const data::Task& task,
                 std::size_t k, std::uint64_t seed, const nn::ClassMask* mask = nullptr);

}  // namespace acl::al
