#pragma once

// Continual-learning updates: train a model on one task's labelled data,
// starting from a checkpoint, with a strategy-specific objective.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "acl/data.hpp"
#include "acl/nn.hpp"
#include "acl/replay.hpp"

namespace acl::cl {

enum class Strategy { ft, ewc, er, agem, gdumb, der, derpp, icarl };

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& s);
bool uses_buffer(Strategy s);

struct CLHyper {
  Strategy strategy = Strategy::ft;
  int epochs = 10;
  int batch_size = 32;
  nn::OptimizerConfig opt;
  double lambda_ewc = 10.0;
  double beta_er = 1.0;
  double alpha_der = 0.5;
  double beta_derpp = 0.5;
  std::size_t buffer_capacity = 400;
  // Replay samples drawn per step; 0 means batch_size.
  int replay_batch = 0;
  std::optional<int> patience;

  void validate() const;
};

struct EwcAnchor {
  Vector anchor_params;
  Vector fisher_diag;
  double lambda = 0.0;
};

// Per-class exemplar bookkeeping for iCaRL: exemplar positions into the
// buffer and the class means of their penultimate features.
struct ClassExemplars {
  std::vector<int> classes;
  std::vector<std::vector<std::size_t>> exemplars;
  Matrix means;  // classes.size() x feature_dim

  bool empty() const { return classes.empty(); }
};

// Class masks used during training and evaluation. Only task-IL streams
// carry masks; other scenarios train the shared head unmasked.
struct MaskTable {
  std::vector<nn::ClassMask> per_task;
  bool active = false;

  const nn::ClassMask* for_task(int task_id) const;
  static MaskTable for_stream(const data::TaskStream& stream);
};

// State carried across tasks by a strategy.
struct CLState {
  ReplayBuffer buffer;
  std::optional<EwcAnchor> ewc;
  ClassExemplars exemplars;
};

CLState initial_state(const CLHyper& hyper);

struct TrainResult {
  nn::ModelState model;
  CLState state;
  int epochs_run = 0;
};

// Mean over samples of squared per-sample CE gradients at the given labels.
Vector ewc_fisher_diag(const nn::ModelState& model, const data::LabelledSet& data,
                       const nn::ClassMask* mask = nullptr);

// loss = lambda * sum F_i (theta_i - anchor_i)^2, grad = 2 lambda F (theta - anchor).
nn::LossGrad ewc_penalty(const nn::ModelState& model, const EwcAnchor& anchor);

// g unchanged when g.g_ref >= 0, otherwise g minus its projection on g_ref.
Vector agem_project(const Vector& g, const Vector& g_ref);

// alpha * mean over rows of ||logits - stored||^2, plus beta * mean CE on the
// replay labels. Throws when the batch carries no stored logits.
nn::LossGrad der_loss_terms(const nn::ModelState& model, const ReplayBatch& replay, double alpha,
                            double beta, const nn::RowMasks& masks = {});

// Plain cross-entropy training from `init` on rows (x, y), each row masked by
// its task's class mask. Shared by GDumb and the ceiling baselines.
nn::ModelState fit_plain(const nn::ModelState& init, const Matrix& inputs, std::span<const int> labels,
                         std::span<const int> task_ids, const MaskTable& masks,
                         const CLHyper& hyper, std::uint64_t seed);

// Fresh model from `init` trained only on the buffer contents.
nn::ModelState gdumb_train(const ReplayBuffer& buffer, const nn::ModelState& init,
                           const CLHyper& hyper, const MaskTable& masks, std::uint64_t seed);

// Greedy herding: each step adds the candidate that keeps the running mean
// of selected features closest to the overall mean; ties go to the lower index.
std::vector<std::size_t> icarl_herding(const Matrix& features, std::size_t m);

ClassExemplars icarl_class_means(const nn::ModelState& model, const ReplayBuffer& buffer);

// Nearest class mean in penultimate space, lowest class id on ties.
int icarl_classify(const nn::ModelState& model, const Vector& input,
                   const ClassExemplars& exemplars);
std::vector<int> icarl_predict(const nn::ModelState& model, const Matrix& inputs,
                               const ClassExemplars& exemplars);

struct TrainContext {
  const MaskTable* masks = nullptr;
  const nn::ModelState* init = nullptr;  // fresh-init checkpoint used by GDumb
  const data::LabelledSet* val = nullptr;
};

// One application of the CL update on `data` (task `task_id`). The returned
// state holds the buffer / anchor / exemplars after the task; callers that
// only need a proxy model discard it.
TrainResult train_task(const CLHyper& hyper, const nn::ModelState& start,
                       const data::LabelledSet& data, int task_id, const CLState& state,
                       const TrainContext& ctx, std::uint64_t seed);

}  // namespace acl::cl
