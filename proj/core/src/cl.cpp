#include "acl/cl.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "acl/error.hpp"
#include "acl/rng.hpp"

namespace acl::cl {

namespace {

nn::RowMasks replay_masks(const MaskTable& masks, const ReplayBatch& rb) {
  if (!masks.active) return {};
  nn::RowMasks out;
  out.reserve(rb.size());
  for (int tid : rb.task_ids) out.push_back(masks.for_task(tid));
  return out;
}

nn::RowMasks single(const nn::ClassMask* m) { return m ? nn::RowMasks{m} : nn::RowMasks{}; }

double set_accuracy(const nn::ModelState& model, const data::LabelledSet& set,
                    const nn::ClassMask* mask) {
  const auto pred = nn::argmax_rows(nn::forward(model, set.inputs(), mask).probs);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == set.label(i) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// Adds the CE gradient of one replay batch, scaled by `beta`, into grad.
void add_replay_ce(const nn::ModelState& model, const ReplayBatch& rb, const nn::RowMasks& masks,
                   double beta, Vector& grad) {
  const nn::Tape tape = nn::forward_tape(model, rb.inputs);
  Matrix dl;
  nn::cross_entropy_dlogits(tape, rb.labels, masks, beta, dl);
  grad += nn::backward(model, tape, dl);
}

void icarl_update_buffer(ReplayBuffer& buffer, const nn::ModelState& model,
                         const data::LabelledSet& data, int task_id) {
  std::set<int> old_classes;
  for (const BufferEntry& e : buffer.entries) old_classes.insert(e.label);
  std::map<int, std::vector<std::size_t>> fresh;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!old_classes.count(data.label(i))) fresh[data.label(i)].push_back(i);
  }
  const std::size_t total = old_classes.size() + fresh.size();
  if (total == 0) return;
  const std::size_t per_class = buffer.capacity / total;

  // Exemplars are stored in herding order, so truncation keeps the best ones.
  std::map<int, std::size_t> kept_count;
  std::vector<BufferEntry> kept;
  for (BufferEntry& e : buffer.entries) {
    if (kept_count[e.label]++ < per_class) kept.push_back(std::move(e));
  }
  buffer.entries = std::move(kept);

  for (const auto& [label, rows] : fresh) {
    const std::size_t take = std::min(per_class, rows.size());
    if (take == 0) continue;
    const Matrix feats = nn::forward(model, data.gather(rows)).penultimate;
    for (std::size_t pick : icarl_herding(feats, take)) {
      buffer.entries.push_back(BufferEntry{data.input(rows[pick]), label, {}, task_id});
    }
  }
  buffer.items_seen += data.size();
  buffer.tasks_seen += 1;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::ft: return "ft";
    case Strategy::ewc: return "ewc";
    case Strategy::er: return "er";
    case Strategy::agem: return "agem";
    case Strategy::gdumb: return "gdumb";
    case Strategy::der: return "der";
    case Strategy::derpp: return "derpp";
    case Strategy::icarl: return "icarl";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& s) {
  for (Strategy v : {Strategy::ft, Strategy::ewc, Strategy::er, Strategy::agem, Strategy::gdumb,
                     Strategy::der, Strategy::derpp, Strategy::icarl}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("unknown CL strategy '" + s + "'", "cl");
}

bool uses_buffer(Strategy s) {
  return s != Strategy::ft && s != Strategy::ewc;
}

void CLHyper::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1", "epochs");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1", "batch_size");
  if (!(opt.lr > 0.0)) throw ConfigError("lr must be positive", "lr");
  if (lambda_ewc < 0.0) throw ConfigError("lambda_ewc must be >= 0", "lambda_ewc");
  if (beta_er < 0.0) throw ConfigError("beta_er must be >= 0", "beta_er");
  if (alpha_der < 0.0) throw ConfigError("alpha_der must be >= 0", "alpha_der");
  if (beta_derpp < 0.0) throw ConfigError("beta_derpp must be >= 0", "beta_derpp");
  if (replay_batch < 0) throw ConfigError("replay_batch must be >= 0", "replay_batch");
  if (uses_buffer(strategy) && buffer_capacity == 0) {
    throw ConfigError("buffer_capacity must be >= 1 for " + to_string(strategy), "buffer_capacity");
  }
  if (patience && *patience < 1) throw ConfigError("patience must be >= 1", "patience");
}

const nn::ClassMask* MaskTable::for_task(int task_id) const {
  if (!active) return nullptr;
  if (task_id < 0 || static_cast<std::size_t>(task_id) >= per_task.size()) {
    throw ContractError("no class mask for task " + std::to_string(task_id));
  }
  return &per_task[static_cast<std::size_t>(task_id)];
}

MaskTable MaskTable::for_stream(const data::TaskStream& stream) {
  MaskTable t;
  if (stream.scenario != data::Scenario::task_il) return t;
  t.active = true;
  for (const data::Task& task : stream.tasks) {
    t.per_task.push_back(nn::ClassMask::of(stream.num_classes_total, task.classes()));
  }
  return t;
}

CLState initial_state(const CLHyper& hyper) {
  CLState s;
  s.buffer.capacity = uses_buffer(hyper.strategy) ? hyper.buffer_capacity : 0;
  s.buffer.policy = (hyper.strategy == Strategy::der || hyper.strategy == Strategy::derpp)
                        ? BufferPolicy::reservoir
                        : BufferPolicy::per_task_quota;
  return s;
}

Vector ewc_fisher_diag(const nn::ModelState& model, const data::LabelledSet& data,
                       const nn::ClassMask* mask) {
  if (data.empty()) throw ContractError("ewc_fisher_diag: empty data");
  Vector fisher = Vector::Zero(model.params.size());
  const nn::RowMasks masks = single(mask);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const std::size_t pos[1] = {i};
    const int label[1] = {data.label(i)};
    const nn::Tape tape = nn::forward_tape(model, data.gather(pos));
    Matrix dl;
    nn::cross_entropy_dlogits(tape, label, masks, 1.0, dl);
    fisher += nn::backward(model, tape, dl).cwiseAbs2();
  }
  return fisher / static_cast<double>(data.size());
}

nn::LossGrad ewc_penalty(const nn::ModelState& model, const EwcAnchor& anchor) {
  if (anchor.anchor_params.size() != model.params.size() ||
      anchor.fisher_diag.size() != model.params.size()) {
    throw ContractError("ewc_penalty: anchor length does not match the model");
  }
  const Vector diff = model.params - anchor.anchor_params;
  nn::LossGrad out;
  out.loss = anchor.lambda * anchor.fisher_diag.dot(diff.cwiseAbs2());
  out.grad = (2.0 * anchor.lambda) * anchor.fisher_diag.cwiseProduct(diff);
  return out;
}

Vector agem_project(const Vector& g, const Vector& g_ref) {
  if (g.size() != g_ref.size()) throw ContractError("agem_project: length mismatch");
  const double dot = g.dot(g_ref);
  if (dot >= 0.0) return g;
  const double denom = g_ref.squaredNorm();
  if (denom == 0.0) return g;
  return g - (dot / denom) * g_ref;
}

nn::LossGrad der_loss_terms(const nn::ModelState& model, const ReplayBatch& replay, double alpha,
                            double beta, const nn::RowMasks& masks) {
  if (!replay.has_logits()) throw ContractError("der_loss_terms: replay batch has no stored logits");
  const nn::Tape tape = nn::forward_tape(model, replay.inputs);
  if (replay.logits.cols() != tape.logits.cols()) {
    throw ContractError("der_loss_terms: stored logit width mismatch");
  }
  const double n = static_cast<double>(replay.size());
  const Matrix diff = tape.logits - replay.logits;
  nn::LossGrad out;
  out.loss = alpha * diff.squaredNorm() / n;
  Matrix dl = diff * (2.0 * alpha / n);
  if (beta > 0.0) {
    Matrix dce;
    out.loss += nn::cross_entropy_dlogits(tape, replay.labels, masks, beta, dce);
    dl += dce;
  }
  out.grad = nn::backward(model, tape, dl);
  return out;
}

nn::ModelState fit_plain(const nn::ModelState& init, const Matrix& inputs, std::span<const int> labels,
                         std::span<const int> task_ids, const MaskTable& masks,
                         const CLHyper& hyper, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(inputs.rows());
  if (n == 0) throw ContractError("fit_plain: empty training set");
  if (labels.size() != n || task_ids.size() != n) {
    throw ContractError("fit_plain: label / task-id count mismatch");
  }
  nn::ModelState model = init;
  Rng rng(seed);
  const auto b = static_cast<std::size_t>(hyper.batch_size);
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto order = rng.permutation(n);
    for (std::size_t s = 0; s < n; s += b) {
      const std::size_t e = std::min(n, s + b);
      Matrix x(static_cast<Eigen::Index>(e - s), inputs.cols());
      std::vector<int> y;
      nn::RowMasks rm;
      for (std::size_t i = s; i < e; ++i) {
        x.row(static_cast<Eigen::Index>(i - s)) = inputs.row(static_cast<Eigen::Index>(order[i]));
        y.push_back(labels[order[i]]);
        if (masks.active) rm.push_back(masks.for_task(task_ids[order[i]]));
      }
      const nn::Tape tape = nn::forward_tape(model, x);
      Matrix dl;
      nn::cross_entropy_dlogits(tape, y, rm, 1.0, dl);
      nn::optimizer_step(model, nn::backward(model, tape, dl), hyper.opt);
    }
  }
  return model;
}

nn::ModelState gdumb_train(const ReplayBuffer& buffer, const nn::ModelState& init,
                           const CLHyper& hyper, const MaskTable& masks, std::uint64_t seed) {
  if (buffer.empty()) throw ContractError("gdumb_train: empty buffer");
  const data::LabelledSet set = buffer_as_set(buffer);
  std::vector<int> tasks;
  tasks.reserve(buffer.size());
  for (const BufferEntry& e : buffer.entries) tasks.push_back(e.task_id);
  return fit_plain(init, set.inputs(), set.labels(), tasks, masks, hyper, seed);
}

std::vector<std::size_t> icarl_herding(const Matrix& features, std::size_t m) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (m < 1 || m > n) throw ContractError("icarl_herding: need 1 <= m <= n");
  const Eigen::RowVectorXd mu = features.colwise().mean();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(features.cols());
  std::vector<char> taken(n, 0);
  std::vector<std::size_t> out;
  out.reserve(m);
  for (std::size_t k = 1; k <= m; ++k) {
    std::size_t best = n;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (taken[i]) continue;
      const double d =
          (mu - (sum + features.row(static_cast<Eigen::Index>(i))) / static_cast<double>(k))
              .squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    taken[best] = 1;
    sum += features.row(static_cast<Eigen::Index>(best));
    out.push_back(best);
  }
  return out;
}

ClassExemplars icarl_class_means(const nn::ModelState& model, const ReplayBuffer& buffer) {
  ClassExemplars ex;
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
    by_class[buffer.entries[i].label].push_back(i);
  }
  const int h = model.arch.last_hidden_dim();
  ex.means.resize(static_cast<Eigen::Index>(by_class.size()), h);
  Eigen::Index row = 0;
  for (const auto& [label, slots] : by_class) {
    Matrix x(static_cast<Eigen::Index>(slots.size()), model.arch.input_dim);
    for (std::size_t i = 0; i < slots.size(); ++i) {
      x.row(static_cast<Eigen::Index>(i)) = buffer.entries[slots[i]].input.transpose();
    }
    ex.means.row(row++) = nn::forward(model, x).penultimate.colwise().mean();
    ex.classes.push_back(label);
    ex.exemplars.push_back(slots);
  }
  return ex;
}

std::vector<int> icarl_predict(const nn::ModelState& model, const Matrix& inputs,
                               const ClassExemplars& exemplars) {
  if (exemplars.empty()) throw ContractError("icarl_classify: no exemplars");
  const Matrix feats = nn::forward(model, inputs).penultimate;
  std::vector<int> out(static_cast<std::size_t>(feats.rows()));
  for (Eigen::Index r = 0; r < feats.rows(); ++r) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < exemplars.classes.size(); ++c) {
      const double d = (feats.row(r) - exemplars.means.row(static_cast<Eigen::Index>(c))).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    out[static_cast<std::size_t>(r)] = exemplars.classes[best];
  }
  return out;
}

int icarl_classify(const nn::ModelState& model, const Vector& input,
                   const ClassExemplars& exemplars) {
  Matrix row = input.transpose();
  return icarl_predict(model, row, exemplars).front();
}

TrainResult train_task(const CLHyper& hyper, const nn::ModelState& start,
                       const data::LabelledSet& data, int task_id, const CLState& state,
                       const TrainContext& ctx, std::uint64_t seed) {
  hyper.validate();
  static const MaskTable kNoMasks;
  const MaskTable& masks = ctx.masks ? *ctx.masks : kNoMasks;
  TrainResult res{start, state, 0};

  if (hyper.strategy == Strategy::gdumb) {
    if (!ctx.init) throw ContractError("train_task: gdumb needs an init checkpoint");
    buffer_insert_task_end(res.state.buffer, data, task_id, derive_seed(seed, {4}));
    if (res.state.buffer.empty()) throw ContractError("train_task: gdumb buffer is empty");
    res.model = gdumb_train(res.state.buffer, *ctx.init, hyper, masks, derive_seed(seed, {5}));
    res.epochs_run = hyper.epochs;
    return res;
  }
  if (data.empty()) throw ContractError("train_task: empty labelled set");
  if (state.ewc && state.ewc->anchor_params.size() != start.params.size()) {
    throw ContractError("train_task: EWC anchor length does not match the model");
  }

  Rng shuffle_rng(derive_seed(seed, {1}));
  Rng replay_rng(derive_seed(seed, {2}));
  Rng reservoir_rng(derive_seed(seed, {3}));
  const nn::ClassMask* cur_mask = masks.for_task(task_id);
  const nn::RowMasks cur_masks = single(cur_mask);
  const std::size_t n = data.size();
  const auto b = static_cast<std::size_t>(hyper.batch_size);
  const auto k = static_cast<std::size_t>(hyper.replay_batch > 0 ? hyper.replay_batch : hyper.batch_size);
  const Strategy s = hyper.strategy;
  nn::ModelState& model = res.model;
  ReplayBuffer& buffer = res.state.buffer;

  std::vector<std::size_t> der_eligible;
  if (s == Strategy::der || s == Strategy::derpp) {
    for (std::size_t i = 0; i < buffer.entries.size(); ++i) {
      if (buffer.entries[i].task_id < task_id) der_eligible.push_back(i);
    }
  }
  const double der_beta = s == Strategy::derpp ? hyper.beta_derpp : 0.0;

  const bool early_stop = hyper.patience && ctx.val && !ctx.val->empty();
  double best_acc = -1.0;
  nn::ModelState best_model;
  int stale = 0;

  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto order = shuffle_rng.permutation(n);
    for (std::size_t lo = 0; lo < n; lo += b) {
      const std::span<const std::size_t> pos(order.data() + lo, std::min(n, lo + b) - lo);
      std::vector<int> labels;
      labels.reserve(pos.size());
      for (std::size_t p : pos) labels.push_back(data.label(p));
      const nn::Tape tape = nn::forward_tape(model, data.gather(pos));
      Matrix dl;
      nn::cross_entropy_dlogits(tape, labels, cur_masks, 1.0, dl);
      Vector grad = nn::backward(model, tape, dl);

      switch (s) {
        case Strategy::ewc:
          if (state.ewc && state.ewc->lambda > 0.0) grad += ewc_penalty(model, *state.ewc).grad;
          break;
        case Strategy::er:
        case Strategy::icarl:
          if (!buffer.empty() && hyper.beta_er > 0.0) {
            const ReplayBatch rb = replay_batch(buffer, k, replay_rng);
            add_replay_ce(model, rb, replay_masks(masks, rb), hyper.beta_er, grad);
          }
          break;
        case Strategy::agem:
          if (!buffer.empty()) {
            const ReplayBatch rb = replay_batch(buffer, k, replay_rng);
            grad = agem_project(grad, nn::loss_and_grad(model, rb.inputs, rb.labels,
                                                        replay_masks(masks, rb))
                                          .grad);
          }
          break;
        case Strategy::der:
        case Strategy::derpp:
          if (!der_eligible.empty() && (hyper.alpha_der > 0.0 || der_beta > 0.0)) {
            const ReplayBatch rb = replay_batch(buffer, k, replay_rng, der_eligible);
            grad += der_loss_terms(model, rb, hyper.alpha_der, der_beta, replay_masks(masks, rb)).grad;
          }
          // The stream is visited once; later epochs would insert duplicates.
          if (epoch == 0) {
            for (std::size_t i = 0; i < pos.size(); ++i) {
              const auto row = static_cast<Eigen::Index>(i);
              buffer_reservoir_insert(buffer,
                                      BufferEntry{tape.activations.front().row(row).transpose(),
                                                  labels[i], tape.logits.row(row).transpose(),
                                                  task_id},
                                      reservoir_rng);
            }
          }
          break;
        case Strategy::ft:
        case Strategy::gdumb:
          break;
      }
      nn::optimizer_step(model, grad, hyper.opt);
    }
    ++res.epochs_run;

    if (early_stop) {
      const double acc = set_accuracy(model, *ctx.val, cur_mask);
      if (acc > best_acc) {
        best_acc = acc;
        best_model = model;
        stale = 0;
      } else if (++stale >= *hyper.patience) {
        break;
      }
    }
  }
  if (early_stop) model = best_model;

  switch (s) {
    case Strategy::er:
    case Strategy::agem:
      buffer_insert_task_end(buffer, data, task_id, derive_seed(seed, {4}));
      break;
    case Strategy::ewc:
      res.state.ewc = EwcAnchor{model.params, ewc_fisher_diag(model, data, cur_mask), hyper.lambda_ewc};
      break;
    case Strategy::icarl:
      icarl_update_buffer(buffer, model, data, task_id);
      res.state.exemplars = icarl_class_means(model, buffer);
      break;
    case Strategy::der:
    case Strategy::derpp:
      buffer.tasks_seen += 1;
      break;
    case Strategy::ft:
    case Strategy::gdumb:
      break;
  }
  return res;
}

}  // namespace acl::cl
