#pragma once

// Dense ReLU MLP classifier with analytic backprop and first-order optimizers.
//
// Parameters live in one flat vector, layer-major: W1, b1, W2, b2, ... where
// each W is stored row-major with shape fan_in x fan_out, so a layer computes
// Z = X * W + b on a row-per-sample batch.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace acl::nn {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

enum class Activation { relu };

struct Architecture {
  int input_dim = 784;
  std::vector<int> hidden_dims{100, 100};
  int num_classes = 10;
  Activation activation = Activation::relu;

  // Throws ContractError unless input_dim >= 1, num_classes >= 2 and every
  // hidden width >= 1.
  void validate() const;

  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  int fan_in(std::size_t layer) const;
  int fan_out(std::size_t layer) const;
  int last_hidden_dim() const;
  std::size_t param_count() const;
  // Offset of W_layer in the flat vector; b_layer follows W immediately.
  std::size_t weight_offset(std::size_t layer) const;
  std::size_t bias_offset(std::size_t layer) const;

  friend bool operator==(const Architecture&, const Architecture&) = default;
};

// Set of classes allowed to receive probability mass.
class ClassMask {
 public:
  ClassMask() = default;
  static ClassMask all(int num_classes);
  static ClassMask of(int num_classes, std::span<const int> classes);

  int num_classes() const { return static_cast<int>(allowed_.size()); }
  bool allows(int c) const { return allowed_[static_cast<std::size_t>(c)] != 0; }
  int count() const;
  std::vector<int> classes() const;

  friend bool operator==(const ClassMask&, const ClassMask&) = default;

 private:
  std::vector<char> allowed_;
};

// Optional mask per batch row: empty means no masking, size 1 means one mask
// shared by every row, otherwise one entry per row (nullptr = unmasked row).
using RowMasks = std::vector<const ClassMask*>;

enum class OptimizerAlgo { sgd, adam };

struct OptimizerConfig {
  OptimizerAlgo algo = OptimizerAlgo::sgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct ModelState {
  Architecture arch;
  Vector params;
  Vector adam_m;
  Vector adam_v;
  std::int64_t step = 0;
  std::uint64_t rng_seed = 0;
};

struct ForwardTrace {
  Matrix logits;
  Matrix penultimate;
  Matrix probs;
};

// Intermediate values kept for backprop. activations[0] is the input batch,
// activations[l] the post-ReLU output of hidden layer l.
struct Tape {
  std::vector<Matrix> activations;
  Matrix logits;
};

struct LossGrad {
  double loss = 0.0;
  Vector grad;
};

// Biases zero, weights uniform in +-sqrt(6 / (fan_in + fan_out)).
ModelState init_model(const Architecture& arch, std::uint64_t seed);

Tape forward_tape(const ModelState& model, const Matrix& inputs);

// Gradient of a loss w.r.t. the parameters given dLoss/dlogits for the batch.
Vector backward(const ModelState& model, const Tape& tape, const Matrix& dlogits);

// Row-wise softmax restricted to each row's mask; masked classes get exactly 0.
Matrix masked_softmax(const Matrix& logits, const RowMasks& masks);

ForwardTrace forward(const ModelState& model, const Matrix& inputs,
                     const ClassMask* mask = nullptr);
ForwardTrace forward(const ModelState& model, const Matrix& inputs,
                     const RowMasks& masks);

// Mean masked-softmax cross-entropy and its gradient.
LossGrad loss_and_grad(const ModelState& model, const Matrix& inputs,
                       std::span<const int> labels, const ClassMask* mask = nullptr);
LossGrad loss_and_grad(const ModelState& model, const Matrix& inputs,
                       std::span<const int> labels, const RowMasks& masks);

// Cross-entropy value and dLoss/dlogits from an existing tape. `scale`
// multiplies both (the mean over the batch is already applied).
double cross_entropy_dlogits(const Tape& tape, std::span<const int> labels,
                             const RowMasks& masks, double scale, Matrix& dlogits);

enum class PseudoLabel { predicted, true_label };

// Gradient embedding of the output layer for one sample:
// (p - e_y) outer [h; 1], laid out like the output layer's slice of the flat
// parameter vector (W_L row-major h x C, then b_L).
Vector per_sample_output_grad(const ModelState& model, const Vector& input,
                              PseudoLabel mode, int label = -1,
                              const ClassMask* mask = nullptr);

// Batched variant: one embedding per row, predicted pseudo-labels.
Matrix output_grad_embeddings(const ModelState& model, const Matrix& inputs,
                              const ClassMask* mask = nullptr);

// In-place update. Rejects non-finite or mis-sized gradients.
void optimizer_step(ModelState& model, const Vector& grad, const OptimizerConfig& cfg);

// Argmax of each row of `probs`, lowest index on ties.
std::vector<int> argmax_rows(const Matrix& probs);

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace acl::nn
