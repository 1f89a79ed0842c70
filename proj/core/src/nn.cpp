#include "acl/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "acl/error.hpp"
#include "acl/rng.hpp"

namespace acl::nn {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using MatMap = Eigen::Map<Matrix>;
using ConstRowVecMap = Eigen::Map<const Eigen::RowVectorXd>;
using RowVecMap = Eigen::Map<Eigen::RowVectorXd>;

ConstMatMap weights(const ModelState& m, std::size_t layer) {
  return ConstMatMap(m.params.data() + m.arch.weight_offset(layer),
                     m.arch.fan_in(layer), m.arch.fan_out(layer));
}

ConstRowVecMap bias(const ModelState& m, std::size_t layer) {
  return ConstRowVecMap(m.params.data() + m.arch.bias_offset(layer),
                        m.arch.fan_out(layer));
}

const ClassMask* mask_of_row(const RowMasks& masks, Eigen::Index row) {
  if (masks.empty()) return nullptr;
  if (masks.size() == 1) return masks.front();
  return masks[static_cast<std::size_t>(row)];
}

void check_masks(const RowMasks& masks, Eigen::Index rows, int num_classes) {
  if (masks.size() > 1 && masks.size() != static_cast<std::size_t>(rows)) {
    throw ContractError("row mask count " + std::to_string(masks.size()) +
                        " does not match batch size " + std::to_string(rows));
  }
  for (const ClassMask* m : masks) {
    if (m == nullptr) continue;
    if (m->num_classes() != num_classes) {
      throw ContractError("class mask width does not match num_classes");
    }
    if (m->count() == 0) throw ContractError("class mask allows no class");
  }
}

void check_inputs(const ModelState& model, const Matrix& inputs) {
  if (inputs.cols() != model.arch.input_dim) {
    throw ContractError("input width " + std::to_string(inputs.cols()) +
                        " does not match input_dim " +
                        std::to_string(model.arch.input_dim));
  }
  if (static_cast<std::size_t>(model.params.size()) != model.arch.param_count()) {
    throw ContractError("parameter vector length does not match architecture");
  }
}

void check_labels(std::span<const int> labels, Eigen::Index rows, int num_classes,
                  const RowMasks& masks) {
  if (labels.size() != static_cast<std::size_t>(rows)) {
    throw ContractError("label count does not match batch size");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || y >= num_classes) {
      throw ContractError("label " + std::to_string(y) + " outside class range");
    }
    const ClassMask* m = mask_of_row(masks, static_cast<Eigen::Index>(i));
    if (m != nullptr && !m->allows(y)) {
      throw ContractError("label " + std::to_string(y) + " is outside the class mask");
    }
  }
}

RowMasks as_row_masks(const ClassMask* mask) {
  return mask == nullptr ? RowMasks{} : RowMasks{mask};
}

}  // namespace

void Architecture::validate() const {
  if (input_dim < 1) throw ContractError("input_dim must be >= 1");
  if (num_classes < 2) throw ContractError("num_classes must be >= 2");
  for (int h : hidden_dims) {
    if (h < 1) throw ContractError("hidden widths must be >= 1");
  }
}

int Architecture::fan_in(std::size_t layer) const {
  return layer == 0 ? input_dim : hidden_dims[layer - 1];
}

int Architecture::fan_out(std::size_t layer) const {
  return layer == hidden_dims.size() ? num_classes : hidden_dims[layer];
}

int Architecture::last_hidden_dim() const {
  return hidden_dims.empty() ? input_dim : hidden_dims.back();
}

std::size_t Architecture::param_count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < num_layers(); ++l) {
    n += static_cast<std::size_t>(fan_in(l)) * fan_out(l) + fan_out(l);
  }
  return n;
}

std::size_t Architecture::weight_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t l = 0; l < layer; ++l) {
    off += static_cast<std::size_t>(fan_in(l)) * fan_out(l) + fan_out(l);
  }
  return off;
}

std::size_t Architecture::bias_offset(std::size_t layer) const {
  return weight_offset(layer) + static_cast<std::size_t>(fan_in(layer)) * fan_out(layer);
}

ClassMask ClassMask::all(int num_classes) {
  ClassMask m;
  m.allowed_.assign(static_cast<std::size_t>(num_classes), 1);
  return m;
}

ClassMask ClassMask::of(int num_classes, std::span<const int> classes) {
  ClassMask m;
  m.allowed_.assign(static_cast<std::size_t>(num_classes), 0);
  for (int c : classes) {
    if (c < 0 || c >= num_classes) throw ContractError("mask class out of range");
    m.allowed_[static_cast<std::size_t>(c)] = 1;
  }
  return m;
}

int ClassMask::count() const {
  return static_cast<int>(std::count(allowed_.begin(), allowed_.end(), char{1}));
}

std::vector<int> ClassMask::classes() const {
  std::vector<int> out;
  for (std::size_t c = 0; c < allowed_.size(); ++c) {
    if (allowed_[c]) out.push_back(static_cast<int>(c));
  }
  return out;
}

ModelState init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  ModelState m;
  m.arch = arch;
  m.rng_seed = seed;
  m.params = Vector::Zero(static_cast<Eigen::Index>(arch.param_count()));
  Rng rng(seed);
  for (std::size_t l = 0; l < arch.num_layers(); ++l) {
    const double limit = std::sqrt(6.0 / (arch.fan_in(l) + arch.fan_out(l)));
    const std::size_t off = arch.weight_offset(l);
    const std::size_t n = static_cast<std::size_t>(arch.fan_in(l)) * arch.fan_out(l);
    for (std::size_t i = 0; i < n; ++i) {
      m.params[static_cast<Eigen::Index>(off + i)] = (2.0 * rng.uniform01() - 1.0) * limit;
    }
  }
  return m;
}

Tape forward_tape(const ModelState& model, const Matrix& inputs) {
  check_inputs(model, inputs);
  const std::size_t layers = model.arch.num_layers();
  Tape tape;
  tape.activations.reserve(layers);
  tape.activations.push_back(inputs);
  for (std::size_t l = 0; l + 1 < layers; ++l) {
    Matrix z = tape.activations.back() * weights(model, l);
    z.rowwise() += bias(model, l);
    tape.activations.push_back(z.cwiseMax(0.0));
  }
  tape.logits = tape.activations.back() * weights(model, layers - 1);
  tape.logits.rowwise() += bias(model, layers - 1);
  return tape;
}

Vector backward(const ModelState& model, const Tape& tape, const Matrix& dlogits) {
  const std::size_t layers = model.arch.num_layers();
  Vector grad = Vector::Zero(model.params.size());
  Matrix delta = dlogits;
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& a = tape.activations[l];
    MatMap(grad.data() + model.arch.weight_offset(l), model.arch.fan_in(l),
           model.arch.fan_out(l))
        .noalias() = a.transpose() * delta;
    RowVecMap(grad.data() + model.arch.bias_offset(l), model.arch.fan_out(l)) =
        delta.colwise().sum();
    if (l > 0) {
      Matrix upstream = delta * weights(model, l).transpose();
      delta = upstream.cwiseProduct((a.array() > 0.0).cast<double>().matrix());
    }
  }
  return grad;
}

Matrix masked_softmax(const Matrix& logits, const RowMasks& masks) {
  check_masks(masks, logits.rows(), static_cast<int>(logits.cols()));
  Matrix probs = Matrix::Zero(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const ClassMask* m = mask_of_row(masks, i);
    double mx = -std::numeric_limits<double>::infinity();
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (m == nullptr || m->allows(static_cast<int>(c))) mx = std::max(mx, logits(i, c));
    }
    double total = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (m == nullptr || m->allows(static_cast<int>(c))) {
        const double e = std::exp(logits(i, c) - mx);
        probs(i, c) = e;
        total += e;
      }
    }
    probs.row(i) /= total;
  }
  return probs;
}

ForwardTrace forward(const ModelState& model, const Matrix& inputs, const ClassMask* mask) {
  return forward(model, inputs, as_row_masks(mask));
}

ForwardTrace forward(const ModelState& model, const Matrix& inputs, const RowMasks& masks) {
  Tape tape = forward_tape(model, inputs);
  check_masks(masks, inputs.rows(), model.arch.num_classes);
  ForwardTrace out;
  out.probs = masked_softmax(tape.logits, masks);
  out.logits = std::move(tape.logits);
  out.penultimate = std::move(tape.activations.back());
  return out;
}

double cross_entropy_dlogits(const Tape& tape, std::span<const int> labels,
                             const RowMasks& masks, double scale, Matrix& dlogits) {
  const Eigen::Index n = tape.logits.rows();
  check_labels(labels, n, static_cast<int>(tape.logits.cols()), masks);
  if (n == 0) {
    dlogits = Matrix::Zero(0, tape.logits.cols());
    return 0.0;
  }
  Matrix probs = masked_softmax(tape.logits, masks);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= std::log(std::max(probs(i, y), std::numeric_limits<double>::min()));
    probs(i, y) -= 1.0;
  }
  const double w = scale / static_cast<double>(n);
  dlogits = probs * w;
  return loss * w;
}

LossGrad loss_and_grad(const ModelState& model, const Matrix& inputs,
                       std::span<const int> labels, const ClassMask* mask) {
  return loss_and_grad(model, inputs, labels, as_row_masks(mask));
}

LossGrad loss_and_grad(const ModelState& model, const Matrix& inputs,
                       std::span<const int> labels, const RowMasks& masks) {
  if (inputs.rows() == 0) throw ContractError("loss_and_grad: empty batch");
  const Tape tape = forward_tape(model, inputs);
  Matrix dlogits;
  LossGrad out;
  out.loss = cross_entropy_dlogits(tape, labels, masks, 1.0, dlogits);
  out.grad = backward(model, tape, dlogits);
  return out;
}

Vector per_sample_output_grad(const ModelState& model, const Vector& input,
                              PseudoLabel mode, int label, const ClassMask* mask) {
  if (mode == PseudoLabel::true_label && label < 0) {
    throw ContractError("per_sample_output_grad: true-label mode needs a label");
  }
  Matrix row = input.transpose();
  const ForwardTrace trace = forward(model, row, mask);
  const int classes = model.arch.num_classes;
  const int y = mode == PseudoLabel::predicted ? argmax_rows(trace.probs).front() : label;
  if (y < 0 || y >= classes) throw ContractError("per_sample_output_grad: label out of range");
  const Eigen::Index h = trace.penultimate.cols();
  Vector out(h * classes + classes);
  for (int c = 0; c < classes; ++c) {
    const double d = trace.probs(0, c) - (c == y ? 1.0 : 0.0);
    for (Eigen::Index i = 0; i < h; ++i) out[i * classes + c] = trace.penultimate(0, i) * d;
    out[h * classes + c] = d;
  }
  return out;
}

Matrix output_grad_embeddings(const ModelState& model, const Matrix& inputs,
                              const ClassMask* mask) {
  const ForwardTrace trace = forward(model, inputs, mask);
  const int classes = model.arch.num_classes;
  const Eigen::Index h = trace.penultimate.cols();
  const std::vector<int> pred = argmax_rows(trace.probs);
  Matrix out(inputs.rows(), h * classes + classes);
  for (Eigen::Index r = 0; r < inputs.rows(); ++r) {
    for (int c = 0; c < classes; ++c) {
      const double d = trace.probs(r, c) - (c == pred[static_cast<std::size_t>(r)] ? 1.0 : 0.0);
      for (Eigen::Index i = 0; i < h; ++i) out(r, i * classes + c) = trace.penultimate(r, i) * d;
      out(r, h * classes + c) = d;
    }
  }
  return out;
}

void optimizer_step(ModelState& model, const Vector& grad, const OptimizerConfig& cfg) {
  if (grad.size() != model.params.size()) {
    throw ContractError("optimizer_step: gradient length mismatch");
  }
  if (!grad.allFinite()) throw ContractError("optimizer_step: non-finite gradient");
  switch (cfg.algo) {
    case OptimizerAlgo::sgd:
      model.params.noalias() -= cfg.lr * grad;
      break;
    case OptimizerAlgo::adam: {
      if (model.adam_m.size() != grad.size()) {
        model.adam_m = Vector::Zero(grad.size());
        model.adam_v = Vector::Zero(grad.size());
      }
      const double t = static_cast<double>(model.step + 1);
      model.adam_m = cfg.beta1 * model.adam_m + (1.0 - cfg.beta1) * grad;
      model.adam_v = cfg.beta2 * model.adam_v + (1.0 - cfg.beta2) * grad.cwiseAbs2();
      const double c1 = 1.0 - std::pow(cfg.beta1, t);
      const double c2 = 1.0 - std::pow(cfg.beta2, t);
      model.params.array() -= cfg.lr * (model.adam_m.array() / c1) /
                              ((model.adam_v.array() / c2).sqrt() + cfg.eps);
      break;
    }
  }
  ++model.step;
  if (!model.params.allFinite()) throw ContractError("optimizer_step: parameters diverged");
}

std::vector<int> argmax_rows(const Matrix& probs) {
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < probs.cols(); ++c) {
      if (probs(i, c) > probs(i, best)) best = c;
    }
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

}  // namespace acl::nn
