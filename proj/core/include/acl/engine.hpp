#pragma once

// The active continual learning loop, the supervised-CL baseline and the
// Indiv / MTL ceilings.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "acl/al.hpp"
#include "acl/cl.hpp"
#include "acl/data.hpp"
#include "acl/nn.hpp"

namespace acl::engine {

enum class LabellingMode { sequential, independent };

std::string to_string(LabellingMode m);
LabellingMode mode_from_string(const std::string& s);

struct RunConfig {
  cl::CLHyper cl;
  al::Strategy al = al::Strategy::random;
  LabellingMode mode = LabellingMode::sequential;
  data::Scenario scenario = data::Scenario::class_il;
  // Hidden widths; input_dim and num_classes are taken from the stream.
  std::vector<int> hidden_dims{100, 100};
  bool eval_every_round = true;
  // Annotation milestones as fractions of each task's initial pool.
  std::vector<double> milestones;

  void validate() const;
};

struct RoundPoint {
  std::size_t annotated = 0;
  double current_acc = 0.0;
  double seen_mean = 0.0;
  std::vector<double> per_task;  // tasks 0..t
};

// Accuracy matrix snapshotted when each task's annotation count first reaches
// `fraction` of its pool. Row t is missing (reached[t] == 0) when task t ended
// below the milestone.
struct MilestoneLog {
  double fraction = 0.0;
  std::vector<std::size_t> counts;
  std::vector<char> reached;
  std::vector<std::vector<double>> matrix;

  bool complete() const;
};

struct RunLog {
  std::vector<std::vector<double>> accuracy;               // row i: tasks 0..i
  std::vector<std::vector<RoundPoint>> rounds;             // per task, round 0 first
  std::vector<std::vector<std::vector<std::size_t>>> queries;  // per task, per round
  std::vector<std::size_t> budgets;
  std::vector<std::size_t> annotated;
  std::vector<std::size_t> pool_sizes;
  std::vector<MilestoneLog> milestones;
  std::map<std::string, std::string> config_echo;
  double wallclock_seconds = 0.0;  // not part of the serialized log

  std::size_t num_tasks() const { return accuracy.size(); }
};

// Per-task test accuracy of `model` on tasks 0..upto. Class-IL predicts over
// the classes seen up to `upto`, task-IL under each task's mask, domain-IL
// over the shared label set. iCaRL models classify with their exemplars.
std::vector<double> evaluate(const nn::ModelState& model, const data::TaskStream& stream, int upto,
                             const cl::ClassExemplars* exemplars = nullptr);

RunLog run_acl(data::TaskStream stream, const RunConfig& config, std::uint64_t seed);

// Whole pool pre-annotated, no AL rounds.
RunLog run_supervised_cl(data::TaskStream stream, const RunConfig& config, std::uint64_t seed);

struct CeilingLog {
  std::vector<double> accuracy;  // per task, stream order
  std::vector<std::vector<std::vector<std::size_t>>> queries;
  std::vector<std::size_t> annotated;
};

CeilingLog run_ceiling_indiv(data::TaskStream stream, al::Strategy strategy,
                             const RunConfig& config, std::uint64_t seed);
CeilingLog run_ceiling_mtl(data::TaskStream stream, al::Strategy strategy, const RunConfig& config,
                           std::uint64_t seed);

}  // namespace acl::engine
