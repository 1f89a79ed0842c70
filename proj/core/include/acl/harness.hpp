#pragma once

// Experiment configuration, sweep execution and result files.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "acl/al.hpp"
#include "acl/cl.hpp"
#include "acl/data.hpp"
#include "acl/engine.hpp"

namespace acl::harness {

using json = nlohmann::json;

enum class RunKind { acl, full_cl, indiv, mtl };

std::string to_string(RunKind k);
RunKind kind_from_string(const std::string& s);

struct ExperimentConfig {
  std::string dataset;  // mnist_permuted | mnist_split | synthetic
  std::filesystem::path data_dir;
  data::Scenario scenario = data::Scenario::class_il;
  int num_tasks = 10;         // mnist_permuted
  int classes_per_task = 2;   // mnist_split
  data::SyntheticSpec synthetic;
  data::BudgetRule budget;

  std::vector<cl::Strategy> cl;
  std::vector<al::Strategy> al;
  std::vector<engine::LabellingMode> modes{engine::LabellingMode::sequential};
  bool acl = true;          // run the ACL cross product
  bool full_cl = false;     // add one supervised-CL run per CL strategy
  std::vector<RunKind> ceilings;

  std::vector<std::uint64_t> seeds{1};
  std::vector<std::vector<std::size_t>> task_orders;  // filled with identity when empty
  bool zip_orders = false;  // pair seeds[i] with task_orders[i]

  cl::CLHyper hyper;
  std::vector<int> hidden_dims{100, 100};
  bool eval_every_round = true;
  std::vector<double> milestones;
  std::filesystem::path output_dir = "out";

  int stream_task_count() const;
};

// Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const std::filesystem::path& path);
ExperimentConfig parse_config_json(const json& doc);

struct RunSpec {
  RunKind kind = RunKind::acl;
  cl::Strategy cl = cl::Strategy::ft;
  al::Strategy al = al::Strategy::random;
  engine::LabellingMode mode = engine::LabellingMode::sequential;
  std::uint64_t seed = 0;
  std::vector<std::size_t> task_order;
  json descriptor;
  std::string fingerprint;
};

// FNV-1a 64 of the canonical (sorted-key, compact) descriptor text, as hex.
std::string fingerprint_of(const json& descriptor);

std::vector<RunSpec> expand_runs(const ExperimentConfig& config);

struct RunRecord {
  json descriptor;
  std::string fingerprint;
  RunKind kind = RunKind::acl;
  bool ok = true;
  std::string error;
  engine::RunLog log;
  engine::CeilingLog ceiling;

  std::string cl() const;
  std::string al() const;
  std::string mode() const;
  std::uint64_t seed() const;
  std::string task_order() const;  // e.g. "0-1-2-3-4"
  std::string scenario() const;
  std::string dataset() const;
};

json to_json(const RunRecord& r);
RunRecord record_from_json(const json& doc);
// Pretty-printed, sorted keys, trailing newline.
std::string serialize(const RunRecord& r);

// Loads MNIST (or builds the synthetic stream) and runs one spec.
class DataCache {
 public:
  explicit DataCache(const ExperimentConfig& config);
  data::TaskStream stream_for(const RunSpec& spec) const;

 private:
  const ExperimentConfig& config_;
  data::LabelledSet train_;
  data::LabelledSet test_;
};

RunRecord execute(const ExperimentConfig& config, const RunSpec& spec, const DataCache& data);

struct ExperimentResult {
  std::vector<RunRecord> records;  // sorted by fingerprint
  std::size_t failures = 0;
};

// Runs the cross product with up to `jobs` concurrent runs and writes
// runs/<fingerprint>.json, summary.csv, cells.csv and timing.csv under the
// output directory.
ExperimentResult run_experiment(const ExperimentConfig& config, int jobs = 1,
                                std::optional<std::filesystem::path> out_dir = std::nullopt);

std::vector<RunRecord> load_runs(const std::filesystem::path& dir);

struct RunMetrics {
  std::optional<double> avg_acc;  // percent
  std::optional<double> fr;       // percent
  std::optional<double> lca;      // fraction
  std::optional<double> lca_seen;
};

RunMetrics metrics_of(const RunRecord& r);

struct Cell {
  std::string kind, dataset, scenario, cl, al, mode;
  std::size_t n = 0;
  double acc_mean = 0.0, acc_std = 0.0;
  std::optional<double> fr_mean, fr_std, lca_mean, lca_std;
};

// Mean and sample std per (kind, dataset, scenario, cl, al, mode), ok runs only.
std::vector<Cell> cells(const std::vector<RunRecord>& records);

// Per-run summary (accuracies and FR in percent, LCA as a fraction).
std::string summary_csv(const std::vector<RunRecord>& records);
std::string cells_csv(const std::vector<RunRecord>& records);
std::string profile_csv(const std::vector<RunRecord>& records);
std::string relative_csv(const std::vector<RunRecord>& records,
                         const std::vector<RunRecord>& baselines);
std::string nfr_csv(const std::vector<RunRecord>& records, const std::vector<RunRecord>& baselines,
                    const std::vector<double>& budgets);
std::string jaccard_csv(const std::vector<RunRecord>& records);

void write_file(const std::filesystem::path& path, const std::string& text);

// Dataset names the harness recognizes but refuses as out of scope.
bool is_out_of_scope_dataset(const std::string& name);

}  // namespace acl::harness
