#include "acl/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>
#include <thread>

#include "acl/error.hpp"
#include "acl/idx.hpp"
#include "acl/metrics.hpp"
#include "acl/rng.hpp"

namespace acl::harness {

namespace {

constexpr std::uint64_t kStreamTag = 0x73747265616dULL;
constexpr std::uint64_t kOrderTag = 0x6f72646572ULL;

// ---------------------------------------------------------------------------
// config parsing

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [key, _] : obj.items()) {
    if (!allowed.count(key)) {
      const std::string full = where.empty() ? key : where + "." + key;
      throw ConfigError("unknown configuration key '" + full + "'", full);
    }
  }
}

template <typename T>
T get_as(const json& obj, const std::string& key, const std::string& full) {
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("configuration key '" + full + "' has the wrong type", full);
  }
}

template <typename T>
void read_opt(const json& obj, const std::string& key, T& out, const std::string& where = {}) {
  if (obj.contains(key)) out = get_as<T>(obj, key, where.empty() ? key : where + "." + key);
}

std::vector<std::string> string_list(const json& obj, const std::string& key) {
  const json& v = obj.at(key);
  if (v.is_string()) return {v.get<std::string>()};
  return get_as<std::vector<std::string>>(obj, key, key);
}

void check_fraction(double f, const std::string& key) {
  if (!(f > 0.0 && f <= 1.0)) throw ConfigError(key + " must lie in (0, 1]", key);
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

void parse_hyper(const json& h, ExperimentConfig& cfg) {
  reject_unknown(h,
                 {"epochs", "batch_size", "lr", "optimizer", "beta1", "beta2", "eps", "lambda_ewc",
                  "beta_er", "alpha_der", "beta_derpp", "buffer_capacity", "replay_batch",
                  "patience", "hidden_dims"},
                 "hyper");
  cl::CLHyper& x = cfg.hyper;
  read_opt(h, "epochs", x.epochs, "hyper");
  read_opt(h, "batch_size", x.batch_size, "hyper");
  read_opt(h, "lr", x.opt.lr, "hyper");
  read_opt(h, "beta1", x.opt.beta1, "hyper");
  read_opt(h, "beta2", x.opt.beta2, "hyper");
  read_opt(h, "eps", x.opt.eps, "hyper");
  read_opt(h, "lambda_ewc", x.lambda_ewc, "hyper");
  read_opt(h, "beta_er", x.beta_er, "hyper");
  read_opt(h, "alpha_der", x.alpha_der, "hyper");
  read_opt(h, "beta_derpp", x.beta_derpp, "hyper");
  read_opt(h, "buffer_capacity", x.buffer_capacity, "hyper");
  read_opt(h, "replay_batch", x.replay_batch, "hyper");
  read_opt(h, "hidden_dims", cfg.hidden_dims, "hyper");
  if (h.contains("patience") && !h.at("patience").is_null()) {
    x.patience = get_as<int>(h, "patience", "hyper.patience");
  }
  if (h.contains("optimizer")) {
    const auto o = get_as<std::string>(h, "optimizer", "hyper.optimizer");
    if (o == "sgd") {
      x.opt.algo = nn::OptimizerAlgo::sgd;
    } else if (o == "adam") {
      x.opt.algo = nn::OptimizerAlgo::adam;
    } else {
      throw ConfigError("hyper.optimizer must be sgd or adam", "hyper.optimizer");
    }
  }
}

void check_order(const std::vector<std::size_t>& order, int tasks) {
  std::vector<std::size_t> s = order;
  std::sort(s.begin(), s.end());
  bool ok = static_cast<int>(s.size()) == tasks;
  for (std::size_t i = 0; ok && i < s.size(); ++i) ok = s[i] == i;
  if (!ok) {
    throw ConfigError("task_orders entries must be permutations of 0.." + std::to_string(tasks - 1),
                      "task_orders");
  }
}

std::string join_order(const std::vector<std::size_t>& order) {
  std::string s;
  for (std::size_t i = 0; i < order.size(); ++i) s += (i ? "-" : "") + std::to_string(order[i]);
  return s;
}

// ---------------------------------------------------------------------------
// formatting

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

// ---------------------------------------------------------------------------
// json <-> logs

json round_to_json(const engine::RoundPoint& p) {
  return json{{"annotated", p.annotated},
              {"current_acc", p.current_acc},
              {"seen_mean", p.seen_mean},
              {"per_task", p.per_task}};
}

engine::RoundPoint round_from_json(const json& j) {
  engine::RoundPoint p;
  p.annotated = j.at("annotated").get<std::size_t>();
  p.current_acc = j.at("current_acc").get<double>();
  p.seen_mean = j.at("seen_mean").get<double>();
  p.per_task = j.at("per_task").get<std::vector<double>>();
  return p;
}

json log_to_json(const engine::RunLog& log) {
  json rounds = json::array();
  for (const auto& task_rounds : log.rounds) {
    json tr = json::array();
    for (const auto& p : task_rounds) tr.push_back(round_to_json(p));
    rounds.push_back(std::move(tr));
  }
  json milestones = json::array();
  for (const auto& m : log.milestones) {
    std::vector<bool> reached(m.reached.begin(), m.reached.end());
    milestones.push_back(json{{"fraction", m.fraction},
                              {"counts", m.counts},
                              {"reached", reached},
                              {"matrix", m.matrix}});
  }
  json echo = json::object();
  for (const auto& [k, v] : log.config_echo) echo[k] = v;
  return json{{"accuracy_matrix", log.accuracy},
              {"rounds", std::move(rounds)},
              {"queries", log.queries},
              {"budgets", log.budgets},
              {"annotated", log.annotated},
              {"pool_sizes", log.pool_sizes},
              {"milestones", std::move(milestones)},
              {"config_echo", std::move(echo)}};
}

engine::RunLog log_from_json(const json& j) {
  engine::RunLog log;
  log.accuracy = j.at("accuracy_matrix").get<std::vector<std::vector<double>>>();
  for (const auto& tr : j.at("rounds")) {
    std::vector<engine::RoundPoint> pts;
    for (const auto& p : tr) pts.push_back(round_from_json(p));
    log.rounds.push_back(std::move(pts));
  }
  log.queries = j.at("queries").get<std::vector<std::vector<std::vector<std::size_t>>>>();
  log.budgets = j.at("budgets").get<std::vector<std::size_t>>();
  log.annotated = j.at("annotated").get<std::vector<std::size_t>>();
  log.pool_sizes = j.at("pool_sizes").get<std::vector<std::size_t>>();
  for (const auto& m : j.at("milestones")) {
    engine::MilestoneLog ml;
    ml.fraction = m.at("fraction").get<double>();
    ml.counts = m.at("counts").get<std::vector<std::size_t>>();
    for (bool b : m.at("reached").get<std::vector<bool>>()) ml.reached.push_back(b ? 1 : 0);
    ml.matrix = m.at("matrix").get<std::vector<std::vector<double>>>();
    log.milestones.push_back(std::move(ml));
  }
  for (const auto& [k, v] : j.at("config_echo").items()) log.config_echo[k] = v.get<std::string>();
  return log;
}

json ceiling_to_json(const engine::CeilingLog& c) {
  return json{{"accuracy", c.accuracy}, {"queries", c.queries}, {"annotated", c.annotated}};
}

engine::CeilingLog ceiling_from_json(const json& j) {
  engine::CeilingLog c;
  c.accuracy = j.at("accuracy").get<std::vector<double>>();
  c.queries = j.at("queries").get<std::vector<std::vector<std::vector<std::size_t>>>>();
  c.annotated = j.at("annotated").get<std::vector<std::size_t>>();
  return c;
}

bool is_ceiling(RunKind k) { return k == RunKind::indiv || k == RunKind::mtl; }

// Matching key for baselines: same stream and CL method, same seed and order.
std::string pair_key(const RunRecord& r) {
  return r.dataset() + "|" + r.scenario() + "|" + r.cl() + "|" + std::to_string(r.seed()) + "|" +
         r.task_order();
}

const RunRecord& find_baseline(const RunRecord& r, const std::vector<RunRecord>& baselines) {
  std::vector<const RunRecord*> full, other;
  for (const RunRecord& b : baselines) {
    if (!b.ok || is_ceiling(b.kind) || pair_key(b) != pair_key(r)) continue;
    (b.kind == RunKind::full_cl ? full : other).push_back(&b);
  }
  const std::vector<const RunRecord*>& pick = full.empty() ? other : full;
  const std::string what = "(dataset=" + r.dataset() + ", scenario=" + r.scenario() +
                           ", cl=" + r.cl() + ", seed=" + std::to_string(r.seed()) +
                           ", order=" + r.task_order() + ")";
  if (pick.empty()) throw ContractError("no baseline for " + what);
  if (pick.size() > 1) throw ContractError("ambiguous baseline for " + what);
  return *pick.front();
}

}  // namespace

// ---------------------------------------------------------------------------

std::string to_string(RunKind k) {
  switch (k) {
    case RunKind::acl: return "acl";
    case RunKind::full_cl: return "full_cl";
    case RunKind::indiv: return "indiv";
    case RunKind::mtl: return "mtl";
  }
  return "unknown";
}

RunKind kind_from_string(const std::string& s) {
  for (RunKind k : {RunKind::acl, RunKind::full_cl, RunKind::indiv, RunKind::mtl}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown run kind '" + s + "'", "ceilings");
}

bool is_out_of_scope_dataset(const std::string& name) {
  const std::string n = lower(name);
  for (const char* bad : {"cifar", "asc", "20news", "newsgroup", "roberta", "text"}) {
    if (n.find(bad) != std::string::npos) return true;
  }
  return false;
}

int ExperimentConfig::stream_task_count() const {
  if (dataset == "mnist_permuted") return num_tasks;
  if (dataset == "mnist_split") return 10 / classes_per_task;
  return synthetic.tasks;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config_json(doc);
}

ExperimentConfig parse_config_json(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config must be a JSON object");
  reject_unknown(doc,
                 {"dataset", "data_dir", "scenario", "num_tasks", "classes_per_task", "synthetic",
                  "val_fraction", "budget_fraction", "query_fraction", "cl", "al", "modes", "acl",
                  "full_cl", "ceilings", "seeds", "task_orders", "zip_orders", "hyper",
                  "eval_every_round", "milestones", "output_dir"},
                 "");
  ExperimentConfig cfg;
  if (!doc.contains("dataset")) throw ConfigError("missing required key 'dataset'", "dataset");
  cfg.dataset = get_as<std::string>(doc, "dataset", "dataset");
  if (is_out_of_scope_dataset(cfg.dataset)) {
    throw ConfigError("dataset '" + cfg.dataset +
                          "' is out of scope: text-classification and CIFAR experiments are not "
                          "reproduced by this harness",
                      "dataset");
  }
  if (cfg.dataset != "mnist_permuted" && cfg.dataset != "mnist_split" && cfg.dataset != "synthetic") {
    throw ConfigError("unknown dataset '" + cfg.dataset + "'", "dataset");
  }

  const char* env_dir = std::getenv("ACL_MNIST_DIR");
  cfg.data_dir = env_dir ? env_dir : "data/mnist";
  if (doc.contains("data_dir")) cfg.data_dir = get_as<std::string>(doc, "data_dir", "data_dir");

  cfg.scenario = cfg.dataset == "mnist_permuted" ? data::Scenario::domain_il : data::Scenario::class_il;
  if (doc.contains("scenario")) {
    cfg.scenario = data::scenario_from_string(get_as<std::string>(doc, "scenario", "scenario"));
  }
  if (cfg.dataset == "mnist_permuted" && cfg.scenario != data::Scenario::domain_il) {
    throw ConfigError("mnist_permuted is a domain-IL benchmark", "scenario");
  }
  if (cfg.dataset == "mnist_split" && cfg.scenario == data::Scenario::domain_il) {
    throw ConfigError("mnist_split supports class_il or task_il", "scenario");
  }

  read_opt(doc, "num_tasks", cfg.num_tasks);
  if (cfg.num_tasks < 1) throw ConfigError("num_tasks must be >= 1", "num_tasks");
  read_opt(doc, "classes_per_task", cfg.classes_per_task);
  if (cfg.classes_per_task < 1 || 10 % cfg.classes_per_task != 0) {
    throw ConfigError("classes_per_task must divide the 10 MNIST classes", "classes_per_task");
  }
  if (doc.contains("synthetic")) {
    const json& s = doc.at("synthetic");
    if (!s.is_object()) throw ConfigError("synthetic must be an object", "synthetic");
    reject_unknown(s, {"tasks", "classes_per_task", "dim", "samples_per_class", "test_per_class",
                       "cluster_separation"},
                   "synthetic");
    read_opt(s, "tasks", cfg.synthetic.tasks, "synthetic");
    read_opt(s, "classes_per_task", cfg.synthetic.classes_per_task, "synthetic");
    read_opt(s, "dim", cfg.synthetic.dim, "synthetic");
    read_opt(s, "samples_per_class", cfg.synthetic.samples_per_class, "synthetic");
    read_opt(s, "test_per_class", cfg.synthetic.test_per_class, "synthetic");
    read_opt(s, "cluster_separation", cfg.synthetic.cluster_separation, "synthetic");
  }

  read_opt(doc, "val_fraction", cfg.budget.val_fraction);
  read_opt(doc, "budget_fraction", cfg.budget.budget_fraction);
  read_opt(doc, "query_fraction", cfg.budget.query_fraction);
  check_fraction(cfg.budget.val_fraction, "val_fraction");
  check_fraction(cfg.budget.budget_fraction, "budget_fraction");
  check_fraction(cfg.budget.query_fraction, "query_fraction");

  read_opt(doc, "acl", cfg.acl);
  read_opt(doc, "full_cl", cfg.full_cl);
  if (doc.contains("cl")) {
    for (const auto& s : string_list(doc, "cl")) cfg.cl.push_back(cl::strategy_from_string(s));
  }
  if (doc.contains("al")) {
    for (const auto& s : string_list(doc, "al")) cfg.al.push_back(al::strategy_from_string(s));
  } else {
    cfg.al = {al::Strategy::random};
  }
  if (doc.contains("modes")) {
    cfg.modes.clear();
    for (const auto& s : string_list(doc, "modes")) cfg.modes.push_back(engine::mode_from_string(s));
  }
  if (doc.contains("ceilings")) {
    for (const auto& s : string_list(doc, "ceilings")) {
      const RunKind k = kind_from_string(s);
      if (!is_ceiling(k)) throw ConfigError("ceilings accepts indiv and mtl", "ceilings");
      cfg.ceilings.push_back(k);
    }
  }
  if ((cfg.acl || cfg.full_cl) && cfg.cl.empty()) {
    throw ConfigError("at least one CL strategy is required", "cl");
  }
  if (cfg.al.empty()) throw ConfigError("at least one AL strategy is required", "al");
  if (cfg.modes.empty()) throw ConfigError("at least one labelling mode is required", "modes");
  for (cl::Strategy s : cfg.cl) {
    if (s == cl::Strategy::icarl && cfg.scenario != data::Scenario::class_il) {
      throw ConfigError("icarl is a class-IL method", "cl");
    }
  }

  if (doc.contains("seeds")) cfg.seeds = get_as<std::vector<std::uint64_t>>(doc, "seeds", "seeds");
  if (cfg.seeds.empty()) throw ConfigError("seeds must not be empty", "seeds");

  const int T = cfg.stream_task_count();
  if (doc.contains("task_orders")) {
    const json& o = doc.at("task_orders");
    if (o.is_number_integer()) {
      const int count = o.get<int>();
      if (count < 1) throw ConfigError("task_orders count must be >= 1", "task_orders");
      for (int i = 0; i < count; ++i) {
        std::vector<std::size_t> order(static_cast<std::size_t>(T));
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (i > 0) {
          Rng rng(derive_seed(kOrderTag, {static_cast<std::uint64_t>(i)}));
          rng.shuffle(order);
        }
        cfg.task_orders.push_back(std::move(order));
      }
    } else {
      cfg.task_orders = get_as<std::vector<std::vector<std::size_t>>>(doc, "task_orders", "task_orders");
    }
  }
  if (cfg.task_orders.empty()) {
    std::vector<std::size_t> id(static_cast<std::size_t>(T));
    std::iota(id.begin(), id.end(), std::size_t{0});
    cfg.task_orders.push_back(std::move(id));
  }
  for (const auto& order : cfg.task_orders) check_order(order, T);
  read_opt(doc, "zip_orders", cfg.zip_orders);
  if (cfg.zip_orders && cfg.seeds.size() != cfg.task_orders.size()) {
    throw ConfigError("zip_orders needs as many task orders as seeds", "zip_orders");
  }

  if (doc.contains("hyper")) {
    if (!doc.at("hyper").is_object()) throw ConfigError("hyper must be an object", "hyper");
    parse_hyper(doc.at("hyper"), cfg);
  }
  cfg.hyper.validate();
  for (int h : cfg.hidden_dims) {
    if (h < 1) throw ConfigError("hidden widths must be >= 1", "hyper.hidden_dims");
  }
  read_opt(doc, "eval_every_round", cfg.eval_every_round);
  read_opt(doc, "milestones", cfg.milestones);
  for (double f : cfg.milestones) check_fraction(f, "milestones");
  if (doc.contains("output_dir")) cfg.output_dir = get_as<std::string>(doc, "output_dir", "output_dir");
  return cfg;
}

// ---------------------------------------------------------------------------

std::string fingerprint_of(const json& descriptor) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : descriptor.dump()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::vector<RunSpec> expand_runs(const ExperimentConfig& config) {
  json stream{{"val_fraction", config.budget.val_fraction},
              {"budget_fraction", config.budget.budget_fraction},
              {"query_fraction", config.budget.query_fraction}};
  if (config.dataset == "mnist_permuted") stream["num_tasks"] = config.num_tasks;
  if (config.dataset == "mnist_split") stream["classes_per_task"] = config.classes_per_task;
  if (config.dataset == "synthetic") {
    const auto& s = config.synthetic;
    stream["synthetic"] = json{{"tasks", s.tasks},
                               {"classes_per_task", s.classes_per_task},
                               {"dim", s.dim},
                               {"samples_per_class", s.samples_per_class},
                               {"test_per_class", s.test_per_class},
                               {"cluster_separation", s.cluster_separation}};
  }
  const cl::CLHyper& h = config.hyper;
  json hyper{{"epochs", h.epochs},
             {"batch_size", h.batch_size},
             {"lr", h.opt.lr},
             {"optimizer", h.opt.algo == nn::OptimizerAlgo::sgd ? "sgd" : "adam"},
             {"lambda_ewc", h.lambda_ewc},
             {"beta_er", h.beta_er},
             {"alpha_der", h.alpha_der},
             {"beta_derpp", h.beta_derpp},
             {"buffer_capacity", h.buffer_capacity},
             {"replay_batch", h.replay_batch},
             {"patience", h.patience ? json(*h.patience) : json(nullptr)},
             {"hidden_dims", config.hidden_dims}};
  if (h.opt.algo == nn::OptimizerAlgo::adam) {
    hyper["beta1"] = h.opt.beta1;
    hyper["beta2"] = h.opt.beta2;
    hyper["eps"] = h.opt.eps;
  }

  std::vector<std::pair<std::uint64_t, std::vector<std::size_t>>> pairs;
  if (config.zip_orders) {
    for (std::size_t i = 0; i < config.seeds.size(); ++i) pairs.emplace_back(config.seeds[i], config.task_orders[i]);
  } else {
    for (std::uint64_t s : config.seeds) {
      for (const auto& o : config.task_orders) pairs.emplace_back(s, o);
    }
  }

  std::vector<RunSpec> out;
  std::set<std::string> seen;
  auto add = [&](RunKind kind, const std::string& cl_name, const std::string& al_name,
                 const std::string& mode_name, RunSpec spec) {
    spec.kind = kind;
    spec.descriptor = json{{"kind", to_string(kind)},
                           {"dataset", config.dataset},
                           {"scenario", data::to_string(config.scenario)},
                           {"cl", cl_name},
                           {"al", al_name},
                           {"mode", mode_name},
                           {"seed", spec.seed},
                           {"task_order", spec.task_order},
                           {"stream", stream},
                           {"hyper", hyper},
                           {"eval_every_round", config.eval_every_round},
                           {"milestones", kind == RunKind::acl ? json(config.milestones) : json::array()}};
    spec.fingerprint = fingerprint_of(spec.descriptor);
    if (seen.insert(spec.fingerprint).second) out.push_back(std::move(spec));
  };

  for (const auto& [seed, order] : pairs) {
    RunSpec base;
    base.seed = seed;
    base.task_order = order;
    for (cl::Strategy c : config.cl) {
      if (config.acl) {
        for (al::Strategy a : config.al) {
          for (engine::LabellingMode m : config.modes) {
            RunSpec s = base;
            s.cl = c;
            s.al = a;
            s.mode = m;
            add(RunKind::acl, cl::to_string(c), al::to_string(a), engine::to_string(m), s);
          }
        }
      }
      if (config.full_cl) {
        RunSpec s = base;
        s.cl = c;
        add(RunKind::full_cl, cl::to_string(c), "none", "none", s);
      }
    }
    for (RunKind k : config.ceilings) {
      for (al::Strategy a : config.al) {
        RunSpec s = base;
        s.al = a;
        add(k, "none", al::to_string(a), "none", s);
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::string RunRecord::cl() const { return descriptor.value("cl", ""); }
std::string RunRecord::al() const { return descriptor.value("al", ""); }
std::string RunRecord::mode() const { return descriptor.value("mode", ""); }
std::uint64_t RunRecord::seed() const { return descriptor.value("seed", std::uint64_t{0}); }
std::string RunRecord::scenario() const { return descriptor.value("scenario", ""); }
std::string RunRecord::dataset() const { return descriptor.value("dataset", ""); }
std::string RunRecord::task_order() const {
  return join_order(descriptor.value("task_order", std::vector<std::size_t>{}));
}

json to_json(const RunRecord& r) {
  json j{{"descriptor", r.descriptor},
         {"fingerprint", r.fingerprint},
         {"kind", to_string(r.kind)},
         {"status", r.ok ? "ok" : "failed"},
         {"error", r.error}};
  if (is_ceiling(r.kind)) {
    j["ceiling"] = ceiling_to_json(r.ceiling);
  } else {
    j["log"] = log_to_json(r.log);
  }
  return j;
}

RunRecord record_from_json(const json& doc) {
  RunRecord r;
  try {
    r.descriptor = doc.at("descriptor");
    r.fingerprint = doc.at("fingerprint").get<std::string>();
    r.kind = kind_from_string(doc.at("kind").get<std::string>());
    r.ok = doc.at("status").get<std::string>() == "ok";
    r.error = doc.at("error").get<std::string>();
    if (is_ceiling(r.kind)) {
      r.ceiling = ceiling_from_json(doc.at("ceiling"));
    } else {
      r.log = log_from_json(doc.at("log"));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run log: ") + e.what());
  }
  return r;
}

std::string serialize(const RunRecord& r) { return to_json(r).dump(2) + "\n"; }

DataCache::DataCache(const ExperimentConfig& config) : config_(config) {
  if (config.dataset == "mnist_permuted" || config.dataset == "mnist_split") {
    train_ = data::load_idx(data::find_idx_file(config.data_dir, "train-images-idx3-ubyte"),
                            data::find_idx_file(config.data_dir, "train-labels-idx1-ubyte"));
    test_ = data::load_idx(data::find_idx_file(config.data_dir, "t10k-images-idx3-ubyte"),
                           data::find_idx_file(config.data_dir, "t10k-labels-idx1-ubyte"));
  }
}

data::TaskStream DataCache::stream_for(const RunSpec& spec) const {
  const std::uint64_t s = derive_seed(spec.seed, {kStreamTag});
  data::TaskStream stream;
  if (config_.dataset == "mnist_permuted") {
    stream = data::make_permuted_stream(train_, test_, config_.num_tasks, config_.budget, s);
  } else if (config_.dataset == "mnist_split") {
    std::vector<int> classes(10);
    std::iota(classes.begin(), classes.end(), 0);
    stream = data::make_split_stream(train_, test_, config_.classes_per_task, classes,
                                     config_.scenario, config_.budget, s);
  } else {
    stream = data::make_synthetic_stream(config_.synthetic, config_.scenario, config_.budget, s);
  }
  return data::reorder_tasks(stream, spec.task_order);
}

RunRecord execute(const ExperimentConfig& config, const RunSpec& spec, const DataCache& data) {
  RunRecord r;
  r.descriptor = spec.descriptor;
  r.fingerprint = spec.fingerprint;
  r.kind = spec.kind;
  try {
    engine::RunConfig rc;
    rc.cl = config.hyper;
    rc.cl.strategy = spec.cl;
    rc.al = spec.al;
    rc.mode = spec.mode;
    rc.scenario = config.scenario;
    rc.hidden_dims = config.hidden_dims;
    rc.eval_every_round = config.eval_every_round;
    if (spec.kind == RunKind::acl) rc.milestones = config.milestones;
    const auto start = std::chrono::steady_clock::now();
    data::TaskStream stream = data.stream_for(spec);
    switch (spec.kind) {
      case RunKind::acl: r.log = engine::run_acl(std::move(stream), rc, spec.seed); break;
      case RunKind::full_cl: r.log = engine::run_supervised_cl(std::move(stream), rc, spec.seed); break;
      case RunKind::indiv: r.ceiling = engine::run_ceiling_indiv(std::move(stream), spec.al, rc, spec.seed); break;
      case RunKind::mtl: r.ceiling = engine::run_ceiling_mtl(std::move(stream), spec.al, rc, spec.seed); break;
    }
    for (const auto& [k, v] : spec.descriptor.items()) r.log.config_echo[k] = v.dump();
    r.log.wallclock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
    r.log = {};
    r.ceiling = {};
  }
  return r;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed for " + path.string());
}

ExperimentResult run_experiment(const ExperimentConfig& config, int jobs,
                                std::optional<std::filesystem::path> out_dir) {
  const std::vector<RunSpec> specs = expand_runs(config);
  const DataCache data(config);
  ExperimentResult res;
  res.records.resize(specs.size());
  std::atomic<std::size_t> next{0};
  const int workers = std::max(1, std::min<int>(jobs, static_cast<int>(specs.size())));
  auto work = [&]() {
    for (std::size_t i = next++; i < specs.size(); i = next++) {
      res.records[i] = execute(config, specs[i], data);
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  std::sort(res.records.begin(), res.records.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.fingerprint < b.fingerprint; });
  for (const RunRecord& r : res.records) res.failures += r.ok ? 0 : 1;

  const std::filesystem::path dir = out_dir.value_or(config.output_dir);
  std::string timing = "fingerprint,seconds\n";
  for (const RunRecord& r : res.records) {
    write_file(dir / "runs" / (r.fingerprint + ".json"), serialize(r));
    timing += r.fingerprint + "," + fmt(r.log.wallclock_seconds) + "\n";
  }
  write_file(dir / "summary.csv", summary_csv(res.records));
  write_file(dir / "cells.csv", cells_csv(res.records));
  write_file(dir / "timing.csv", timing);
  return res;
}

std::vector<RunRecord> load_runs(const std::filesystem::path& dir) {
  std::filesystem::path runs = dir;
  if (std::filesystem::is_directory(dir / "runs")) runs = dir / "runs";
  if (!std::filesystem::is_directory(runs)) throw ConfigError("no run directory at " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(runs)) {
    if (e.path().extension() == ".json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<RunRecord> out;
  for (const auto& f : files) {
    std::ifstream in(f);
    try {
      out.push_back(record_from_json(json::parse(in)));
    } catch (const json::parse_error& e) {
      throw ConfigError("cannot parse " + f.string() + ": " + e.what());
    }
  }
  std::sort(out.begin(), out.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.fingerprint < b.fingerprint; });
  return out;
}

// ---------------------------------------------------------------------------
// tables

RunMetrics metrics_of(const RunRecord& r) {
  RunMetrics m;
  if (!r.ok) return m;
  if (is_ceiling(r.kind)) {
    if (!r.ceiling.accuracy.empty()) m.avg_acc = 100.0 * mean_of(r.ceiling.accuracy);
    return m;
  }
  if (r.log.accuracy.empty()) return m;
  m.avg_acc = 100.0 * metrics::avg_accuracy(r.log.accuracy);
  if (r.log.accuracy.size() >= 2) m.fr = 100.0 * metrics::forgetting_rate(r.log.accuracy);
  const bool curves = !r.log.rounds.empty() &&
                      std::none_of(r.log.rounds.begin(), r.log.rounds.end(),
                                   [](const auto& v) { return v.empty(); });
  if (curves) {
    m.lca = metrics::profile_point(r.log).lca;
    double seen = 0.0;
    for (const auto& tr : r.log.rounds) seen += metrics::lca_seen_tasks(tr);
    m.lca_seen = seen / static_cast<double>(r.log.rounds.size());
  }
  return m;
}

std::string summary_csv(const std::vector<RunRecord>& records) {
  std::string out = "fingerprint,kind,dataset,scenario,cl,al,mode,seed,task_order,status,avg_acc,fr,lca,lca_seen\n";
  for (const RunRecord& r : records) {
    const RunMetrics m = metrics_of(r);
    out += r.fingerprint + "," + to_string(r.kind) + "," + r.dataset() + "," + r.scenario() + "," +
           r.cl() + "," + r.al() + "," + r.mode() + "," + std::to_string(r.seed()) + "," +
           r.task_order() + "," + (r.ok ? "ok" : "failed") + "," + fmt(m.avg_acc) + "," +
           fmt(m.fr) + "," + fmt(m.lca) + "," + fmt(m.lca_seen) + "\n";
  }
  return out;
}

std::vector<Cell> cells(const std::vector<RunRecord>& records) {
  struct Acc {
    Cell cell;
    std::vector<double> acc, fr, lca;
  };
  std::map<std::string, Acc> groups;
  for (const RunRecord& r : records) {
    if (!r.ok) continue;
    const RunMetrics m = metrics_of(r);
    if (!m.avg_acc) continue;
    const std::string key = to_string(r.kind) + "|" + r.dataset() + "|" + r.scenario() + "|" +
                            r.cl() + "|" + r.al() + "|" + r.mode();
    Acc& g = groups[key];
    g.cell.kind = to_string(r.kind);
    g.cell.dataset = r.dataset();
    g.cell.scenario = r.scenario();
    g.cell.cl = r.cl();
    g.cell.al = r.al();
    g.cell.mode = r.mode();
    g.acc.push_back(*m.avg_acc);
    if (m.fr) g.fr.push_back(*m.fr);
    if (m.lca) g.lca.push_back(*m.lca);
  }
  std::vector<Cell> out;
  for (auto& [_, g] : groups) {
    Cell c = g.cell;
    c.n = g.acc.size();
    c.acc_mean = mean_of(g.acc);
    c.acc_std = sample_std(g.acc);
    if (g.fr.size() == c.n) {
      c.fr_mean = mean_of(g.fr);
      c.fr_std = sample_std(g.fr);
    }
    if (g.lca.size() == c.n) {
      c.lca_mean = mean_of(g.lca);
      c.lca_std = sample_std(g.lca);
    }
    out.push_back(std::move(c));
  }
  return out;
}

std::string cells_csv(const std::vector<RunRecord>& records) {
  std::string out = "kind,dataset,scenario,cl,al,mode,n,avg_acc_mean,avg_acc_std,fr_mean,fr_std,lca_mean,lca_std\n";
  for (const Cell& c : cells(records)) {
    out += c.kind + "," + c.dataset + "," + c.scenario + "," + c.cl + "," + c.al + "," + c.mode +
           "," + std::to_string(c.n) + "," + fmt(c.acc_mean) + "," + fmt(c.acc_std) + "," +
           fmt(c.fr_mean) + "," + fmt(c.fr_std) + "," + fmt(c.lca_mean) + "," + fmt(c.lca_std) + "\n";
  }
  return out;
}

std::string profile_csv(const std::vector<RunRecord>& records) {
  std::string rows;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> means;
  std::size_t count = 0;
  for (const RunRecord& r : records) {
    if (!r.ok || r.kind != RunKind::acl) continue;
    const RunMetrics m = metrics_of(r);
    if (!m.lca || !m.fr) continue;
    const metrics::ProfilePoint p = metrics::profile_point(r.log);
    rows += "acl," + r.mode() + "," + r.al() + "," + r.cl() + "," + fmt(p.lca) + "," +
            fmt(p.forgetting_rate) + "," + std::to_string(r.seed()) + "," + r.task_order() + "\n";
    auto& g = means["acl," + r.mode() + "," + r.al() + "," + r.cl()];
    g.first.push_back(p.lca);
    g.second.push_back(p.forgetting_rate);
    ++count;
  }
  if (count == 0) {
    throw ContractError("profile: no ACL runs with round curves (no LCA for supervised-CL records)");
  }
  std::string out = "method,mode,al,cl,lca,fr,seed,task_order\n" + rows;
  for (const auto& [key, g] : means) {
    out += key + "," + fmt(mean_of(g.first)) + "," + fmt(mean_of(g.second)) + ",mean,mean\n";
  }
  return out;
}

std::string relative_csv(const std::vector<RunRecord>& records,
                         const std::vector<RunRecord>& baselines) {
  struct G {
    std::vector<double> mine, base, diff;
  };
  std::map<std::string, G> groups;
  for (const RunRecord& r : records) {
    if (!r.ok || is_ceiling(r.kind)) continue;
    const RunRecord& b = find_baseline(r, baselines);
    if (b.fingerprint == r.fingerprint) continue;
    const double a = *metrics_of(r).avg_acc;
    const double c = *metrics_of(b).avg_acc;
    auto& g = groups[r.dataset() + "," + r.scenario() + "," + r.cl() + "," + r.al() + "," + r.mode()];
    g.mine.push_back(a);
    g.base.push_back(c);
    g.diff.push_back(a - c);
  }
  std::string out = "dataset,scenario,cl,al,mode,n,mean,baseline_mean,delta,delta_std\n";
  for (const auto& [key, g] : groups) {
    // Paired by (seed, order): std of the mean difference.
    const double se = sample_std(g.diff) / std::sqrt(static_cast<double>(g.diff.size()));
    out += key + "," + std::to_string(g.diff.size()) + "," + fmt(mean_of(g.mine)) + "," +
           fmt(mean_of(g.base)) + "," + fmt(mean_of(g.diff)) + "," + fmt(se) + "\n";
  }
  return out;
}

std::string nfr_csv(const std::vector<RunRecord>& records, const std::vector<RunRecord>& baselines,
                    const std::vector<double>& budgets) {
  struct G {
    std::vector<double> ratios;
    std::size_t missing = 0;
    std::size_t zero = 0;
  };
  std::map<std::string, std::map<double, G>> groups;
  for (const RunRecord& r : records) {
    if (!r.ok || r.kind != RunKind::acl || r.log.accuracy.size() < 2) continue;
    const RunRecord& b = find_baseline(r, baselines);
    const double base_fr = metrics::forgetting_rate(b.log.accuracy);
    auto& per_budget = groups[r.dataset() + "," + r.scenario() + "," + r.cl() + "," + r.al() + "," + r.mode()];
    for (double f : budgets) {
      G& g = per_budget[f];
      const auto it = std::find_if(r.log.milestones.begin(), r.log.milestones.end(),
                                   [&](const engine::MilestoneLog& m) { return std::abs(m.fraction - f) < 1e-12; });
      if (it == r.log.milestones.end() || !it->complete()) {
        ++g.missing;
      } else if (base_fr == 0.0) {
        ++g.zero;
      } else {
        g.ratios.push_back(metrics::normalized_fr(metrics::milestone_forgetting_rate(*it), base_fr));
      }
    }
  }
  std::string out = "dataset,scenario,cl,al,mode,budget,n,nfr_mean,nfr_std,flag\n";
  for (const auto& [key, per_budget] : groups) {
    for (const auto& [f, g] : per_budget) {
      std::string flag;
      if (g.missing) flag += "missing";
      if (g.zero) flag += std::string(flag.empty() ? "" : ";") + "zero_baseline";
      out += key + "," + fmt(f) + "," + std::to_string(g.ratios.size()) + "," +
             (g.ratios.empty() ? std::string() : fmt(mean_of(g.ratios))) + "," +
             (g.ratios.empty() ? std::string() : fmt(sample_std(g.ratios))) + "," + flag + "\n";
    }
  }
  return out;
}

std::string jaccard_csv(const std::vector<RunRecord>& records) {
  std::map<std::string, const RunRecord*> independent;
  auto key_of = [](const RunRecord& r) {
    return r.dataset() + "," + r.scenario() + "," + r.cl() + "," + r.al() + "," +
           std::to_string(r.seed()) + "," + r.task_order();
  };
  for (const RunRecord& r : records) {
    if (r.ok && r.kind == RunKind::acl && r.mode() == "independent") independent[key_of(r)] = &r;
  }
  std::string rows;
  std::map<std::string, std::vector<double>> means;
  for (const RunRecord& r : records) {
    if (!r.ok || r.kind != RunKind::acl || r.mode() != "sequential") continue;
    const auto it = independent.find(key_of(r));
    if (it == independent.end()) continue;
    const RunRecord& o = *it->second;
    for (std::size_t t = 0; t < r.log.queries.size() && t < o.log.queries.size(); ++t) {
      std::vector<std::size_t> a, b;
      for (const auto& q : r.log.queries[t]) a.insert(a.end(), q.begin(), q.end());
      for (const auto& q : o.log.queries[t]) b.insert(b.end(), q.begin(), q.end());
      const double j = metrics::jaccard(a, b);
      rows += key_of(r) + "," + std::to_string(t) + "," + fmt(j) + "\n";
      means[r.dataset() + "," + r.scenario() + "," + r.cl() + "," + r.al()].push_back(j);
    }
  }
  std::string out = "dataset,scenario,cl,al,seed,task_order,task,jaccard\n" + rows;
  for (const auto& [key, v] : means) out += key + ",mean,mean,mean," + fmt(mean_of(v)) + "\n";
  return out;
}

}  // namespace acl::harness
