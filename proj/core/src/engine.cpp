#include "acl/engine.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include "acl/error.hpp"
#include "acl/rng.hpp"

namespace acl::engine {

namespace {

using Matrix = nn::Matrix;

enum SeedTag : std::uint64_t {
  kInit = 1,
  kProxy = 2,
  kQuery = 3,
  kFinal = 4,
  kMilestone = 5,
  kCeiling = 6,
};

constexpr Eigen::Index kEvalChunk = 4096;

nn::Architecture arch_for(const data::TaskStream& stream, const RunConfig& config) {
  nn::Architecture arch;
  arch.input_dim = static_cast<int>(stream.tasks.front().dim());
  arch.hidden_dims = config.hidden_dims;
  arch.num_classes = stream.num_classes_total;
  arch.validate();
  return arch;
}

void check_run(const data::TaskStream& stream, const RunConfig& config) {
  config.validate();
  if (stream.tasks.empty()) throw ConfigError("stream has no tasks");
  stream.validate();
  if (stream.scenario != config.scenario) {
    throw ConfigError("config scenario " + data::to_string(config.scenario) +
                          " does not match stream scenario " + data::to_string(stream.scenario),
                      "scenario");
  }
  if (config.cl.strategy == cl::Strategy::icarl && config.scenario != data::Scenario::class_il) {
    throw ConfigError("icarl is a class-IL method", "cl");
  }
}

double accuracy_of(const std::vector<int>& pred, std::span<const int> labels) {
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i] ? 1 : 0;
  return pred.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(pred.size());
}

std::vector<int> predict(const nn::ModelState& model, const data::LabelledSet& set,
                         const nn::ClassMask* mask, const cl::ClassExemplars* exemplars) {
  std::vector<int> out;
  out.reserve(set.size());
  const auto n = static_cast<Eigen::Index>(set.size());
  std::vector<std::size_t> pos;
  for (Eigen::Index lo = 0; lo < n; lo += kEvalChunk) {
    const Eigen::Index len = std::min(kEvalChunk, n - lo);
    pos.resize(static_cast<std::size_t>(len));
    std::iota(pos.begin(), pos.end(), static_cast<std::size_t>(lo));
    const Matrix x = set.gather(pos);
    const std::vector<int> part = exemplars ? cl::icarl_predict(model, x, *exemplars)
                                            : nn::argmax_rows(nn::forward(model, x, mask).probs);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

nn::ClassMask classes_up_to(const data::TaskStream& stream, int upto) {
  std::vector<int> seen;
  for (int j = 0; j <= upto; ++j) {
    const auto& c = stream.tasks[static_cast<std::size_t>(j)].classes();
    seen.insert(seen.end(), c.begin(), c.end());
  }
  return nn::ClassMask::of(stream.num_classes_total, seen);
}

const cl::ClassExemplars* exemplars_of(const RunConfig& config, const cl::TrainResult& r) {
  if (config.cl.strategy != cl::Strategy::icarl || r.state.exemplars.empty()) return nullptr;
  return &r.state.exemplars;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

RunLog run_impl(data::TaskStream stream, const RunConfig& config, std::uint64_t seed,
                bool supervised) {
  const auto t0 = std::chrono::steady_clock::now();
  check_run(stream, config);
  const nn::Architecture arch = arch_for(stream, config);
  const cl::MaskTable masks = cl::MaskTable::for_stream(stream);
  const nn::ModelState theta0 = nn::init_model(arch, derive_seed(seed, {kInit}));
  const std::size_t T = stream.size();

  RunLog log;
  log.rounds.resize(T);
  log.queries.resize(T);
  if (!supervised) {
    for (double f : config.milestones) {
      MilestoneLog m;
      m.fraction = f;
      for (const data::Task& task : stream.tasks) {
        m.counts.push_back(data::budget_for(task.initial_pool_size(), f));
      }
      m.reached.assign(T, 0);
      m.matrix.resize(T);
      log.milestones.push_back(std::move(m));
    }
  }

  nn::ModelState prev = theta0;
  cl::CLState state = cl::initial_state(config.cl);
  cl::ClassExemplars prev_exemplars;

  for (std::size_t ti = 0; ti < T; ++ti) {
    const int t = static_cast<int>(ti);
    data::Task& task = stream.tasks[ti];
    if (supervised) task.reveal_all();
    log.budgets.push_back(task.budget_total());
    log.pool_sizes.push_back(task.initial_pool_size());

    const cl::TrainContext ctx{&masks, &theta0, &task.val()};
    auto train_on = [&](const nn::ModelState& from, std::uint64_t s) {
      if (task.labelled().empty()) return cl::TrainResult{from, state, 0};
      return cl::train_task(config.cl, from, task.labelled(), t, state, ctx, s);
    };

    if (!supervised) {
      const nn::ModelState& proxy_start =
          config.mode == LabellingMode::sequential ? prev : theta0;
      const nn::ClassMask* query_mask = masks.for_task(t);
      cl::TrainResult proxy = train_on(proxy_start, derive_seed(seed, {kProxy, ti, 0}));

      auto after_round = [&]() {
        if (config.eval_every_round) {
          RoundPoint p;
          p.annotated = task.annotated();
          p.per_task = evaluate(proxy.model, stream, t, exemplars_of(config, proxy));
          p.current_acc = p.per_task.back();
          p.seen_mean = mean(p.per_task);
          log.rounds[ti].push_back(std::move(p));
        }
        for (std::size_t mi = 0; mi < log.milestones.size(); ++mi) {
          MilestoneLog& m = log.milestones[mi];
          if (m.reached[ti] || task.annotated() < m.counts[ti]) continue;
          m.reached[ti] = 1;
          if (config.mode == LabellingMode::sequential) {
            m.matrix[ti] = evaluate(proxy.model, stream, t, exemplars_of(config, proxy));
          } else {
            const cl::TrainResult snap = train_on(prev, derive_seed(seed, {kMilestone, ti, mi}));
            m.matrix[ti] = evaluate(snap.model, stream, t, exemplars_of(config, snap));
          }
        }
      };

      after_round();
      std::uint64_t round = 0;
      while (task.budget_remaining() > 0 && task.pool_size() > 0) {
        ++round;
        const std::size_t k =
            std::min({task.query_size(), task.budget_remaining(), task.pool_size()});
        al::QueryBatch q = al::query(config.al, proxy.model, task, k,
                                     derive_seed(seed, {kQuery, ti, round}), query_mask);
        task.annotate(q.pool_indices);
        log.queries[ti].push_back(std::move(q.pool_indices));
        proxy = train_on(proxy_start, derive_seed(seed, {kProxy, ti, round}));
        after_round();
      }
    }

    cl::TrainResult final = train_on(prev, derive_seed(seed, {kFinal, ti}));
    const cl::ClassExemplars* ex = exemplars_of(config, final);
    log.accuracy.push_back(evaluate(final.model, stream, t, ex));
    log.annotated.push_back(supervised ? 0 : task.annotated());
    prev = std::move(final.model);
    state = std::move(final.state);
  }
  log.wallclock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return log;
}

// Shared by Indiv (one task per call) and MTL (all tasks in one call).
void ceiling_loop(data::TaskStream& stream, const std::vector<std::size_t>& members,
                  al::Strategy strategy, const RunConfig& config, const nn::Architecture& arch,
                  const cl::MaskTable& masks, std::uint64_t base, CeilingLog& log) {
  const nn::ModelState theta0 = nn::init_model(arch, derive_seed(base, {kInit}));
  nn::ModelState model = theta0;

  auto labelled_union = [&](Matrix& x, std::vector<int>& y, std::vector<int>& tids) {
    std::size_t rows = 0;
    for (std::size_t m : members) rows += stream.tasks[m].labelled().size();
    x.resize(static_cast<Eigen::Index>(rows), arch.input_dim);
    y.clear();
    tids.clear();
    Eigen::Index at = 0;
    for (std::size_t m : members) {
      const data::LabelledSet& l = stream.tasks[m].labelled();
      if (l.empty()) continue;
      x.middleRows(at, static_cast<Eigen::Index>(l.size())) = l.inputs();
      at += static_cast<Eigen::Index>(l.size());
      y.insert(y.end(), l.labels().begin(), l.labels().end());
      tids.insert(tids.end(), l.size(), static_cast<int>(m));
    }
  };

  std::uint64_t round = 0;
  for (;;) {
    std::vector<std::size_t> eligible;
    for (std::size_t m : members) {
      const data::Task& task = stream.tasks[m];
      if (task.budget_remaining() > 0 && task.pool_size() > 0) eligible.push_back(m);
    }
    if (eligible.empty()) break;
    ++round;

    std::size_t k = 0;
    std::map<std::size_t, std::size_t> room;
    for (std::size_t m : eligible) {
      const data::Task& task = stream.tasks[m];
      k += std::min({task.query_size(), task.budget_remaining(), task.pool_size()});
      room[m] = std::min(task.budget_remaining(), task.pool_size());
    }

    // Candidates: (task, pool id), task-major then ascending pool id.
    std::vector<std::pair<std::size_t, std::size_t>> cand;
    for (std::size_t m : eligible) {
      for (std::size_t id : stream.tasks[m].pool_ids()) cand.emplace_back(m, id);
    }
    Matrix lx;
    std::vector<int> ly, ltid;
    labelled_union(lx, ly, ltid);

    std::map<std::size_t, std::vector<std::size_t>> accepted;
    std::size_t taken = 0;
    std::uint64_t attempt = 0;
    while (taken < k && !cand.empty()) {
      Matrix cx(static_cast<Eigen::Index>(cand.size()), arch.input_dim);
      nn::RowMasks rm;
      for (std::size_t lo = 0; lo < cand.size();) {
        std::size_t hi = lo;
        std::vector<std::size_t> ids;
        while (hi < cand.size() && cand[hi].first == cand[lo].first) ids.push_back(cand[hi++].second);
        cx.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(ids.size())) =
            stream.tasks[cand[lo].first].pool_inputs(ids);
        lo = hi;
      }
      if (masks.active) {
        for (const auto& c : cand) rm.push_back(masks.for_task(static_cast<int>(c.first)));
      }
      const std::size_t want = std::min(k - taken, cand.size());
      const auto picks = al::select_candidates(strategy, model, cx, rm, lx, want,
                                               derive_seed(base, {kQuery, round, attempt++}));
      std::vector<char> drop(cand.size(), 0);
      for (std::size_t p : picks) {
        drop[p] = 1;
        const auto [m, id] = cand[p];
        if (accepted[m].size() < room[m] && taken < k) {
          accepted[m].push_back(id);
          ++taken;
        }
      }
      std::vector<std::pair<std::size_t, std::size_t>> rest;
      for (std::size_t i = 0; i < cand.size(); ++i) {
        if (!drop[i] && accepted[cand[i].first].size() < room[cand[i].first]) rest.push_back(cand[i]);
      }
      cand = std::move(rest);
    }

    for (std::size_t m : eligible) {
      auto& ids = accepted[m];
      stream.tasks[m].annotate(ids);
      log.queries[m].push_back(ids);
    }
    labelled_union(lx, ly, ltid);
    model = cl::fit_plain(theta0, lx, ly, ltid, masks, config.cl, derive_seed(base, {kProxy, round}));
  }

  nn::ClassMask scope;
  std::vector<int> scope_classes;
  for (std::size_t m : members) {
    const auto& c = stream.tasks[m].classes();
    scope_classes.insert(scope_classes.end(), c.begin(), c.end());
  }
  scope = nn::ClassMask::of(stream.num_classes_total, scope_classes);
  for (std::size_t m : members) {
    const data::Task& task = stream.tasks[m];
    const nn::ClassMask* mask = nullptr;
    if (stream.scenario == data::Scenario::class_il) mask = &scope;
    if (stream.scenario == data::Scenario::task_il) mask = masks.for_task(static_cast<int>(m));
    log.accuracy[m] = accuracy_of(predict(model, task.test(), mask, nullptr), task.test().labels());
    log.annotated[m] = task.annotated();
  }
}

CeilingLog ceiling(data::TaskStream& stream, const RunConfig& config) {
  if (stream.tasks.empty()) throw ConfigError("stream has no tasks");
  stream.validate();
  config.validate();
  CeilingLog log;
  log.accuracy.assign(stream.size(), 0.0);
  log.queries.resize(stream.size());
  log.annotated.assign(stream.size(), 0);
  return log;
}

}  // namespace

std::string to_string(LabellingMode m) {
  return m == LabellingMode::sequential ? "sequential" : "independent";
}

LabellingMode mode_from_string(const std::string& s) {
  if (s == "sequential") return LabellingMode::sequential;
  if (s == "independent") return LabellingMode::independent;
  throw ConfigError("unknown labelling mode '" + s + "'", "modes");
}

void RunConfig::validate() const {
  cl.validate();
  for (int h : hidden_dims) {
    if (h < 1) throw ConfigError("hidden widths must be >= 1", "hidden_dims");
  }
  for (double f : milestones) {
    if (!(f > 0.0 && f <= 1.0)) throw ConfigError("milestones must lie in (0, 1]", "milestones");
  }
}

bool MilestoneLog::complete() const {
  return std::all_of(reached.begin(), reached.end(), [](char c) { return c != 0; });
}

std::vector<double> evaluate(const nn::ModelState& model, const data::TaskStream& stream, int upto,
                             const cl::ClassExemplars* exemplars) {
  if (upto < 0 || static_cast<std::size_t>(upto) >= stream.size()) {
    throw ContractError("evaluate: task index out of range");
  }
  const cl::MaskTable masks = cl::MaskTable::for_stream(stream);
  const nn::ClassMask seen = classes_up_to(stream, upto);
  std::vector<double> out;
  for (int j = 0; j <= upto; ++j) {
    const data::Task& task = stream.tasks[static_cast<std::size_t>(j)];
    const nn::ClassMask* mask = nullptr;
    if (stream.scenario == data::Scenario::class_il) mask = &seen;
    if (stream.scenario == data::Scenario::task_il) mask = masks.for_task(j);
    out.push_back(accuracy_of(predict(model, task.test(), mask, exemplars), task.test().labels()));
  }
  return out;
}

RunLog run_acl(data::TaskStream stream, const RunConfig& config, std::uint64_t seed) {
  return run_impl(std::move(stream), config, seed, false);
}

RunLog run_supervised_cl(data::TaskStream stream, const RunConfig& config, std::uint64_t seed) {
  return run_impl(std::move(stream), config, seed, true);
}

CeilingLog run_ceiling_indiv(data::TaskStream stream, al::Strategy strategy,
                             const RunConfig& config, std::uint64_t seed) {
  CeilingLog log = ceiling(stream, config);
  const nn::Architecture arch = arch_for(stream, config);
  const cl::MaskTable masks = cl::MaskTable::for_stream(stream);
  for (std::size_t m = 0; m < stream.size(); ++m) {
    const auto origin = static_cast<std::uint64_t>(stream.tasks[m].origin());
    ceiling_loop(stream, {m}, strategy, config, arch, masks, derive_seed(seed, {kCeiling, origin}), log);
  }
  return log;
}

CeilingLog run_ceiling_mtl(data::TaskStream stream, al::Strategy strategy, const RunConfig& config,
                           std::uint64_t seed) {
  CeilingLog log = ceiling(stream, config);
  const nn::Architecture arch = arch_for(stream, config);
  const cl::MaskTable masks = cl::MaskTable::for_stream(stream);
  std::vector<std::size_t> all(stream.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  // Seeded like the Indiv run of task 0, so a one-task MTL run equals Indiv.
  ceiling_loop(stream, all, strategy, config, arch, masks, derive_seed(seed, {kCeiling, 0}), log);
  return log;
}

}  // namespace acl::engine
