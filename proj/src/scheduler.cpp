#include "evoserve/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

namespace evoserve {

namespace {

using Clock = std::chrono::steady_clock;

struct Var {
  std::string model, gpu;
  int tp = 1;
  long batch = 1;
  int bound = 0;
  double latency = 0;
};

// Variables in canonical order: models by descending weight (ties by name),
// then gpu name, tp, batch ascending. Everything downstream, including the
// oracle, enumerates in this order so tie-breaking is reproducible.
struct VarSpace {
  std::vector<Var> vars;
  std::vector<std::string> model_order;
  std::map<std::string, long> demand;
  std::map<std::string, double> weights;
  std::map<std::string, std::pair<size_t, size_t>> span;  // [begin, end) per model
  std::vector<long> suffix_cover;   // coverage still reachable within the model
  std::vector<double> suffix_min_lat;
  std::map<std::string, double> min_latency;
};

int tp_floor(const ModelSpec& m, const SchedulerConfig& cfg) {
  int floor = 1;
  const double w = weight_size(m);
  for (const auto& r : cfg.tp_floor_rules)
    if (w >= r.min_weight_bytes) floor = std::max(floor, r.min_tp);
  return floor;
}

std::vector<std::string> models_by_weight_desc(const Catalog& cat,
                                               const WorkloadSnapshot& wl) {
  std::vector<std::string> names;
  for (const auto& [name, dem] : wl.demand)
    if (dem.batch_demand > 0) names.push_back(name);
  std::sort(names.begin(), names.end(), [&](const auto& a, const auto& b) {
    const double wa = weight_size(cat.model(a)), wb = weight_size(cat.model(b));
    if (wa != wb) return wa > wb;
    return a < b;
  });
  return names;
}

VarSpace build_vars(const SchedulingInstance& inst, const SchedulerConfig& cfg,
                    AnalyticCostModel& cost) {
  const Catalog& cat = cost.catalog();
  VarSpace vs;
  vs.model_order = models_by_weight_desc(cat, inst.workload);
  vs.weights = secondary_weights(cat, inst.workload);
  int loose = 0;
  for (const auto& [g, n] : inst.cluster.available) loose = std::max(loose, n);

  std::vector<std::string> gpu_names;
  for (const auto& g : cat.gpus)
    if (inst.cluster.available_of(g.name) > 0) gpu_names.push_back(g.name);
  std::sort(gpu_names.begin(), gpu_names.end());

  for (const auto& name : vs.model_order) {
    const auto& dem = inst.workload.demand.at(name);
    const auto& model = cat.model(name);
    vs.demand[name] = dem.batch_demand;
    const auto batches = batch_candidates(dem, cfg);
    const int floor = tp_floor(model, cfg);
    const size_t begin = vs.vars.size();
    for (const auto& gname : gpu_names) {
      const auto& gpu = cat.gpu(gname);
      for (int tp : tp_options(gpu)) {
        if (tp < floor) continue;
        if (model.q_heads % tp != 0) continue;
        if (!memory_feasible(model, gpu, tp, cost.sim_config().mem_threshold))
          continue;
        if (tp > inst.cluster.available_of(gname)) continue;
        for (long b : batches) {
          Var v;
          v.model = name;
          v.gpu = gname;
          v.tp = tp;
          v.batch = b;
          v.bound = cfg.loose_variable_bounds
                        ? loose
                        : per_variable_bound(dem.batch_demand, b, tp,
                                             inst.cluster.available_of(gname));
          if (v.bound <= 0) continue;
          v.latency = cost.group_latency(name, gname, tp, b, dem.prefill_len,
                                         dem.decode_len);
          vs.vars.push_back(std::move(v));
        }
      }
    }
    vs.span[name] = {begin, vs.vars.size()};
  }

  vs.suffix_cover.assign(vs.vars.size() + 1, 0);
  vs.suffix_min_lat.assign(vs.vars.size() + 1,
                           std::numeric_limits<double>::infinity());
  for (const auto& name : vs.model_order) {
    const auto [begin, end] = vs.span[name];
    long cover = 0;
    double lat = std::numeric_limits<double>::infinity();
    for (size_t i = end; i-- > begin;) {
      cover += vs.vars[i].batch * vs.vars[i].bound;
      lat = std::min(lat, vs.vars[i].latency);
      vs.suffix_cover[i] = cover;
      vs.suffix_min_lat[i] = lat;
    }
    vs.min_latency[name] = begin < end ? lat : std::numeric_limits<double>::infinity();
  }
  return vs;
}

// Shared objective arithmetic: every solver funnels through this so equal
// solutions compare bitwise equal.
double objective_of(const std::map<std::string, double>& per_model,
                    const std::map<std::string, double>& weights, double eps,
                    double mig_term) {
  double t_bal = 0, weighted = 0;
  for (const auto& [name, lz] : per_model) {
    t_bal = std::max(t_bal, lz);
    weighted += weights.at(name) * lz;
  }
  return t_bal + eps * weighted + mig_term;
}

ServingPlan plan_of(const VarSpace& vs, const std::vector<int>& n) {
  ServingPlan p;
  for (size_t i = 0; i < vs.vars.size(); ++i) {
    if (n[i] <= 0) continue;
    const auto& v = vs.vars[i];
    p.groups.push_back({v.model, v.gpu, v.tp, v.batch, n[i]});
  }
  return p;
}

void validate_config(const SchedulerConfig& cfg) {
  if (cfg.time_budget_seconds <= 0)
    throw SchedulerError("time_budget_seconds must be positive");
  if (cfg.secondary_objective_epsilon < 0)
    throw SchedulerError("secondary_objective_epsilon must be >= 0");
  if (cfg.relative_gap < 0 || cfg.relative_gap >= 1)
    throw SchedulerError("relative_gap must be in [0, 1)");
  if (cfg.node_limit < 1) throw SchedulerError("node_limit must be >= 1");
  if (cfg.curated_set.empty() && cfg.batch_policy == BatchPolicy::curated)
    throw SchedulerError("curated batch set must not be empty");
  for (long b : cfg.curated_set)
    if (b < 1) throw SchedulerError("curated batch candidates must be >= 1");
  for (const auto& r : cfg.tp_floor_rules)
    if (r.min_tp < 1 || (r.min_tp & (r.min_tp - 1)) != 0 || r.min_tp > 8)
      throw SchedulerError("tp floor must be a power of two in [1, 8]");
}

struct Search {
  const VarSpace& vs;
  const SchedulingInstance& inst;
  const SchedulerConfig& cfg;
  AnalyticCostModel& cost;
  CancelFlag* cancel;
  Clock::time_point deadline;

  std::vector<int> n;
  std::map<std::string, int> remaining;
  std::map<std::string, long> covered;
  std::map<std::string, double> lmax;

  double best_obj = std::numeric_limits<double>::infinity();
  std::vector<int> best_n;
  bool have_best = false;
  long nodes = 0;
  bool aborted = false;

  double mig_term(const ServingPlan& p) {
    if (inst.migration_weight == 0 || !inst.deployed) return 0;
    return inst.migration_weight *
           reconfig_cost(inst.deployed, p, cost.catalog()).total();
  }

  bool out_of_budget() {
    if (cancel && cancel->load(std::memory_order_relaxed)) return true;
    if (nodes >= cfg.node_limit) return true;
    if ((nodes & 0x3ff) == 0 && Clock::now() >= deadline) return true;
    return false;
  }

  // Admissible per-model lower bounds given the prefix assignment.
  double bound_obj(size_t i) {
    std::map<std::string, double> lb;
    for (const auto& name : vs.model_order) {
      const auto [begin, end] = vs.span.at(name);
      double v = lmax.at(name);
      if (covered.at(name) < vs.demand.at(name)) {
        const size_t from = std::max(begin, std::min(i, end));
        const double must_add =
            from < end ? vs.suffix_min_lat[from] : std::numeric_limits<double>::infinity();
        v = std::max(v, must_add);
      }
      lb[name] = v;
    }
    return objective_of(lb, vs.weights, cfg.secondary_objective_epsilon, 0.0);
  }

  void dfs(size_t i) {
    if (aborted) return;
    ++nodes;
    if (out_of_budget()) {
      aborted = true;
      return;
    }
    if (i == vs.vars.size()) {
      for (const auto& [name, need] : vs.demand)
        if (covered.at(name) < need) return;
      const ServingPlan p = plan_of(vs, n);
      const double obj = objective_of(lmax, vs.weights,
                                      cfg.secondary_objective_epsilon, mig_term(p));
      if (obj < best_obj) {
        best_obj = obj;
        best_n = n;
        have_best = true;
      }
      return;
    }
    const Var& v = vs.vars[i];
    const bool last_of_model = i + 1 == vs.span.at(v.model).second;
    for (int k = v.bound; k >= 0; --k) {
      if (v.tp * k > remaining.at(v.gpu)) continue;
      const long new_cover = covered.at(v.model) + v.batch * k;
      // Descending k: once coverage cannot be completed it stays impossible.
      const long reachable = last_of_model ? 0 : vs.suffix_cover[i + 1];
      if (new_cover + reachable < vs.demand.at(v.model)) break;

      const double old_lmax = lmax.at(v.model);
      n[i] = k;
      remaining[v.gpu] -= v.tp * k;
      covered[v.model] = new_cover;
      if (k > 0) lmax[v.model] = std::max(old_lmax, v.latency);

      if (bound_obj(i + 1) < best_obj * (1.0 - cfg.relative_gap) || !have_best)
        dfs(i + 1);

      remaining[v.gpu] += v.tp * k;
      covered[v.model] = new_cover - v.batch * k;
      lmax[v.model] = old_lmax;
      n[i] = 0;
      if (aborted) return;
    }
  }
};

long isqrt(long x) { return (long)std::sqrt((double)x); }

}  // namespace

void validate_scheduler_config(const SchedulerConfig& cfg) {
  validate_config(cfg);
}

std::string to_string(SchedAlgorithm a) {
  switch (a) {
    case SchedAlgorithm::greedy: return "greedy";
    case SchedAlgorithm::local_search: return "local_search";
    case SchedAlgorithm::exact: return "exact";
  }
  return "greedy";
}

SchedAlgorithm sched_algorithm_from_string(const std::string& s) {
  if (s == "greedy") return SchedAlgorithm::greedy;
  if (s == "local_search") return SchedAlgorithm::local_search;
  if (s == "exact") return SchedAlgorithm::exact;
  throw SchedulerError("unknown scheduler algorithm: " + s);
}

std::vector<long> batch_candidates(const DemandEntry& dem,
                                   const SchedulerConfig& cfg) {
  if (dem.batch_cap < 1) throw SchedulerError("batch_cap must be >= 1");
  std::set<long> out;
  if (cfg.batch_policy == BatchPolicy::exhaustive_up_to_cap) {
    for (long b = 1; b <= dem.batch_cap; ++b) out.insert(b);
  } else {
    for (long b : cfg.curated_set)
      if (b >= 1 && b <= dem.batch_cap) out.insert(b);
    for (long d = 1; d <= isqrt(dem.batch_demand); ++d) {
      if (dem.batch_demand % d != 0) continue;
      if (d <= dem.batch_cap) out.insert(d);
      const long q = dem.batch_demand / d;
      if (q <= dem.batch_cap) out.insert(q);
    }
  }
  return {out.begin(), out.end()};
}

int per_variable_bound(long batch_demand, long batch, int tp, int available) {
  if (batch < 1) throw SchedulerError("batch must be >= 1");
  if (tp < 1) throw SchedulerError("tp must be >= 1");
  if (batch_demand <= 0) return 0;
  const long by_capacity = available / tp;
  const long by_demand = (batch_demand + batch - 1) / batch;
  return (int)std::min(by_capacity, by_demand);
}

std::map<std::string, double> secondary_weights(const Catalog& cat,
                                                const WorkloadSnapshot& wl) {
  std::vector<std::string> names;
  for (const auto& [name, dem] : wl.demand)
    if (dem.batch_demand > 0) names.push_back(name);
  std::sort(names.begin(), names.end(), [&](const auto& a, const auto& b) {
    const double wa = weight_size(cat.model(a)), wb = weight_size(cat.model(b));
    if (wa != wb) return wa < wb;
    return a < b;
  });
  std::map<std::string, double> w;
  for (size_t i = 0; i < names.size(); ++i) w[names[i]] = 1.0 + 0.5 * double(i);
  return w;
}

double plan_objective(const ServingPlan& plan, const SchedulingInstance& inst,
                      const SchedulerConfig& cfg, AnalyticCostModel& cost) {
  const auto mk = cost.plan_makespan(plan, inst.workload);
  const auto weights = secondary_weights(cost.catalog(), inst.workload);
  double mig = 0;
  if (inst.migration_weight != 0 && inst.deployed)
    mig = inst.migration_weight *
          reconfig_cost(inst.deployed, plan, cost.catalog()).total();
  return objective_of(mk.per_model, weights, cfg.secondary_objective_epsilon, mig);
}

SchedResult greedy_schedule(const SchedulingInstance& inst,
                            const SchedulerConfig& cfg, AnalyticCostModel& cost,
                            CancelFlag* cancel) {
  validate_config(cfg);
  const Catalog& cat = cost.catalog();
  SchedResult res;
  std::map<std::string, int> remaining = inst.cluster.available;
  std::vector<std::string> gpu_names;
  for (const auto& g : cat.gpus)
    if (inst.cluster.available_of(g.name) > 0) gpu_names.push_back(g.name);
  std::sort(gpu_names.begin(), gpu_names.end());

  for (const auto& name : models_by_weight_desc(cat, inst.workload)) {
    if (cancel && cancel->load(std::memory_order_relaxed)) break;
    const auto& dem = inst.workload.demand.at(name);
    const auto& model = cat.model(name);
    const auto batches = batch_candidates(dem, cfg);
    if (batches.empty()) {
      res.shortfall = true;
      continue;
    }
    const long bstar = batches.back();
    const int floor = tp_floor(model, cfg);
    long residual = dem.batch_demand;
    while (residual > 0) {
      std::string pick_gpu;
      int pick_tp = 0;
      double pick_lat = std::numeric_limits<double>::infinity();
      double pick_eff = std::numeric_limits<double>::infinity();
      for (const auto& gname : gpu_names) {
        const auto& gpu = cat.gpu(gname);
        for (int tp : tp_options(gpu)) {
          if (tp < floor || model.q_heads % tp != 0) continue;
          if (!memory_feasible(model, gpu, tp, cost.sim_config().mem_threshold))
            continue;
          if (remaining[gname] < tp) continue;
          const double lat = cost.group_latency(name, gname, tp, bstar,
                                                dem.prefill_len, dem.decode_len);
          // GPU-seconds per pass, not raw latency: a minimum-latency pick
          // always shards widest and strands capacity the later models need.
          const double eff = lat * tp;
          ++res.work_units;
          if (eff < pick_eff || (eff == pick_eff && lat < pick_lat)) {
            pick_eff = eff;
            pick_lat = lat;
            pick_gpu = gname;
            pick_tp = tp;
          }
        }
      }
      if (pick_tp == 0) {
        res.shortfall = true;
        break;
      }
      const int fit = remaining[pick_gpu] / pick_tp;
      const long need = (residual + bstar - 1) / bstar;
      const int add = (int)std::min<long>(fit, need);
      bool merged = false;
      for (auto& g : res.plan.groups) {
        if (g.model == name && g.gpu == pick_gpu && g.tp == pick_tp &&
            g.batch == bstar) {
          g.count += add;
          merged = true;
          break;
        }
      }
      if (!merged)
        res.plan.groups.push_back({name, pick_gpu, pick_tp, bstar, add});
      remaining[pick_gpu] -= pick_tp * add;
      residual -= (long)add * bstar;
    }
  }
  res.objective = plan_objective(res.plan, inst, cfg, cost);
  if (res.shortfall) res.note = "demand shortfall: capacity exhausted";
  return res;
}

SchedResult exact_schedule(const SchedulingInstance& inst,
                           const SchedulerConfig& cfg, AnalyticCostModel& cost,
                           CancelFlag* cancel) {
  validate_config(cfg);
  const VarSpace vs = build_vars(inst, cfg, cost);

  // Per-model reachability first: a model that cannot be covered even with
  // every variable at its bound makes the instance infeasible outright.
  std::ostringstream binding;
  bool impossible = false;
  for (const auto& name : vs.model_order) {
    const auto [begin, end] = vs.span.at(name);
    const long best = begin < end ? vs.suffix_cover[begin] : 0;
    if (best < vs.demand.at(name)) {
      impossible = true;
      binding << "  " << name << ": max coverage " << best << " < demand "
              << vs.demand.at(name) << "\n";
    }
  }
  if (impossible) {
    SchedResult res;
    res.feasible = false;
    std::ostringstream os;
    os << "no feasible plan; binding constraints:\n" << binding.str();
    for (const auto& [g, a] : inst.cluster.available)
      os << "  " << g << ": " << a << " available\n";
    res.note = os.str();
    res.objective = std::numeric_limits<double>::infinity();
    return res;
  }

  Search s{vs, inst, cfg, cost, cancel,
           Clock::now() + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(cfg.time_budget_seconds))};
  s.n.assign(vs.vars.size(), 0);
  s.remaining = inst.cluster.available;
  for (const auto& name : vs.model_order) {
    s.covered[name] = 0;
    s.lmax[name] = 0;
  }

  // Warm incumbent from greedy when it fully covers; its objective is computed
  // through the same arithmetic, so it also certifies exact <= greedy.
  const SchedResult warm = greedy_schedule(inst, cfg, cost, cancel);
  if (!warm.shortfall) {
    std::vector<int> n(vs.vars.size(), 0);
    bool mapped = true;
    for (const auto& g : warm.plan.groups) {
      bool found = false;
      for (size_t i = 0; i < vs.vars.size(); ++i) {
        const auto& v = vs.vars[i];
        if (v.model == g.model && v.gpu == g.gpu && v.tp == g.tp &&
            v.batch == g.batch && g.count <= v.bound) {
          n[i] = g.count;
          found = true;
          break;
        }
      }
      mapped = mapped && found;
    }
    if (mapped) {
      s.best_n = n;
      s.best_obj = warm.objective;
      s.have_best = true;
    }
  }

  s.dfs(0);

  SchedResult res;
  res.work_units = s.nodes + warm.work_units;
  if (!s.have_best) {
    if (s.aborted) {
      res = warm;
      res.work_units = s.nodes + warm.work_units;
      res.note = "search budget exhausted before any covering plan; greedy fallback";
      return res;
    }
    res.feasible = false;
    res.note = "no feasible plan; capacity cannot cover demand jointly";
    res.objective = std::numeric_limits<double>::infinity();
    return res;
  }
  res.plan = plan_of(vs, s.best_n);
  res.objective = s.best_obj;
  if (s.aborted) res.note = "budget-truncated; best incumbent returned";
  return res;
}

SchedResult local_search_schedule(const SchedulingInstance& inst,
                                  const SchedulerConfig& cfg,
                                  AnalyticCostModel& cost, CancelFlag* cancel) {
  validate_config(cfg);
  const Catalog& cat = cost.catalog();
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(
                         std::chrono::duration<double>(cfg.time_budget_seconds));

  SchedResult seed = greedy_schedule(inst, cfg, cost, cancel);
  if (inst.deployed) {
    ServingPlan prior = *inst.deployed;
    std::erase_if(prior.groups, [&](const ReplicaGroup& g) {
      const auto it = inst.workload.demand.find(g.model);
      return it == inst.workload.demand.end() || it->second.batch_demand <= 0;
    });
    const auto rep = validate_plan(prior, cat, inst.cluster, cost.sim_config());
    if (rep.ok() && !prior.groups.empty()) {
      const double obj = plan_objective(prior, inst, cfg, cost);
      if (obj < seed.objective) {
        seed.plan = std::move(prior);
        seed.objective = obj;
        seed.shortfall = false;
      }
    }
  }

  SchedResult res = seed;
  auto canonical = [](ServingPlan& p) {
    std::erase_if(p.groups, [](const ReplicaGroup& g) { return g.count <= 0; });
    std::sort(p.groups.begin(), p.groups.end(),
              [](const ReplicaGroup& a, const ReplicaGroup& b) {
                return std::tie(a.model, a.gpu, a.tp, a.batch) <
                       std::tie(b.model, b.gpu, b.tp, b.batch);
              });
  };
  canonical(res.plan);

  auto capacity_ok = [&](const ServingPlan& p) {
    for (const auto& [g, avail] : inst.cluster.available)
      if (p.gpus_used(g) > avail) return false;
    for (const auto& g : p.groups)
      if (inst.cluster.available.find(g.gpu) == inst.cluster.available.end())
        return false;
    return true;
  };

  bool improved = true;
  while (improved) {
    improved = false;
    if (cancel && cancel->load(std::memory_order_relaxed)) break;
    if (Clock::now() >= deadline || res.work_units >= cfg.node_limit) break;

    std::vector<ServingPlan> moves;
    for (size_t gi = 0; gi < res.plan.groups.size(); ++gi) {
      const auto& g = res.plan.groups[gi];
      const auto& model = cat.model(g.model);
      const auto& dem = inst.workload.demand.at(g.model);
      const auto batches = batch_candidates(dem, cfg);
      const int floor = tp_floor(model, cfg);

      auto with = [&](auto edit) {
        ServingPlan p = res.plan;
        edit(p.groups[gi], p);
        canonical(p);
        return p;
      };
      moves.push_back(with([](ReplicaGroup& r, ServingPlan&) { r.count -= 1; }));
      moves.push_back(with([](ReplicaGroup& r, ServingPlan&) { r.count += 1; }));
      const auto bpos = std::find(batches.begin(), batches.end(), g.batch);
      if (bpos != batches.end() && bpos + 1 != batches.end())
        moves.push_back(
            with([&](ReplicaGroup& r, ServingPlan&) { r.batch = *(bpos + 1); }));
      if (bpos != batches.end() && bpos != batches.begin())
        moves.push_back(
            with([&](ReplicaGroup& r, ServingPlan&) { r.batch = *(bpos - 1); }));
      for (int tp : tp_options(cat.gpu(g.gpu))) {
        if (tp == g.tp || tp < floor || model.q_heads % tp != 0) continue;
        if (!memory_feasible(model, cat.gpu(g.gpu), tp,
                             cost.sim_config().mem_threshold))
          continue;
        moves.push_back(with([&](ReplicaGroup& r, ServingPlan&) { r.tp = tp; }));
      }
      for (const auto& other : cat.gpus) {
        if (other.name == g.gpu) continue;
        if (inst.cluster.available_of(other.name) <= 0) continue;
        for (int tp : tp_options(other)) {
          if (tp < floor || model.q_heads % tp != 0) continue;
          if (!memory_feasible(model, other, tp, cost.sim_config().mem_threshold))
            continue;
          moves.push_back(with([&](ReplicaGroup& r, ServingPlan& p) {
            r.count -= 1;
            p.groups.push_back({r.model, other.name, tp, r.batch, 1});
          }));
        }
      }
    }

    for (auto& p : moves) {
      if (cancel && cancel->load(std::memory_order_relaxed)) break;
      if (Clock::now() >= deadline || res.work_units >= cfg.node_limit) break;
      bool sane = capacity_ok(p);
      for (const auto& g : p.groups)
        sane = sane && g.count >= 0 && g.batch >= 1;
      if (!sane) continue;
      ++res.work_units;
      const double obj = plan_objective(p, inst, cfg, cost);
      if (obj < res.objective) {
        res.plan = std::move(p);
        res.objective = obj;
        improved = true;
        break;
      }
    }
  }
  canonical(res.plan);
  res.shortfall = false;
  for (const auto& [name, dem] : inst.workload.demand) {
    if (dem.batch_demand <= 0) continue;
    long cap = 0;
    for (const auto& g : res.plan.groups)
      if (g.model == name && g.active()) cap += g.batch * g.count;
    if (cap < dem.batch_demand) res.shortfall = true;
  }
  if (res.shortfall) res.note = "demand shortfall: capacity exhausted";
  return res;
}

SchedResult brute_force_oracle(const SchedulingInstance& inst,
                               const SchedulerConfig& cfg,
                               AnalyticCostModel& cost, long max_assignments) {
  validate_config(cfg);
  const VarSpace vs = build_vars(inst, cfg, cost);
  double space = 1;
  for (const auto& v : vs.vars) {
    space *= double(v.bound) + 1;
    if (space > double(max_assignments))
      throw SchedulerError("oracle refused: assignment space exceeds guard of " +
                           std::to_string(max_assignments));
  }

  SchedResult res;
  std::vector<int> n(vs.vars.size(), 0);
  std::map<std::string, int> remaining = inst.cluster.available;
  std::map<std::string, long> covered;
  std::map<std::string, double> lmax;
  for (const auto& name : vs.model_order) {
    covered[name] = 0;
    lmax[name] = 0;
  }
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> best_n;
  bool have_best = false;

  // Same order as the exact search: depth first, counts descending. No
  // pruning beyond hard capacity, which only skips invalid assignments.
  auto rec = [&](auto&& self, size_t i) -> void {
    if (i == vs.vars.size()) {
      ++res.work_units;
      for (const auto& [name, need] : vs.demand)
        if (covered.at(name) < need) return;
      const ServingPlan p = plan_of(vs, n);
      double mig = 0;
      if (inst.migration_weight != 0 && inst.deployed)
        mig = inst.migration_weight *
              reconfig_cost(inst.deployed, p, cost.catalog()).total();
      const double obj =
          objective_of(lmax, vs.weights, cfg.secondary_objective_epsilon, mig);
      if (obj < best) {
        best = obj;
        best_n = n;
        have_best = true;
      }
      return;
    }
    const Var& v = vs.vars[i];
    for (int k = v.bound; k >= 0; --k) {
      if (v.tp * k > remaining.at(v.gpu)) continue;
      const double old = lmax.at(v.model);
      n[i] = k;
      remaining[v.gpu] -= v.tp * k;
      covered[v.model] += v.batch * k;
      if (k > 0) lmax[v.model] = std::max(old, v.latency);
      self(self, i + 1);
      remaining[v.gpu] += v.tp * k;
      covered[v.model] -= v.batch * k;
      lmax[v.model] = old;
      n[i] = 0;
    }
  };
  rec(rec, 0);

  if (!have_best) {
    res.feasible = false;
    res.note = "no feasible plan in enumerated space";
    res.objective = std::numeric_limits<double>::infinity();
    return res;
  }
  res.plan = plan_of(vs, best_n);
  res.objective = best;
  return res;
}

}  // namespace evoserve
