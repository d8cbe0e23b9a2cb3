#include "evoserve/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "evoserve/hash.hpp"

namespace evoserve {

using ojson = nlohmann::ordered_json;

std::string to_string(TriggerVariant v) {
  switch (v) {
    case TriggerVariant::periodic: return "periodic";
    case TriggerVariant::workload_delta: return "workload_delta";
    case TriggerVariant::cost_benefit: return "cost_benefit";
  }
  return "periodic";
}

TriggerVariant trigger_variant_from_string(const std::string& s) {
  if (s == "periodic") return TriggerVariant::periodic;
  if (s == "workload_delta") return TriggerVariant::workload_delta;
  if (s == "cost_benefit") return TriggerVariant::cost_benefit;
  throw GenomeError("unknown trigger variant: " + s);
}

std::string to_string(MigrationMode m) {
  switch (m) {
    case MigrationMode::full: return "full";
    case MigrationMode::minimal: return "minimal";
    case MigrationMode::penalized: return "penalized";
  }
  return "full";
}

MigrationMode migration_mode_from_string(const std::string& s) {
  if (s == "full") return MigrationMode::full;
  if (s == "minimal") return MigrationMode::minimal;
  if (s == "penalized") return MigrationMode::penalized;
  throw GenomeError("unknown migration mode: " + s);
}

namespace {

ojson trigger_to_json(const TriggerSpec& t) {
  ojson j;
  j["variant"] = to_string(t.variant);
  j["period_steps"] = t.period_steps;
  j["delta"] = t.delta;
  j["margin_seconds"] = t.margin_seconds;
  j["mandatory_on_cluster_change"] = t.mandatory_on_cluster_change;
  return j;
}

ojson scheduler_to_json(const SchedulerConfig& c) {
  ojson j;
  j["algorithm"] = to_string(c.algorithm);
  j["time_budget_seconds"] = c.time_budget_seconds;
  j["batch_policy"] = c.batch_policy == BatchPolicy::curated
                          ? "curated"
                          : "exhaustive_up_to_cap";
  j["curated_set"] = c.curated_set;
  ojson rules = ojson::array();
  for (const auto& r : c.tp_floor_rules) {
    ojson rj;
    rj["min_weight_bytes"] = r.min_weight_bytes;
    rj["min_tp"] = r.min_tp;
    rules.push_back(std::move(rj));
  }
  j["tp_floor_rules"] = std::move(rules);
  j["secondary_objective_epsilon"] = c.secondary_objective_epsilon;
  j["relative_gap"] = c.relative_gap;
  j["node_limit"] = c.node_limit;
  j["seed"] = c.seed;
  j["loose_variable_bounds"] = c.loose_variable_bounds;
  return j;
}

ojson migration_to_json(const MigrationSpec& m) {
  ojson j;
  j["mode"] = to_string(m.mode);
  j["w"] = m.w;
  return j;
}

ojson behaviour_json(const PolicyGenome& g) {
  ojson j;
  j["trigger"] = trigger_to_json(g.trigger);
  j["scheduler"] = scheduler_to_json(g.scheduler);
  j["migration"] = migration_to_json(g.migration);
  return j;
}

TriggerSpec trigger_from_json(const ojson& j) {
  TriggerSpec t;
  t.variant = trigger_variant_from_string(j.at("variant").get<std::string>());
  t.period_steps = j.at("period_steps").get<long>();
  t.delta = j.at("delta").get<double>();
  t.margin_seconds = j.at("margin_seconds").get<double>();
  t.mandatory_on_cluster_change = j.at("mandatory_on_cluster_change").get<bool>();
  return t;
}

SchedulerConfig scheduler_from_json(const ojson& j) {
  SchedulerConfig c;
  c.algorithm = sched_algorithm_from_string(j.at("algorithm").get<std::string>());
  c.time_budget_seconds = j.at("time_budget_seconds").get<double>();
  const auto bp = j.at("batch_policy").get<std::string>();
  if (bp == "curated")
    c.batch_policy = BatchPolicy::curated;
  else if (bp == "exhaustive_up_to_cap")
    c.batch_policy = BatchPolicy::exhaustive_up_to_cap;
  else
    throw GenomeError("unknown batch policy: " + bp);
  c.curated_set = j.at("curated_set").get<std::vector<long>>();
  c.tp_floor_rules.clear();
  for (const auto& rj : j.at("tp_floor_rules")) {
    TpFloorRule r;
    r.min_weight_bytes = rj.at("min_weight_bytes").get<double>();
    r.min_tp = rj.at("min_tp").get<int>();
    c.tp_floor_rules.push_back(r);
  }
  c.secondary_objective_epsilon = j.at("secondary_objective_epsilon").get<double>();
  c.relative_gap = j.at("relative_gap").get<double>();
  c.node_limit = j.at("node_limit").get<long>();
  c.seed = j.at("seed").get<unsigned>();
  c.loose_variable_bounds = j.at("loose_variable_bounds").get<bool>();
  return c;
}

MigrationSpec migration_from_json(const ojson& j) {
  MigrationSpec m;
  m.mode = migration_mode_from_string(j.at("mode").get<std::string>());
  m.w = j.at("w").get<double>();
  return m;
}

}  // namespace

std::string compute_genome_id(const PolicyGenome& g) {
  return hex64(fnv1a64(behaviour_json(g).dump()));
}

PolicyGenome finalize_genome(PolicyGenome g) {
  g.genome_id = compute_genome_id(g);
  return g;
}

ValidationReport validate_genome(const PolicyGenome& g) {
  ValidationReport rep;
  auto bad = [&](const std::string& s) { rep.violations.push_back(s); };
  if (g.trigger.period_steps < 1) bad("trigger period_steps must be >= 1");
  if (!(g.trigger.delta >= 0) || !std::isfinite(g.trigger.delta))
    bad("trigger delta must be finite and >= 0");
  if (!(g.trigger.margin_seconds >= 0) || !std::isfinite(g.trigger.margin_seconds))
    bad("trigger margin_seconds must be finite and >= 0");
  if (!(g.migration.w >= 0) || !std::isfinite(g.migration.w))
    bad("migration w must be finite and >= 0");
  if (g.migration.mode == MigrationMode::full && g.migration.w != 0)
    bad("full migration fixes w at 0");
  try {
    validate_scheduler_config(g.scheduler);
  } catch (const SchedulerError& e) {
    bad(std::string("scheduler: ") + e.what());
  }
  return rep;
}

std::string genome_to_json(const PolicyGenome& g) {
  ojson j;
  j["genome_id"] = g.genome_id;
  ojson lin;
  lin["parent"] = g.lineage.parent;
  lin["mutation"] = g.lineage.mutation;
  j["lineage"] = std::move(lin);
  const ojson body = behaviour_json(g);
  j["trigger"] = body.at("trigger");
  j["scheduler"] = body.at("scheduler");
  j["migration"] = body.at("migration");
  return j.dump(2) + "\n";
}

PolicyGenome genome_from_json(const std::string& text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw GenomeError(std::string("genome parse error: ") + e.what());
  }
  PolicyGenome g;
  try {
    g.genome_id = j.at("genome_id").get<std::string>();
    g.lineage.parent = j.at("lineage").at("parent").get<std::string>();
    g.lineage.mutation = j.at("lineage").at("mutation").get<std::string>();
    g.trigger = trigger_from_json(j.at("trigger"));
    g.scheduler = scheduler_from_json(j.at("scheduler"));
    g.migration = migration_from_json(j.at("migration"));
  } catch (const nlohmann::json::exception& e) {
    throw GenomeError(std::string("genome field error: ") + e.what());
  }
  const auto rep = validate_genome(g);
  if (!rep.ok()) throw GenomeError("invalid genome:\n" + rep.to_string());
  const std::string computed = compute_genome_id(g);
  if (g.genome_id.empty())
    g.genome_id = computed;
  else if (g.genome_id != computed)
    throw GenomeError("genome field error: genome_id does not match content");
  return g;
}

PolicyGenome load_genome(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw GenomeError("cannot open genome file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return genome_from_json(ss.str());
}

void save_genome(const PolicyGenome& g, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw GenomeError("cannot open genome file: " + path);
  out << genome_to_json(g);
}

namespace {

bool plan_is_empty(const std::optional<ServingPlan>& p) {
  if (!p) return true;
  return std::none_of(p->groups.begin(), p->groups.end(),
                      [](const ReplicaGroup& g) { return g.active(); });
}

bool plan_fits_cluster(const ServingPlan& plan, const ClusterState& cluster) {
  std::set<std::string> types;
  for (const auto& g : plan.groups)
    if (g.active()) types.insert(g.gpu);
  for (const auto& t : types)
    if (plan.gpus_used(t) > cluster.available_of(t)) return false;
  return true;
}

double rel_change(double ref, double now) {
  if (ref <= 0 && now <= 0) return 0;
  if (ref <= 0) return std::numeric_limits<double>::infinity();
  return std::abs(now - ref) / ref;
}

bool workload_shift_exceeds(const WorkloadSnapshot& ref,
                            const WorkloadSnapshot& now, double delta) {
  std::set<std::string> names;
  for (const auto& [m, d] : ref.demand) names.insert(m);
  for (const auto& [m, d] : now.demand) names.insert(m);
  for (const auto& m : names) {
    const auto ri = ref.demand.find(m);
    const auto ni = now.demand.find(m);
    const double l_ref = ri == ref.demand.end() ? 0 : (double)ri->second.batch_demand;
    const double l_now = ni == now.demand.end() ? 0 : (double)ni->second.batch_demand;
    if (rel_change(l_ref, l_now) > delta) return true;
    if (l_ref > 0 && l_now > 0) {
      if (rel_change((double)ri->second.prefill_len,
                     (double)ni->second.prefill_len) > delta)
        return true;
      if (rel_change((double)ri->second.decode_len,
                     (double)ni->second.decode_len) > delta)
        return true;
    }
  }
  return false;
}

// Keep every deployed group the current cluster can still host, then cover
// whatever demand that leaves with a greedy pass over the leftover GPUs.
SchedResult minimal_repair(const PolicyGenome& g, const Context& ctx,
                           AnalyticCostModel& cost, CancelFlag* cancel) {
  const Catalog& cat = cost.catalog();
  std::vector<ReplicaGroup> survivors;
  for (const auto& grp : ctx.deployed->groups)
    if (grp.active()) survivors.push_back(grp);
  std::sort(survivors.begin(), survivors.end(),
            [](const ReplicaGroup& a, const ReplicaGroup& b) {
              return std::tie(a.model, a.gpu, a.tp, a.batch) <
                     std::tie(b.model, b.gpu, b.tp, b.batch);
            });

  SchedResult res;
  std::vector<ReplicaGroup> kept;
  std::map<std::string, int> used;
  for (auto grp : survivors) {
    ++res.work_units;
    const auto di = ctx.workload.demand.find(grp.model);
    const bool wanted =
        di != ctx.workload.demand.end() && di->second.batch_demand > 0;
    if (!wanted || !cat.has_gpu(grp.gpu)) continue;
    const int left = ctx.cluster.available_of(grp.gpu) - used[grp.gpu];
    const int fit = std::min(grp.count, left / grp.tp);
    if (fit <= 0) continue;
    grp.count = fit;
    used[grp.gpu] += grp.tp * fit;
    kept.push_back(grp);
  }

  WorkloadSnapshot residual;
  for (const auto& [m, dem] : ctx.workload.demand) {
    if (dem.batch_demand <= 0) continue;
    long covered = 0;
    for (const auto& k : kept)
      if (k.model == m) covered += k.batch * (long)k.count;
    if (covered >= dem.batch_demand) continue;
    DemandEntry d = dem;
    d.batch_demand = dem.batch_demand - covered;
    residual.demand[m] = d;
  }

  if (!residual.demand.empty()) {
    ClusterState leftover;
    for (const auto& [t, n] : ctx.cluster.available) {
      const auto ui = used.find(t);
      const int free = n - (ui == used.end() ? 0 : ui->second);
      if (free > 0) leftover.available[t] = free;
    }
    SchedulerConfig rcfg = g.scheduler;
    rcfg.algorithm = SchedAlgorithm::greedy;
    const SchedulingInstance rinst{residual, leftover, std::nullopt, 0.0};
    const SchedResult rr = greedy_schedule(rinst, rcfg, cost, cancel);
    res.work_units += rr.work_units;
    if (!rr.feasible || rr.shortfall)
      throw SchedulerError("genome " + g.genome_id +
                           ": minimal repair cannot place displaced demand (" +
                           (rr.note.empty() ? "no capacity" : rr.note) + ")");
    for (const auto& ng : rr.plan.groups) {
      if (ng.count <= 0) continue;
      // One row per shape, as the solvers keep it.
      auto same = std::find_if(kept.begin(), kept.end(), [&](const auto& kg) {
        return kg.model == ng.model && kg.gpu == ng.gpu && kg.tp == ng.tp &&
               kg.batch == ng.batch;
      });
      if (same != kept.end())
        same->count += ng.count;
      else
        kept.push_back(ng);
    }
    res.note = "minimal repair: displaced demand re-placed";
  } else {
    res.note = "minimal repair: nothing displaced";
  }

  res.plan.groups = std::move(kept);
  const SchedulingInstance inst{ctx.workload, ctx.cluster, ctx.deployed, 0.0};
  res.objective = plan_objective(res.plan, inst, g.scheduler, cost);
  return res;
}

}  // namespace

bool should_reschedule(const PolicyGenome& g, const Context& ctx,
                       long step_index, long last_reschedule_step,
                       AnalyticCostModel& cost) {
  if (plan_is_empty(ctx.deployed)) return true;
  const ServingPlan& dep = *ctx.deployed;
  if (g.trigger.mandatory_on_cluster_change &&
      !plan_fits_cluster(dep, ctx.cluster))
    return true;

  switch (g.trigger.variant) {
    case TriggerVariant::periodic:
      return step_index - last_reschedule_step >= g.trigger.period_steps;
    case TriggerVariant::workload_delta: {
      if (!ctx.reference_workload) return true;
      return workload_shift_exceeds(*ctx.reference_workload, ctx.workload,
                                    g.trigger.delta);
    }
    case TriggerVariant::cost_benefit: {
      // The probe must stay cheap: a single greedy pass under a tight wall
      // budget, never the configured solver.
      SchedulerConfig probe_cfg = g.scheduler;
      probe_cfg.algorithm = SchedAlgorithm::greedy;
      probe_cfg.time_budget_seconds = 0.05;
      const SchedulingInstance inst{ctx.workload, ctx.cluster, ctx.deployed, 0.0};
      const SchedResult probe = greedy_schedule(inst, probe_cfg, cost);
      const double t_dep = cost.plan_makespan(dep, ctx.workload).t_balanced;
      const double t_new = cost.plan_makespan(probe.plan, ctx.workload).t_balanced;
      const double move = cost.reconfig_cost(ctx.deployed, probe.plan);
      return t_dep - t_new > move + g.trigger.margin_seconds;
    }
  }
  return true;
}

SchedResult policy_schedule(const PolicyGenome& g, const Context& ctx,
                            AnalyticCostModel& cost, CancelFlag* cancel) {
  const auto rep = validate_genome(g);
  if (!rep.ok())
    throw GenomeError("genome " + g.genome_id + " invalid:\n" + rep.to_string());

  SchedResult res;
  if (g.migration.mode == MigrationMode::minimal && !plan_is_empty(ctx.deployed)) {
    res = minimal_repair(g, ctx, cost, cancel);
  } else {
    const double w =
        g.migration.mode == MigrationMode::penalized ? g.migration.w : 0.0;
    const SchedulingInstance inst{ctx.workload, ctx.cluster, ctx.deployed, w};
    switch (g.scheduler.algorithm) {
      case SchedAlgorithm::greedy:
        res = greedy_schedule(inst, g.scheduler, cost, cancel);
        break;
      case SchedAlgorithm::local_search:
        res = local_search_schedule(inst, g.scheduler, cost, cancel);
        break;
      case SchedAlgorithm::exact:
        res = exact_schedule(inst, g.scheduler, cost, cancel);
        break;
    }
    if (!res.feasible || res.shortfall)
      throw SchedulerError("genome " + g.genome_id + ": no feasible plan (" +
                           (res.note.empty() ? "unspecified" : res.note) + ")");
  }

  const auto check =
      validate_plan(res.plan, cost.catalog(), ctx.cluster, cost.sim_config());
  if (!check.ok())
    throw SchedulerError("genome " + g.genome_id +
                         ": produced plan fails validation:\n" +
                         check.to_string());
  return res;
}

std::vector<PolicyGenome> seed_genomes() {
  std::vector<PolicyGenome> out;
  {
    PolicyGenome g;
    g.trigger.variant = TriggerVariant::periodic;
    g.trigger.period_steps = 1;
    g.scheduler.algorithm = SchedAlgorithm::greedy;
    g.migration.mode = MigrationMode::full;
    g.lineage.mutation =
        "seed: greedy solver, reschedule every step, rebuild from scratch";
    out.push_back(finalize_genome(g));
  }
  {
    PolicyGenome g;
    g.trigger.variant = TriggerVariant::cost_benefit;
    g.trigger.margin_seconds = 0.0;
    g.scheduler.algorithm = SchedAlgorithm::exact;
    // Node budget binds before wall time so truncation points reproduce.
    g.scheduler.node_limit = 100000;
    g.migration.mode = MigrationMode::penalized;
    g.migration.w = 1.0;
    g.lineage.mutation =
        "seed: exhaustive solver, fire when gain beats move cost, moves priced";
    out.push_back(finalize_genome(g));
  }
  {
    PolicyGenome g;
    g.trigger.variant = TriggerVariant::workload_delta;
    g.trigger.delta = 0.2;
    g.scheduler.algorithm = SchedAlgorithm::local_search;
    g.migration.mode = MigrationMode::minimal;
    g.lineage.mutation =
        "seed: local-search solver, fire on 20% shift, move displaced only";
    out.push_back(finalize_genome(g));
  }
  return out;
}

}  // namespace evoserve
