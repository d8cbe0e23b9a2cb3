#pragma once

#include <atomic>
#include <optional>
#include <string>
#include <vector>

#include "evoserve/cost_model.hpp"
#include "evoserve/plan.hpp"

namespace evoserve {

enum class SchedAlgorithm { greedy, local_search, exact };

std::string to_string(SchedAlgorithm a);
SchedAlgorithm sched_algorithm_from_string(const std::string& s);

// Models at or above the weight threshold must shard at least this wide,
// whatever the memory check says. Mirrors deployments that split large models
// for latency headroom, not only for fit.
struct TpFloorRule {
  double min_weight_bytes = 60e9;
  int min_tp = 4;
  bool operator==(const TpFloorRule&) const = default;
};

enum class BatchPolicy { curated, exhaustive_up_to_cap };

struct SchedulerConfig {
  SchedAlgorithm algorithm = SchedAlgorithm::greedy;
  double time_budget_seconds = 10.0;
  BatchPolicy batch_policy = BatchPolicy::curated;
  std::vector<long> curated_set = {1, 2, 3, 4, 6, 8, 16, 20, 24,
                                   28, 32, 40, 48, 64};
  std::vector<TpFloorRule> tp_floor_rules = {{60e9, 4}};
  double secondary_objective_epsilon = 0.05;
  double relative_gap = 0.003;
  long node_limit = 2000000;
  unsigned seed = 0;
  // Diagnostic: replace the per-variable replica bound with the loosest
  // capacity bound. Same optimum, larger search space.
  bool loose_variable_bounds = false;

  bool operator==(const SchedulerConfig&) const = default;
};

struct SchedulingInstance {
  WorkloadSnapshot workload;
  ClusterState cluster;
  std::optional<ServingPlan> deployed;
  double migration_weight = 0;  // scales reconfig distance in the objective
};

struct SchedResult {
  ServingPlan plan;
  double objective = 0;
  bool feasible = true;
  bool shortfall = false;  // best-effort plan undershoots some demand
  long work_units = 0;     // candidates/nodes/moves examined
  std::string note;
};

class SchedulerError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Cooperative cancellation; polled once per node/candidate.
using CancelFlag = std::atomic<bool>;

// Batch sizes worth trying for one model: the curated ladder plus every
// divisor of the demand, clipped to [1, batch_cap]; or the full range when
// exhaustive. Sorted ascending, duplicates removed.
std::vector<long> batch_candidates(const DemandEntry& dem,
                                   const SchedulerConfig& cfg);

// Throws SchedulerError on any out-of-range field. Every solver entry point
// runs this; callers holding configs from external sources can run it early.
void validate_scheduler_config(const SchedulerConfig& cfg);

// Replicas of (model, gpu, tp, batch) ever worth opening: capacity over tp,
// but never more than demand over batch.
int per_variable_bound(long batch_demand, long batch, int tp, int available);

// Secondary-objective weight 1 + 0.5 * rank, ranks ascending by weight size.
std::map<std::string, double> secondary_weights(const Catalog& cat,
                                                const WorkloadSnapshot& wl);

// Full objective for any coverage-complete plan: balanced makespan, the
// weighted per-model sum, and the migration distance from the deployed plan.
double plan_objective(const ServingPlan& plan, const SchedulingInstance& inst,
                      const SchedulerConfig& cfg, AnalyticCostModel& cost);

SchedResult greedy_schedule(const SchedulingInstance& inst,
                            const SchedulerConfig& cfg, AnalyticCostModel& cost,
                            CancelFlag* cancel = nullptr);

SchedResult exact_schedule(const SchedulingInstance& inst,
                           const SchedulerConfig& cfg, AnalyticCostModel& cost,
                           CancelFlag* cancel = nullptr);

SchedResult local_search_schedule(const SchedulingInstance& inst,
                                  const SchedulerConfig& cfg,
                                  AnalyticCostModel& cost,
                                  CancelFlag* cancel = nullptr);

// Exhaustive enumeration over the same bounded variables; refuses instances
// whose space exceeds max_assignments. Ground truth for the exact solver.
SchedResult brute_force_oracle(const SchedulingInstance& inst,
                               const SchedulerConfig& cfg,
                               AnalyticCostModel& cost,
                               long max_assignments = 10000000);

}  // namespace evoserve
