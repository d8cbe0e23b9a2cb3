#pragma once

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoserve/catalog.hpp"
#include "evoserve/sim.hpp"

namespace evoserve {

// One replication unit: `count` replicas, each spanning `tp` GPUs of one type
// and serving `batch` requests per pass. A group with count 0 is inactive.
struct ReplicaGroup {
  std::string model;
  std::string gpu;
  int tp = 1;
  long batch = 1;
  int count = 0;

  bool active() const { return count > 0; }
  bool operator==(const ReplicaGroup&) const = default;
};

struct ServingPlan {
  std::vector<ReplicaGroup> groups;

  bool operator==(const ServingPlan&) const = default;
  int gpus_used(const std::string& gpu) const;
  std::vector<std::string> models() const;  // sorted, active groups only
};

// Demand for one model at one monitoring point. batch_demand is the number of
// concurrent requests to place; batch_cap bounds any single replica's batch.
struct DemandEntry {
  long batch_demand = 0;
  long prefill_len = 1;
  long decode_len = 1;
  long batch_cap = 64;
  bool operator==(const DemandEntry&) const = default;
};

struct WorkloadSnapshot {
  std::map<std::string, DemandEntry> demand;  // model name -> demand
  bool operator==(const WorkloadSnapshot&) const = default;
};

struct ClusterState {
  std::map<std::string, int> available;  // gpu type -> GPUs offered
  bool operator==(const ClusterState&) const = default;
  int available_of(const std::string& gpu) const;
};

// Everything a policy may look at when deciding. reference_workload is the
// snapshot the deployed plan was scheduled against; the replay loop maintains
// it so triggers stay stateless.
struct Context {
  WorkloadSnapshot workload;
  ClusterState cluster;
  std::optional<ServingPlan> deployed;
  std::optional<WorkloadSnapshot> reference_workload;
};

class PlanError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ValidationReport {
  std::vector<std::string> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

// TP degrees a GPU type accepts: powers of two up to twice the node size,
// never above 8.
std::vector<int> tp_options(const GpuType& g);

// Structural checks: names resolve, tp/batch/count ranges, head divisibility,
// per-type capacity against the cluster, per-shard memory fit. Violations are
// data; nothing throws on a merely invalid plan.
ValidationReport validate_plan(const ServingPlan& plan, const Catalog& cat,
                               const ClusterState& cluster, const SimConfig& cfg);

// Models whose multiset of (gpu, tp, batch, count) tuples changed.
std::vector<std::string> plan_diff(const ServingPlan& prev,
                                   const ServingPlan& next);

struct MakespanResult {
  double t_balanced = 0;
  std::map<std::string, double> per_model;
  long total_passes = 0;  // sum of serial passes across models, >= model count
};

// Per-model completion time: slowest active group times the serial passes
// needed when aggregate per-pass capacity undershoots demand; the makespan is
// the max over models. Infeasible or shape-invalid groups price at
// cfg.penalty_latency. A model with positive demand and no active group throws.
MakespanResult plan_makespan(const ServingPlan& plan, const WorkloadSnapshot& wl,
                             const Catalog& cat, const SimConfig& cfg);

struct ReconfigCost {
  double terminate = 0;
  double load = 0;
  double total() const { return terminate + load; }
};

// Two max-based phases: drain whatever changed, then load whatever changed,
// both over the host link. A (model, gpu type) pair participates only when its
// (tp, count) multiset on that type differs between the plans; batch-only
// changes move no weights. Identical plans cost exactly zero.
ReconfigCost reconfig_cost(const std::optional<ServingPlan>& prev,
                           const ServingPlan& next, const Catalog& cat);

std::string plan_to_json(const ServingPlan& p);
ServingPlan plan_from_json(const std::string& text);
ServingPlan load_plan(const std::string& path);
void save_plan(const ServingPlan& p, const std::string& path);

std::string workload_to_json(const WorkloadSnapshot& w);
WorkloadSnapshot workload_from_json(const std::string& text);

}  // namespace evoserve
