#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <tuple>

#include "evoserve/plan.hpp"

namespace evoserve {

// Seam between replay and the analytic simulator. The default engine prices
// everything with the roofline model; tests substitute scripted engines to
// drive replay with synthetic costs. Implementations must be total: coverage
// gaps price at the penalty instead of throwing.
class CostModel {
 public:
  virtual ~CostModel() = default;

  virtual MakespanResult plan_makespan(const ServingPlan& plan,
                                       const WorkloadSnapshot& wl) = 0;
  virtual double reconfig_cost(const std::optional<ServingPlan>& prev,
                               const ServingPlan& next) = 0;
  // Weight staging of a cold-started plan, charged into the first interval.
  virtual double load_cost(const ServingPlan& plan) = 0;
  // Serving under the outgoing plan while the scheduler runs: the wall time
  // spent scheduling, scaled by how much slower the old plan is on the new
  // workload. Never negative; a faster old plan costs nothing.
  virtual double stale_cost(double sched_wall, const ServingPlan& prev,
                            const ServingPlan& next, const WorkloadSnapshot& wl);
};

class AnalyticCostModel : public CostModel {
 public:
  AnalyticCostModel(const Catalog& cat, const SimConfig& cfg)
      : cat_(cat), cfg_(cfg) {}

  MakespanResult plan_makespan(const ServingPlan& plan,
                               const WorkloadSnapshot& wl) override;
  double reconfig_cost(const std::optional<ServingPlan>& prev,
                       const ServingPlan& next) override;
  double load_cost(const ServingPlan& plan) override;

  // Memoized serve_latency; shared by the schedulers so repeated makespans
  // across a replay cost one evaluation per distinct shape.
  double group_latency(const std::string& model, const std::string& gpu, int tp,
                       long batch, long prefill_len, long decode_len);

  const Catalog& catalog() const { return cat_; }
  const SimConfig& sim_config() const { return cfg_; }

 private:
  const Catalog& cat_;
  SimConfig cfg_;
  std::mutex mu_;
  std::map<std::tuple<std::string, std::string, int, long, long, long>, double>
      memo_;
};

}  // namespace evoserve
