#include "evoserve/cost_model.hpp"

#include <algorithm>
#include <cmath>

namespace evoserve {

double CostModel::stale_cost(double sched_wall, const ServingPlan& prev,
                             const ServingPlan& next, const WorkloadSnapshot& wl) {
  if (sched_wall <= 0) return 0;
  const double before = plan_makespan(prev, wl).t_balanced;
  const double after = plan_makespan(next, wl).t_balanced;
  if (after <= 0) return 0;
  return sched_wall * std::max(0.0, before / after - 1.0);
}

MakespanResult AnalyticCostModel::plan_makespan(const ServingPlan& plan,
                                                const WorkloadSnapshot& wl) {
  MakespanResult res;
  for (const auto& [name, dem] : wl.demand) {
    if (dem.batch_demand <= 0) continue;
    const auto& model = cat_.model(name);
    double slowest = 0;
    long capacity = 0;
    bool any = false, penalized = false;
    for (const auto& g : plan.groups) {
      if (g.model != name || !g.active()) continue;
      any = true;
      if (model.q_heads % g.tp != 0 ||
          !memory_feasible(model, cat_.gpu(g.gpu), g.tp, cfg_.mem_threshold)) {
        penalized = true;
        continue;
      }
      slowest = std::max(slowest, group_latency(name, g.gpu, g.tp, g.batch,
                                                dem.prefill_len, dem.decode_len));
      capacity += g.batch * g.count;
    }
    double lz;
    long passes = 1;
    if (!any || penalized || capacity <= 0) {
      lz = cfg_.penalty_latency;
    } else {
      passes = (dem.batch_demand + capacity - 1) / capacity;
      lz = std::min(slowest * double(passes), cfg_.penalty_latency);
    }
    res.per_model[name] = lz;
    res.total_passes += passes;
    res.t_balanced = std::max(res.t_balanced, lz);
  }
  return res;
}

double AnalyticCostModel::reconfig_cost(const std::optional<ServingPlan>& prev,
                                        const ServingPlan& next) {
  return evoserve::reconfig_cost(prev, next, cat_).total();
}

double AnalyticCostModel::load_cost(const ServingPlan& plan) {
  return evoserve::reconfig_cost(std::nullopt, plan, cat_).load;
}

double AnalyticCostModel::group_latency(const std::string& model,
                                        const std::string& gpu, int tp,
                                        long batch, long prefill_len,
                                        long decode_len) {
  const auto key = std::make_tuple(model, gpu, tp, batch, prefill_len, decode_len);
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = memo_.find(key);
    if (it != memo_.end()) return it->second;
  }
  const double v = serve_latency(cat_.model(model), cat_.gpu(gpu), tp, batch,
                                 prefill_len, decode_len, cfg_);
  std::lock_guard<std::mutex> lock(mu_);
  memo_.emplace(key, v);
  return v;
}

}  // namespace evoserve
