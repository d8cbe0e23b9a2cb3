#include "evoserve/plan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evoserve {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

// Deployment signature of one model on one GPU type; batch intentionally
// excluded so batch-only retuning never charges weight movement.
using TypeSig = std::vector<std::pair<int, int>>;  // sorted (tp, count)

std::map<std::pair<std::string, std::string>, TypeSig> signatures(
    const ServingPlan& p) {
  std::map<std::pair<std::string, std::string>, TypeSig> sig;
  for (const auto& g : p.groups)
    if (g.active()) sig[{g.model, g.gpu}].push_back({g.tp, g.count});
  for (auto& [key, v] : sig) std::sort(v.begin(), v.end());
  return sig;
}

}  // namespace

int ServingPlan::gpus_used(const std::string& gpu) const {
  int used = 0;
  for (const auto& g : groups)
    if (g.gpu == gpu) used += g.tp * g.count;
  return used;
}

std::vector<std::string> ServingPlan::models() const {
  std::set<std::string> names;
  for (const auto& g : groups)
    if (g.active()) names.insert(g.model);
  return {names.begin(), names.end()};
}

int ClusterState::available_of(const std::string& gpu) const {
  auto it = available.find(gpu);
  return it == available.end() ? 0 : it->second;
}

std::string ValidationReport::to_string() const {
  if (ok()) return "ok";
  std::ostringstream os;
  for (const auto& v : violations) os << v << "\n";
  return os.str();
}

std::vector<int> tp_options(const GpuType& g) {
  std::vector<int> opts;
  for (int t = 1; t <= 8 && t <= 2 * g.gpus_per_node; t *= 2) opts.push_back(t);
  return opts;
}

ValidationReport validate_plan(const ServingPlan& plan, const Catalog& cat,
                               const ClusterState& cluster, const SimConfig& cfg) {
  ValidationReport rep;
  auto flag = [&](const std::string& s) { rep.violations.push_back(s); };
  std::map<std::string, int> used;
  for (size_t i = 0; i < plan.groups.size(); ++i) {
    const auto& g = plan.groups[i];
    const std::string where = "group " + std::to_string(i) + " (" + g.model +
                              " on " + g.gpu + "): ";
    if (!cat.has_model(g.model)) {
      flag(where + "unknown model");
      continue;
    }
    if (!cat.has_gpu(g.gpu)) {
      flag(where + "unknown gpu type");
      continue;
    }
    const auto& model = cat.model(g.model);
    const auto& gpu = cat.gpu(g.gpu);
    const auto opts = tp_options(gpu);
    if (std::find(opts.begin(), opts.end(), g.tp) == opts.end())
      flag(where + "tp " + std::to_string(g.tp) + " not offered by gpu type");
    if (g.tp >= 1 && model.q_heads % g.tp != 0)
      flag(where + "tp does not divide q_heads");
    if (g.batch < 1) flag(where + "batch must be >= 1");
    if (g.count < 0) flag(where + "count must be >= 0");
    if (g.active() && g.tp >= 1 && model.q_heads % g.tp == 0 &&
        !memory_feasible(model, gpu, g.tp, cfg.mem_threshold))
      flag(where + "per-shard weights exceed memory budget");
    if (g.active()) used[g.gpu] += g.tp * g.count;
  }
  for (const auto& [gpu, n] : used) {
    const int avail = cluster.available_of(gpu);
    if (n > avail)
      flag("gpu type " + gpu + ": plan uses " + std::to_string(n) + " of " +
           std::to_string(avail) + " available");
  }
  return rep;
}

std::vector<std::string> plan_diff(const ServingPlan& prev,
                                   const ServingPlan& next) {
  auto tuples = [](const ServingPlan& p) {
    std::map<std::string, std::vector<std::tuple<std::string, int, long, int>>> m;
    for (const auto& g : p.groups)
      if (g.active()) m[g.model].push_back({g.gpu, g.tp, g.batch, g.count});
    for (auto& [k, v] : m) std::sort(v.begin(), v.end());
    return m;
  };
  const auto a = tuples(prev), b = tuples(next);
  std::set<std::string> names;
  for (const auto& [k, v] : a) names.insert(k);
  for (const auto& [k, v] : b) names.insert(k);
  std::vector<std::string> changed;
  for (const auto& n : names) {
    const auto ia = a.find(n), ib = b.find(n);
    const bool in_a = ia != a.end(), in_b = ib != b.end();
    if (in_a != in_b || (in_a && ia->second != ib->second)) changed.push_back(n);
  }
  return changed;
}

MakespanResult plan_makespan(const ServingPlan& plan, const WorkloadSnapshot& wl,
                             const Catalog& cat, const SimConfig& cfg) {
  MakespanResult res;
  for (const auto& [name, dem] : wl.demand) {
    if (dem.batch_demand <= 0) continue;
    const auto& model = cat.model(name);
    double slowest = 0;
    long capacity = 0;
    bool any = false, penalized = false;
    for (const auto& g : plan.groups) {
      if (g.model != name || !g.active()) continue;
      any = true;
      const auto& gpu = cat.gpu(g.gpu);
      if (model.q_heads % g.tp != 0 ||
          !memory_feasible(model, gpu, g.tp, cfg.mem_threshold)) {
        penalized = true;
        continue;
      }
      slowest = std::max(slowest,
                         serve_latency(model, gpu, g.tp, g.batch, dem.prefill_len,
                                       dem.decode_len, cfg));
      capacity += g.batch * g.count;
    }
    if (!any)
      throw PlanError("plan_makespan: model " + name +
                      " has positive demand and no active group");
    double lz;
    long passes = 1;
    if (penalized || capacity <= 0) {
      lz = cfg.penalty_latency;
    } else {
      passes = (dem.batch_demand + capacity - 1) / capacity;
      lz = std::min(slowest * double(passes), cfg.penalty_latency);
    }
    res.per_model[name] = lz;
    res.total_passes += passes;
    res.t_balanced = std::max(res.t_balanced, lz);
  }
  return res;
}

ReconfigCost reconfig_cost(const std::optional<ServingPlan>& prev,
                           const ServingPlan& next, const Catalog& cat) {
  ReconfigCost cost;
  const auto before = prev ? signatures(*prev)
                           : std::map<std::pair<std::string, std::string>, TypeSig>{};
  const auto after = signatures(next);
  auto sig_of = [](const auto& m, const std::pair<std::string, std::string>& k) {
    auto it = m.find(k);
    return it == m.end() ? TypeSig{} : it->second;
  };
  for (const auto& [key, sig] : before) {
    if (sig_of(after, key) == sig) continue;
    cost.terminate = std::max(
        cost.terminate, transfer_time(cat.model(key.first), cat.gpu(key.second)));
  }
  for (const auto& [key, sig] : after) {
    if (sig_of(before, key) == sig) continue;
    cost.load = std::max(
        cost.load, transfer_time(cat.model(key.first), cat.gpu(key.second)));
  }
  return cost;
}

std::string plan_to_json(const ServingPlan& p) {
  ordered_json j;
  j["groups"] = json::array();
  for (const auto& g : p.groups) {
    ordered_json e;
    e["model"] = g.model;
    e["gpu"] = g.gpu;
    e["tp"] = g.tp;
    e["batch"] = g.batch;
    e["count"] = g.count;
    j["groups"].push_back(e);
  }
  return j.dump(2);
}

ServingPlan plan_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw PlanError(std::string("plan parse error: ") + e.what());
  }
  ServingPlan p;
  try {
    for (const auto& e : j.at("groups")) {
      ReplicaGroup g;
      g.model = e.at("model").get<std::string>();
      g.gpu = e.at("gpu").get<std::string>();
      g.tp = e.at("tp").get<int>();
      g.batch = e.at("batch").get<long>();
      g.count = e.at("count").get<int>();
      p.groups.push_back(g);
    }
  } catch (const json::exception& e) {
    throw PlanError(std::string("plan field error: ") + e.what());
  }
  return p;
}

ServingPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw PlanError("cannot open plan file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return plan_from_json(ss.str());
}

void save_plan(const ServingPlan& p, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw PlanError("cannot write plan file: " + path);
  out << plan_to_json(p) << "\n";
}

std::string workload_to_json(const WorkloadSnapshot& w) {
  ordered_json j;
  for (const auto& [name, d] : w.demand) {
    ordered_json e;
    e["batch_demand"] = d.batch_demand;
    e["prefill_len"] = d.prefill_len;
    e["decode_len"] = d.decode_len;
    e["batch_cap"] = d.batch_cap;
    j[name] = e;
  }
  return j.dump(2);
}

WorkloadSnapshot workload_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw PlanError(std::string("workload parse error: ") + e.what());
  }
  WorkloadSnapshot w;
  for (const auto& [name, e] : j.items()) {
    DemandEntry d;
    d.batch_demand = e.at("batch_demand").get<long>();
    d.prefill_len = e.at("prefill_len").get<long>();
    d.decode_len = e.at("decode_len").get<long>();
    d.batch_cap = e.value("batch_cap", 64L);
    w.demand[name] = d;
  }
  return w;
}

}  // namespace evoserve
