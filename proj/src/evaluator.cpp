#include "evoserve/evaluator.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <sstream>

namespace evoserve {

double EvalReport::fitness() const {
  return failed ? std::numeric_limits<double>::infinity() : t_total;
}

ReplayEngine::ReplayEngine(AnalyticCostModel& cost, const ReplayOptions& opt)
    : cost_(cost), opt_(opt) {}

void ReplayEngine::reset(const PolicyGenome& genome,
                         const std::string& trace_id) {
  const auto rep = validate_genome(genome);
  if (!rep.ok())
    throw EvalError("cannot replay invalid genome " + genome.genome_id + ":\n" +
                    rep.to_string());
  genome_ = genome;
  rep_ = EvalReport{};
  rep_.genome_id = genome.genome_id;
  rep_.trace_id = trace_id;
  deployed_.reset();
  reference_.reset();
  last_reschedule_ = -1;
}

void ReplayEngine::adopt(const PolicyGenome& genome) {
  const auto rep = validate_genome(genome);
  if (!rep.ok())
    throw EvalError("cannot adopt invalid genome " + genome.genome_id + ":\n" +
                    rep.to_string());
  genome_ = genome;
}

void ReplayEngine::observe(const WorkloadSnapshot& wl,
                           const ClusterState& cluster, long step_index) {
  Context ctx;
  ctx.workload = wl;
  ctx.cluster = cluster;
  ctx.deployed = deployed_;
  ctx.reference_workload = reference_;

  CostModel& pricing = opt_.pricing ? *opt_.pricing : cost_;
  SchedTimer& timer = opt_.timer ? *opt_.timer : wall_;

  if (should_reschedule(genome_, ctx, step_index, last_reschedule_, cost_)) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const SchedResult res = policy_schedule(genome_, ctx, cost_, opt_.cancel);
      const double wall =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      IntervalCosts ic;
      ic.index = int(rep_.intervals.size()) + 1;
      ic.step = step_index;
      ic.t_sched = timer.seconds(wall, res.work_units);
      if (ic.index == 1) {
        // Cold start stages weights from scratch; that wait is scheduling
        // time, not reconfiguration.
        ic.t_sched += pricing.load_cost(res.plan);
      } else {
        ic.t_stale = pricing.stale_cost(ic.t_sched, *deployed_, res.plan, wl);
        ic.t_reconfig = pricing.reconfig_cost(deployed_, res.plan);
      }
      deployed_ = res.plan;
      reference_ = wl;
      last_reschedule_ = step_index;
      rep_.intervals.push_back(ic);
    } catch (const SchedulerError& e) {
      if (!rep_.failed) {
        rep_.failed = true;
        rep_.failure_note = e.what();
      }
      // The deployed plan, when there is one, keeps serving below.
    }
  }

  if (deployed_ && !rep_.intervals.empty())
    rep_.intervals.back().t_serve +=
        pricing.plan_makespan(*deployed_, wl).t_balanced;
  refresh_aggregates();
}

void ReplayEngine::refresh_aggregates() {
  rep_.n = int(rep_.intervals.size());
  rep_.sum_sched = rep_.sum_stale = rep_.sum_reconfig = rep_.sum_serve = 0;
  for (const auto& ic : rep_.intervals) {
    rep_.sum_sched += ic.t_sched;
    rep_.sum_stale += ic.t_stale;
    rep_.sum_reconfig += ic.t_reconfig;
    rep_.sum_serve += ic.t_serve;
  }
  const double cold_sched = rep_.intervals.empty() ? 0 : rep_.intervals[0].t_sched;
  rep_.t_total = cold_sched + rep_.sum_stale + rep_.sum_reconfig + rep_.sum_serve;
}

EvalReport replay(const PolicyGenome& genome, const Trace& trace,
                  AnalyticCostModel& cost, const ReplayOptions& opt) {
  if (trace.records.empty())
    throw EvalError("trace " + trace.id + " has no records");
  if (!(opt.monitoring_step_seconds > 0))
    throw EvalError("monitoring step must be positive");

  ReplayEngine engine(cost, opt);
  engine.reset(genome, trace.id);

  const double t_end = trace.records.back().t + trace.cadence_seconds;
  size_t ri = 0;
  long step = 0;
  for (double t = trace.records.front().t; t < t_end;
       t += opt.monitoring_step_seconds, ++step) {
    while (ri + 1 < trace.records.size() && trace.records[ri + 1].t <= t) ++ri;
    engine.observe(trace.records[ri].workload, trace.records[ri].cluster, step);
  }
  return engine.report();
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string signed_num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%+.12g", v);
  return buf;
}

}  // namespace

FeedbackDelta compare_feedback(const EvalReport& parent,
                               const EvalReport& child) {
  if (parent.trace_id != child.trace_id)
    throw EvalError("feedback compares different traces: " + parent.trace_id +
                    " vs " + child.trace_id);
  FeedbackDelta d;
  d.trace_id = parent.trace_id;
  d.d_n = child.n - parent.n;
  d.d_sched = child.sum_sched - parent.sum_sched;
  d.d_stale = child.sum_stale - parent.sum_stale;
  d.d_reconfig = child.sum_reconfig - parent.sum_reconfig;
  d.d_serve = child.sum_serve - parent.sum_serve;
  d.d_total = child.t_total - parent.t_total;

  std::ostringstream os;
  os << "trace " << d.trace_id << ", parent " << parent.genome_id << " vs child "
     << child.genome_id << "\n";
  os << "N: " << parent.n << " -> " << child.n << " ("
     << (d.d_n >= 0 ? "+" : "") << d.d_n << ")\n";
  os << "sum t_sched: " << num(parent.sum_sched) << " -> "
     << num(child.sum_sched) << " (" << signed_num(d.d_sched) << ")\n";
  os << "sum t_stale: " << num(parent.sum_stale) << " -> "
     << num(child.sum_stale) << " (" << signed_num(d.d_stale) << ")\n";
  os << "sum t_reconfig: " << num(parent.sum_reconfig) << " -> "
     << num(child.sum_reconfig) << " (" << signed_num(d.d_reconfig) << ")\n";
  os << "sum t_serve: " << num(parent.sum_serve) << " -> "
     << num(child.sum_serve) << " (" << signed_num(d.d_serve) << ")\n";
  os << "T_total: " << num(parent.t_total) << " -> " << num(child.t_total)
     << " (" << signed_num(d.d_total) << ")";
  if (child.failed)
    os << "\nchild failed: " << child.failure_note;
  else if (d.d_total > 0)
    os << "  regression";
  d.text = os.str();
  return d;
}

std::string report_csv(const EvalReport& rep) {
  std::ostringstream os;
  os << "genome_id,trace_id,n,sum_sched,sum_stale,sum_reconfig,sum_serve,"
        "t_total,failed\n";
  os << rep.genome_id << "," << rep.trace_id << "," << rep.n << ","
     << num(rep.sum_sched) << "," << num(rep.sum_stale) << ","
     << num(rep.sum_reconfig) << "," << num(rep.sum_serve) << ","
     << num(rep.t_total) << "," << (rep.failed ? 1 : 0) << "\n\n";
  os << "interval,step,t_sched,t_stale,t_reconfig,t_serve\n";
  for (const auto& ic : rep.intervals)
    os << ic.index << "," << ic.step << "," << num(ic.t_sched) << ","
       << num(ic.t_stale) << "," << num(ic.t_reconfig) << ","
       << num(ic.t_serve) << "\n";
  return os.str();
}

}  // namespace evoserve
