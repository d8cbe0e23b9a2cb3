#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoserve/cost_model.hpp"
#include "evoserve/policy.hpp"
#include "evoserve/traces.hpp"

namespace evoserve {

// Converts one schedule call into the seconds charged as t_sched.
struct SchedTimer {
  virtual ~SchedTimer() = default;
  virtual double seconds(double wall_seconds, long work_units) = 0;
};

struct WallTimer final : SchedTimer {
  double seconds(double wall_seconds, long) override { return wall_seconds; }
};

// Work-proportional stand-in for the wall clock. Replays become bit-identical
// across runs; the default rate charges a microsecond per unit of search work.
struct WorkUnitTimer final : SchedTimer {
  double seconds_per_unit = 1e-6;
  WorkUnitTimer() = default;
  explicit WorkUnitTimer(double s) : seconds_per_unit(s) {}
  double seconds(double, long work_units) override {
    return double(work_units) * seconds_per_unit;
  }
};

struct IntervalCosts {
  int index = 0;  // 1-based; the first interval is the cold start
  long step = 0;  // monitoring step whose trigger opened this interval
  double t_sched = 0;
  double t_stale = 0;     // zero on the cold start
  double t_reconfig = 0;  // zero on the cold start
  double t_serve = 0;
  bool operator==(const IntervalCosts&) const = default;
};

struct EvalReport {
  std::string genome_id;
  std::string trace_id;
  int n = 0;  // interval count: the cold start plus one per later trigger
  std::vector<IntervalCosts> intervals;
  double sum_sched = 0;
  double sum_stale = 0;
  double sum_reconfig = 0;
  double sum_serve = 0;
  // Cold-start scheduling plus every stale, reconfig, and serve cost. Later
  // intervals' t_sched stays out by construction; sum_sched reports it.
  double t_total = 0;
  bool failed = false;
  std::string failure_note;

  // What selection ranks by: a failed candidate is infinitely bad while its
  // partial breakdown above stays readable.
  double fitness() const;
  bool operator==(const EvalReport&) const = default;
};

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ReplayOptions {
  double monitoring_step_seconds = 5.0;
  SchedTimer* timer = nullptr;   // null: real wall clock
  CostModel* pricing = nullptr;  // null: price with the scheduling model
  // Set by a watchdog to abandon in-flight scheduling; once raised, remaining
  // schedule calls fail fast and the replay finishes cheaply.
  CancelFlag* cancel = nullptr;
};

// Drives one genome through monitoring points, pricing every step. replay()
// walks a trace start to finish; the serving runtime instead feeds points one
// at a time and may swap the genome between them.
class ReplayEngine {
 public:
  explicit ReplayEngine(AnalyticCostModel& cost, const ReplayOptions& opt = {});

  // Throws EvalError when the genome fails validation.
  void reset(const PolicyGenome& genome, const std::string& trace_id);

  // One monitoring point. A schedule failure marks the report failed and the
  // previous plan, when there is one, keeps serving; nothing propagates.
  void observe(const WorkloadSnapshot& wl, const ClusterState& cluster,
               long step_index);

  // Swap the driven genome. Accumulated costs, the deployed plan, and the
  // trigger bookkeeping carry over; takes effect from the next observe call.
  void adopt(const PolicyGenome& genome);

  const EvalReport& report() const { return rep_; }
  const std::optional<ServingPlan>& deployed() const { return deployed_; }
  const PolicyGenome& genome() const { return genome_; }

 private:
  AnalyticCostModel& cost_;
  ReplayOptions opt_;
  WallTimer wall_;
  PolicyGenome genome_;
  EvalReport rep_;
  std::optional<ServingPlan> deployed_;
  std::optional<WorkloadSnapshot> reference_;
  long last_reschedule_ = -1;

  void refresh_aggregates();
};

// Monitoring points sit on a fixed grid over the trace's time span; each
// takes its workload and cluster from the latest record at or before it.
// Pass the trace's own cadence to make records and points coincide.
EvalReport replay(const PolicyGenome& genome, const Trace& trace,
                  AnalyticCostModel& cost, const ReplayOptions& opt = {});

struct FeedbackDelta {
  std::string trace_id;
  int d_n = 0;
  double d_sched = 0;
  double d_stale = 0;
  double d_reconfig = 0;
  double d_serve = 0;
  double d_total = 0;
  std::string text;  // short block fed into mutation prompts
};

// Child minus parent, component by component. Throws EvalError when the two
// reports replayed different traces.
FeedbackDelta compare_feedback(const EvalReport& parent, const EvalReport& child);

// Summary table then per-interval rows, separated by a blank line.
std::string report_csv(const EvalReport& rep);

}  // namespace evoserve
