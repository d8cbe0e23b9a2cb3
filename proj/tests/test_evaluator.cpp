#include "evoserve/evaluator.hpp"

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "evoserve/catalog.hpp"
#include "helpers.hpp"

using namespace evoserve;
using namespace evoserve::testing;

namespace {

Catalog bench_catalog() {
  Catalog c;
  c.gpus.push_back(make_gpu("g", 80e9, 1e12, 1e12, 1e12, 1e12, 64e9, 8));
  c.models.push_back(make_model("m", 1, 2, 333333328, 4, 2, 2));
  return c;
}

Trace flat_trace(int points) {
  Trace tr;
  tr.id = "feedback-bench";
  tr.cadence_seconds = 60;
  for (int i = 0; i < points; ++i) {
    TraceRecord r;
    r.t = 60.0 * i;
    r.workload.demand["m"] = demand(8, 16, 16, 16);
    r.cluster.available = {{"g", 8}};
    tr.records.push_back(std::move(r));
  }
  return tr;
}

PolicyGenome periodic_genome(long k) {
  PolicyGenome g;
  g.trigger.variant = TriggerVariant::periodic;
  g.trigger.period_steps = k;
  g.scheduler.tp_floor_rules.clear();
  return finalize_genome(g);
}

// Scripted pricing: a fixed serve charge per monitoring point and fixed
// stale and reconfiguration charges per post-cold-start interval.
struct ScriptedCosts final : CostModel {
  double serve_per_point;
  double stale_per_event;
  double reconfig_per_event;
  ScriptedCosts(double serve, double stale, double reconfig)
      : serve_per_point(serve), stale_per_event(stale),
        reconfig_per_event(reconfig) {}

  MakespanResult plan_makespan(const ServingPlan&,
                               const WorkloadSnapshot&) override {
    MakespanResult r;
    r.t_balanced = serve_per_point;
    return r;
  }
  double reconfig_cost(const std::optional<ServingPlan>&,
                       const ServingPlan&) override {
    return reconfig_per_event;
  }
  double load_cost(const ServingPlan&) override { return 0; }
  double stale_cost(double, const ServingPlan&, const ServingPlan&,
                    const WorkloadSnapshot&) override {
    return stale_per_event;
  }
};

EvalReport scripted_replay(long period, const ScriptedCosts& script) {
  static Catalog cat = bench_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  ScriptedCosts pricing = script;
  WorkUnitTimer zero(0.0);
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &zero;
  opt.pricing = &pricing;
  return replay(periodic_genome(period), flat_trace(12), cost, opt);
}

double recompute_total(const EvalReport& r) {
  double stale = 0, reconfig = 0, serve = 0;
  for (const auto& ic : r.intervals) {
    stale += ic.t_stale;
    reconfig += ic.t_reconfig;
    serve += ic.t_serve;
  }
  const double cold = r.intervals.empty() ? 0 : r.intervals[0].t_sched;
  return cold + stale + reconfig + serve;
}

}  // namespace

// The reference breakdown rows: a parent rescheduling twice after the cold
// start, a child rescheduling five times, and a child rescheduling once.
TEST_CASE("cost breakdowns reproduce the reference feedback rows") {
  const EvalReport parent = scripted_replay(5, {2.1, 3.8, 6.0});
  CHECK(parent.n == 3);
  CHECK(parent.sum_stale == doctest::Approx(7.6).epsilon(1e-12));
  CHECK(parent.sum_reconfig == doctest::Approx(12.0).epsilon(1e-12));
  CHECK(parent.sum_serve == doctest::Approx(25.2).epsilon(1e-12));
  CHECK(parent.t_total == doctest::Approx(44.8).epsilon(1e-12));

  const EvalReport child_a = scripted_replay(2, {2.0, 1.1, 0.8});
  CHECK(child_a.n == 6);
  CHECK(child_a.sum_stale == doctest::Approx(5.5).epsilon(1e-12));
  CHECK(child_a.sum_reconfig == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(child_a.sum_serve == doctest::Approx(24.0).epsilon(1e-12));
  CHECK(child_a.t_total == doctest::Approx(33.5).epsilon(1e-12));

  const EvalReport child_b = scripted_replay(11, {23.0 / 12, 10.0, 17.0});
  CHECK(child_b.n == 2);
  CHECK(child_b.sum_stale == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(child_b.sum_reconfig == doctest::Approx(17.0).epsilon(1e-12));
  CHECK(child_b.sum_serve == doctest::Approx(23.0).epsilon(1e-12));
  CHECK(child_b.t_total == doctest::Approx(50.0).epsilon(1e-12));

  for (const auto* r : {&parent, &child_a, &child_b}) {
    REQUIRE_FALSE(r->intervals.empty());
    CHECK(r->intervals[0].t_stale == 0.0);
    CHECK(r->intervals[0].t_reconfig == 0.0);
    CHECK(r->n == int(r->intervals.size()));
    CHECK_FALSE(r->failed);
  }
}

TEST_CASE("feedback deltas match hand arithmetic") {
  const EvalReport parent = scripted_replay(5, {2.1, 3.8, 6.0});
  const EvalReport child_a = scripted_replay(2, {2.0, 1.1, 0.8});
  const EvalReport child_b = scripted_replay(11, {23.0 / 12, 10.0, 17.0});

  const auto da = compare_feedback(parent, child_a);
  CHECK(da.d_n == 3);
  CHECK(da.d_stale == doctest::Approx(-2.1).epsilon(1e-9));
  CHECK(da.d_reconfig == doctest::Approx(-8.0).epsilon(1e-9));
  CHECK(da.d_serve == doctest::Approx(-1.2).epsilon(1e-9));
  CHECK(da.d_total == doctest::Approx(-11.3).epsilon(1e-9));
  CHECK(da.text.find("N: 3 -> 6") != std::string::npos);
  CHECK(da.text.find("regression") == std::string::npos);

  const auto db = compare_feedback(parent, child_b);
  CHECK(db.d_n == -1);
  CHECK(db.d_total == doctest::Approx(5.2).epsilon(1e-9));
  CHECK(db.text.find("regression") != std::string::npos);

  const auto self = compare_feedback(parent, parent);
  CHECK(self.d_n == 0);
  CHECK(self.d_stale == 0.0);
  CHECK(self.d_reconfig == 0.0);
  CHECK(self.d_serve == 0.0);
  CHECK(self.d_total == 0.0);

  EvalReport other = child_a;
  other.trace_id = "something-else";
  CHECK_THROWS_AS(compare_feedback(parent, other), EvalError);
}

TEST_CASE("aggregation identity holds on real replays") {
  const Catalog cat = bundled_catalog();
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;
  for (const char* trace_id : {"volatile-workload", "stable-workload"}) {
    const Trace tr = bundled_trace(trace_id);
    for (long period : {1L, 3L, 1000L}) {
      AnalyticCostModel cost(cat, SimConfig{});
      const EvalReport r = replay(periodic_genome(period), tr, cost, opt);
      INFO(trace_id, " periodic(", period, ")");
      CHECK_FALSE(r.failed);
      CHECK(r.t_total ==
            doctest::Approx(recompute_total(r)).epsilon(1e-12));
      double sched = 0;
      for (const auto& ic : r.intervals) sched += ic.t_sched;
      CHECK(r.sum_sched == doctest::Approx(sched).epsilon(1e-12));
    }
  }
}

TEST_CASE("interval count is the cold start plus the true triggers") {
  const Catalog cat = bundled_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;
  const Trace tr = bundled_trace("volatile-workload");

  CHECK(replay(periodic_genome(1), tr, cost, opt).n == 10);
  CHECK(replay(periodic_genome(3), tr, cost, opt).n == 4);

  const EvalReport never = replay(periodic_genome(1000), tr, cost, opt);
  CHECK(never.n == 1);
  CHECK(never.sum_stale == 0.0);
  CHECK(never.sum_reconfig == 0.0);

  // The monitoring grid is independent of the record cadence.
  opt.monitoring_step_seconds = 30;
  CHECK(replay(periodic_genome(1), tr, cost, opt).n == 20);
  opt.monitoring_step_seconds = 5;
  CHECK(replay(periodic_genome(1), bundled_trace("elastic-azure"), cost, opt).n ==
        24);
}

TEST_CASE("replays are bit-identical under the work-unit timer") {
  const Catalog cat = bundled_catalog();
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;
  const Trace tr = bundled_trace("volatile-workload");
  AnalyticCostModel c1(cat, SimConfig{});
  AnalyticCostModel c2(cat, SimConfig{});
  const EvalReport a = replay(periodic_genome(2), tr, c1, opt);
  const EvalReport b = replay(periodic_genome(2), tr, c2, opt);
  CHECK(a == b);
  CHECK(a.sum_sched > 0.0);
}

TEST_CASE("a larger time budget never reports less scheduling time") {
  const Catalog cat = bench_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;

  auto with_budget = [&](double budget) {
    PolicyGenome g = periodic_genome(4);
    g.scheduler.algorithm = SchedAlgorithm::exact;
    g.scheduler.node_limit = 200;
    g.scheduler.time_budget_seconds = budget;
    return replay(finalize_genome(g), flat_trace(12), cost, opt);
  };
  const EvalReport small = with_budget(0.05);
  const EvalReport large = with_budget(10.0);
  REQUIRE(small.intervals.size() == large.intervals.size());
  for (size_t i = 0; i < small.intervals.size(); ++i)
    CHECK(large.intervals[i].t_sched >= small.intervals[i].t_sched);
}

TEST_CASE("schedule failures poison fitness without aborting the replay") {
  const Catalog cat = bench_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;

  Trace tr = flat_trace(4);
  // Capacity tops out at 8 replicas of batch 1; this cannot be covered.
  tr.records[1].workload.demand["m"] = demand(100000, 16, 16, 1);

  const PolicyGenome g = periodic_genome(1);
  const EvalReport r = replay(g, tr, cost, opt);
  CHECK(r.failed);
  CHECK(std::isinf(r.fitness()));
  CHECK(r.failure_note.find(g.genome_id) != std::string::npos);
  CHECK(std::isfinite(r.t_total));
  CHECK(r.t_total == doctest::Approx(recompute_total(r)).epsilon(1e-12));
  // The cold-start plan kept serving through the failed points.
  REQUIRE(r.n >= 1);
  CHECK(r.intervals.back().t_serve > 0.0);

  // A failure with no plan at all leaves nothing served and nothing priced.
  Trace dead = flat_trace(2);
  dead.records[0].workload.demand["m"] = demand(100000, 16, 16, 1);
  dead.records[1].workload.demand["m"] = demand(100000, 16, 16, 1);
  const EvalReport r2 = replay(g, dead, cost, opt);
  CHECK(r2.failed);
  CHECK(r2.n == 0);
  CHECK(r2.t_total == 0.0);
  CHECK(std::isinf(r2.fitness()));
}

TEST_CASE("replay rejects broken inputs up front") {
  const Catalog cat = bench_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  Trace empty;
  empty.id = "empty";
  CHECK_THROWS_AS(replay(periodic_genome(1), empty, cost), EvalError);

  ReplayOptions opt;
  opt.monitoring_step_seconds = 0;
  CHECK_THROWS_AS(replay(periodic_genome(1), flat_trace(2), cost, opt),
                  EvalError);

  PolicyGenome bad = periodic_genome(1);
  bad.trigger.period_steps = 0;  // invalid, and deliberately not re-finalized
  CHECK_THROWS_AS(replay(bad, flat_trace(2), cost), EvalError);
}

TEST_CASE("the engine accepts a new genome mid-run") {
  const Catalog cat = bench_catalog();
  AnalyticCostModel cost(cat, SimConfig{});
  WorkUnitTimer det;
  ReplayOptions opt;
  opt.monitoring_step_seconds = 60;
  opt.timer = &det;
  const Trace tr = flat_trace(6);

  ReplayEngine engine(cost, opt);
  const PolicyGenome quiet = periodic_genome(1000);
  engine.reset(quiet, tr.id);
  for (long s = 0; s < 3; ++s)
    engine.observe(tr.records[s].workload, tr.records[s].cluster, s);
  CHECK(engine.report().n == 1);

  const auto plan_before = engine.deployed();
  engine.adopt(periodic_genome(1));
  CHECK(engine.deployed() == plan_before);
  for (long s = 3; s < 6; ++s)
    engine.observe(tr.records[s].workload, tr.records[s].cluster, s);
  CHECK(engine.report().n == 4);
  CHECK(engine.report().genome_id == quiet.genome_id);
  CHECK(engine.genome().trigger.period_steps == 1);
}

TEST_CASE("csv report carries the summary and the per-interval rows") {
  const EvalReport parent = scripted_replay(5, {2.1, 3.8, 6.0});
  const std::string csv = report_csv(parent);
  CHECK(csv.find("genome_id,trace_id,n,") == 0);
  CHECK(csv.find(parent.genome_id + ",feedback-bench,3,") != std::string::npos);
  CHECK(csv.find("44.8") != std::string::npos);
  CHECK(csv.find("interval,step,t_sched,t_stale,t_reconfig,t_serve") !=
        std::string::npos);
  int interval_rows = 0;
  std::istringstream lines(csv);
  std::string line;
  while (std::getline(lines, line))
    if (!line.empty() && (line[0] == '1' || line[0] == '2' || line[0] == '3') &&
        line.find(',') == 1)
      ++interval_rows;
  CHECK(interval_rows == 3);
}
