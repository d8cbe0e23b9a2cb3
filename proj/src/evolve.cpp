#include "evoserve/evolve.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <future>
#include <limits>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

namespace evoserve {

using Clock = std::chrono::steady_clock;
using ojson = nlohmann::ordered_json;

std::string to_string(MutatorKind m) {
  switch (m) {
    case MutatorKind::rule_based: return "rule_based";
    case MutatorKind::llm: return "llm";
    case MutatorKind::mixed: return "mixed";
  }
  return "rule_based";
}

MutatorKind mutator_kind_from_string(const std::string& s) {
  if (s == "rule_based") return MutatorKind::rule_based;
  if (s == "llm") return MutatorKind::llm;
  if (s == "mixed") return MutatorKind::mixed;
  throw EvolveError("unknown mutator kind: " + s);
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::max_iterations: return "max_iterations";
    case StopReason::converged: return "converged";
    case StopReason::timed_out: return "timed_out";
  }
  return "max_iterations";
}

void validate_evolve_config(const EvolveConfig& cfg) {
  auto bad = [](const std::string& s) { throw EvolveError("evolve config: " + s); };
  if (cfg.max_iterations < 0) bad("max_iterations must be >= 0");
  if (cfg.population_size < 1) bad("population_size must be >= 1");
  if (cfg.num_islands < 1) bad("num_islands must be >= 1");
  if (!(cfg.elite_selection_ratio > 0) || cfg.elite_selection_ratio > 1)
    bad("elite_selection_ratio must be in (0, 1]");
  if (cfg.sched_axis_cells < 1) bad("sched_axis_cells must be >= 1");
  if (cfg.stall_window < 1) bad("stall_window must be >= 1");
  if (!(cfg.candidate_timeout_seconds > 0))
    bad("candidate_timeout_seconds must be positive");
  if (!(cfg.evolution_timeout_seconds > 0))
    bad("evolution_timeout_seconds must be positive");
  if (cfg.parallel_eval_degree < 1) bad("parallel_eval_degree must be >= 1");
  if (cfg.llm_share < 0 || cfg.llm_share > 1) bad("llm_share must be in [0, 1]");
  if (!(cfg.replay.monitoring_step_seconds > 0))
    bad("replay monitoring step must be positive");
}

std::optional<Descriptor> feature_descriptor(const EvalReport& rep,
                                             const EvolveConfig& cfg) {
  if (rep.failed) return std::nullopt;
  Descriptor d;
  if (rep.n <= 1) d.n_cell = 0;
  else if (rep.n == 2) d.n_cell = 1;
  else if (rep.n <= 4) d.n_cell = 2;
  else if (rep.n <= 8) d.n_cell = 3;
  else d.n_cell = 4;
  // Decade of the summed scheduling time, anchored so that anything at or
  // under 0.1us shares the lowest cell with a literal zero.
  if (rep.sum_sched <= 1e-7) d.sched_cell = 0;
  else
    d.sched_cell = std::clamp(int(std::floor(std::log10(rep.sum_sched))) + 7, 0,
                              cfg.sched_axis_cells - 1);
  return d;
}

Archive::Archive(int islands, int n_cells, int sched_cells)
    : islands_(islands), n_cells_(n_cells), sched_cells_(sched_cells),
      cells_(size_t(islands) * n_cells * sched_cells) {}

bool Archive::insert(const Candidate& c) {
  if (!c.descriptor) return false;
  const auto& d = *c.descriptor;
  auto& cell = cells_.at((size_t(c.island) * n_cells_ + d.n_cell) * sched_cells_ +
                         d.sched_cell);
  if (cell && cell->fitness() <= c.fitness()) return false;
  cell = c;
  return true;
}

const std::optional<Candidate>& Archive::at(int island, const Descriptor& d) const {
  return cells_.at((size_t(island) * n_cells_ + d.n_cell) * sched_cells_ +
                   d.sched_cell);
}

std::vector<const Candidate*> Archive::occupied(int island) const {
  std::vector<const Candidate*> out;
  const size_t per = size_t(n_cells_) * sched_cells_;
  const size_t lo = island < 0 ? 0 : island * per;
  const size_t hi = island < 0 ? cells_.size() : lo + per;
  for (size_t i = lo; i < hi; ++i)
    if (cells_[i]) out.push_back(&*cells_[i]);
  std::stable_sort(out.begin(), out.end(),
                   [](const Candidate* a, const Candidate* b) {
                     return a->fitness() < b->fitness();
                   });
  return out;
}

const Candidate* Archive::best() const {
  const Candidate* b = nullptr;
  for (const auto& cell : cells_)
    if (cell && (!b || cell->fitness() < b->fitness())) b = &*cell;
  return b;
}

namespace {

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

enum Op {
  kLoosenTrigger,
  kTightenTrigger,
  kSwitchTriggerVariant,
  kSwitchSchedulerAlgorithm,
  kHalveTimeBudget,
  kDoubleTimeBudget,
  kPerturbMigrationWeight,
  kSwitchMigrationMode,
  kAddBatchCandidate,
  kRemoveBatchCandidate,
  kToggleTpFloor,
  kOpCount,
};

constexpr double kTriggerBias = 4.0;

int draw_op(const FeedbackDelta* delta, std::mt19937_64& rng) {
  double w[kOpCount];
  std::fill(w, w + kOpCount, 1.0);
  if (delta) {
    // Improvement that came with more rescheduling argues for loosening the
    // trigger further; every other sign combination argues the mirror.
    const double evidence = -delta->d_total * double(delta->d_n);
    if (evidence > 0) w[kLoosenTrigger] *= kTriggerBias;
    else if (evidence < 0) w[kTightenTrigger] *= kTriggerBias;
  }
  double total = 0;
  for (double x : w) total += x;
  double r = std::uniform_real_distribution<double>(0.0, total)(rng);
  for (int i = 0; i < kOpCount; ++i) {
    r -= w[i];
    if (r < 0) return i;
  }
  return kOpCount - 1;
}

size_t pick_index(size_t n, std::mt19937_64& rng) {
  return std::uniform_int_distribution<size_t>(0, n - 1)(rng);
}

// Scales the live trigger threshold. Loosening means firing more often;
// integer periods are nudged past rounding so the edit always moves when it
// can, and zero thresholds step onto a small finite value when tightened.
std::string scale_trigger(TriggerSpec& t, bool loosen, std::mt19937_64& rng) {
  const double f = loosen
                       ? std::uniform_real_distribution<double>(0.5, 1.0)(rng)
                       : std::uniform_real_distribution<double>(1.0, 2.0)(rng);
  const char* name = loosen ? "loosen_trigger" : "tighten_trigger";
  std::ostringstream os;
  switch (t.variant) {
    case TriggerVariant::periodic: {
      long k = std::lround(double(t.period_steps) * f);
      if (loosen && k >= t.period_steps) k = t.period_steps - 1;
      if (!loosen && k <= t.period_steps) k = t.period_steps + 1;
      k = std::max(1L, k);
      os << name << " period " << t.period_steps << " -> " << k;
      t.period_steps = k;
      break;
    }
    case TriggerVariant::workload_delta: {
      const double d = t.delta == 0 && !loosen ? 0.05 : t.delta * f;
      os << name << " delta " << num(t.delta) << " -> " << num(d);
      t.delta = d;
      break;
    }
    case TriggerVariant::cost_benefit: {
      const double m =
          t.margin_seconds == 0 && !loosen ? 5.0 : t.margin_seconds * f;
      os << name << " margin " << num(t.margin_seconds) << " -> " << num(m);
      t.margin_seconds = m;
      break;
    }
  }
  return os.str();
}

// Applies one operator in place. Empty return marks it inapplicable to this
// genome; the caller redraws.
std::string apply_op(int op, PolicyGenome& g, std::mt19937_64& rng) {
  switch (op) {
    case kLoosenTrigger:
      return scale_trigger(g.trigger, true, rng);
    case kTightenTrigger:
      return scale_trigger(g.trigger, false, rng);
    case kSwitchTriggerVariant: {
      const TriggerVariant all[] = {TriggerVariant::periodic,
                                    TriggerVariant::workload_delta,
                                    TriggerVariant::cost_benefit};
      std::vector<TriggerVariant> other;
      for (auto v : all)
        if (v != g.trigger.variant) other.push_back(v);
      const auto to = other[pick_index(other.size(), rng)];
      const std::string desc = "switch_trigger_variant " +
                               to_string(g.trigger.variant) + " -> " + to_string(to);
      g.trigger.variant = to;
      return desc;
    }
    case kSwitchSchedulerAlgorithm: {
      const SchedAlgorithm all[] = {SchedAlgorithm::greedy,
                                    SchedAlgorithm::local_search,
                                    SchedAlgorithm::exact};
      std::vector<SchedAlgorithm> other;
      for (auto a : all)
        if (a != g.scheduler.algorithm) other.push_back(a);
      const auto to = other[pick_index(other.size(), rng)];
      const std::string desc = "switch_scheduler_algorithm " +
                               to_string(g.scheduler.algorithm) + " -> " +
                               to_string(to);
      g.scheduler.algorithm = to;
      return desc;
    }
    case kHalveTimeBudget:
      g.scheduler.time_budget_seconds *= 0.5;
      return "halve_time_budget -> " + num(g.scheduler.time_budget_seconds);
    case kDoubleTimeBudget:
      g.scheduler.time_budget_seconds *= 2.0;
      return "double_time_budget -> " + num(g.scheduler.time_budget_seconds);
    case kPerturbMigrationWeight: {
      if (g.migration.mode == MigrationMode::full) return "";  // w is pinned 0
      const double f = pick_index(2, rng) ? 2.0 : 0.5;
      const double w = g.migration.w == 0 ? 1.0 : g.migration.w * f;
      const std::string desc = "perturb_migration_weight " + num(g.migration.w) +
                               " -> " + num(w);
      g.migration.w = w;
      return desc;
    }
    case kSwitchMigrationMode: {
      const MigrationMode all[] = {MigrationMode::full, MigrationMode::minimal,
                                   MigrationMode::penalized};
      std::vector<MigrationMode> other;
      for (auto m : all)
        if (m != g.migration.mode) other.push_back(m);
      const auto to = other[pick_index(other.size(), rng)];
      const std::string desc = "switch_migration_mode " +
                               to_string(g.migration.mode) + " -> " + to_string(to);
      g.migration.mode = to;
      if (to == MigrationMode::full) g.migration.w = 0;
      if (to == MigrationMode::penalized && g.migration.w == 0) g.migration.w = 1.0;
      return desc;
    }
    case kAddBatchCandidate: {
      for (int tries = 0; tries < 16; ++tries) {
        const long b = long(pick_index(64, rng)) + 1;
        auto& set = g.scheduler.curated_set;
        const auto it = std::lower_bound(set.begin(), set.end(), b);
        if (it != set.end() && *it == b) continue;
        set.insert(it, b);
        return "add_batch_candidate " + std::to_string(b);
      }
      return "";
    }
    case kRemoveBatchCandidate: {
      auto& set = g.scheduler.curated_set;
      if (set.size() < 2) return "";  // the ladder must not empty out
      const size_t i = pick_index(set.size(), rng);
      const long b = set[i];
      set.erase(set.begin() + i);
      return "remove_batch_candidate " + std::to_string(b);
    }
    case kToggleTpFloor: {
      auto& rules = g.scheduler.tp_floor_rules;
      if (rules.empty()) {
        rules.push_back(TpFloorRule{});
        return "toggle_tp_floor add " + num(rules.back().min_weight_bytes) +
               " -> tp" + std::to_string(rules.back().min_tp);
      }
      const size_t i = pick_index(rules.size(), rng);
      const std::string desc = "toggle_tp_floor drop " + num(rules[i].min_weight_bytes) +
                               " -> tp" + std::to_string(rules[i].min_tp);
      rules.erase(rules.begin() + i);
      return desc;
    }
  }
  return "";
}

}  // namespace

PolicyGenome mutate_rule_based(const Candidate& parent, const FeedbackDelta* delta,
                               std::mt19937_64& rng) {
  for (int attempt = 0; attempt < 32; ++attempt) {
    PolicyGenome child = parent.genome;
    const std::string desc = apply_op(draw_op(delta, rng), child, rng);
    if (desc.empty()) continue;
    child.lineage.parent = parent.genome.genome_id;
    child.lineage.mutation = desc;
    child = finalize_genome(child);
    if (validate_genome(child).ok()) return child;
  }
  // Unreachable while every operator preserves validity; kept total anyway.
  PolicyGenome child = parent.genome;
  child.lineage.parent = parent.genome.genome_id;
  child.lineage.mutation = "identity";
  return finalize_genome(child);
}

EvalReport run_with_timeouts(const std::function<EvalReport(CancelFlag&)>& eval,
                             double timeout_seconds) {
  auto cancel = std::make_shared<CancelFlag>(false);
  std::promise<EvalReport> prom;
  auto fut = prom.get_future();
  std::thread worker([&eval, cancel, &prom] {
    EvalReport r;
    try {
      r = eval(*cancel);
    } catch (const std::exception& e) {
      r.failed = true;
      r.failure_note = e.what();
    }
    prom.set_value(std::move(r));
  });
  bool timed_out = false;
  if (fut.wait_for(std::chrono::duration<double>(timeout_seconds)) !=
      std::future_status::ready) {
    cancel->store(true);
    timed_out = true;
  }
  worker.join();  // bounded: solvers poll the flag once per node
  EvalReport r = fut.get();
  if (timed_out) {
    std::string note = "candidate timeout after " + num(timeout_seconds) + "s";
    if (!r.failure_note.empty()) note += " (" + r.failure_note + ")";
    r.failed = true;
    r.failure_note = note;
  }
  return r;
}

namespace {

struct PendingEval {
  PolicyGenome genome;
  int island = 0;
  int generation = 0;
  std::optional<Candidate> parent;  // absent for the seeded bases
};

struct BatchOutcome {
  std::vector<EvalReport> reports;
  std::vector<double> seconds;
};

// Evaluates every pending genome, at most degree at a time, each under the
// candidate timeout. Nothing starts once the cycle deadline has passed, so
// the cycle overshoots it by at most one candidate timeout. Results land by
// index; callers insert in order, keeping runs reproducible.
BatchOutcome evaluate_batch(const std::vector<PendingEval>& pend, const Trace& trace,
                            AnalyticCostModel& cost, const EvolveConfig& cfg,
                            Clock::time_point deadline) {
  BatchOutcome out;
  out.reports.resize(pend.size());
  out.seconds.assign(pend.size(), 0.0);
  std::atomic<size_t> next{0};
  auto work = [&] {
    for (size_t i = next.fetch_add(1); i < pend.size(); i = next.fetch_add(1)) {
      if (Clock::now() >= deadline) {
        out.reports[i].genome_id = pend[i].genome.genome_id;
        out.reports[i].trace_id = trace.id;
        out.reports[i].failed = true;
        out.reports[i].failure_note = "evolution timeout before evaluation";
        continue;
      }
      const auto t0 = Clock::now();
      out.reports[i] = run_with_timeouts(
          [&, i](CancelFlag& flag) {
            ReplayOptions o = cfg.replay;
            o.cancel = &flag;
            return replay(pend[i].genome, trace, cost, o);
          },
          cfg.candidate_timeout_seconds);
      out.seconds[i] =
          std::chrono::duration<double>(Clock::now() - t0).count();
    }
  };
  const size_t degree =
      std::min<size_t>(size_t(cfg.parallel_eval_degree), pend.size());
  if (degree <= 1) {
    work();
    return out;
  }
  std::vector<std::thread> pool;
  pool.reserve(degree);
  for (size_t i = 0; i < degree; ++i) pool.emplace_back(work);
  for (auto& t : pool) t.join();
  return out;
}

Candidate select_parent(const Archive& archive, int island,
                        const std::vector<Candidate>& base,
                        const EvolveConfig& cfg, std::mt19937_64& rng) {
  const auto occ = archive.occupied(island);
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (occ.empty()) {
    // Nothing alive on this island yet: fall back to a founder so no lineage
    // crosses islands.
    return base[size_t(island) % base.size()];
  }
  const size_t pool =
      u < cfg.elite_selection_ratio
          ? std::max<size_t>(1, size_t(std::ceil(cfg.elite_selection_ratio *
                                                 double(occ.size()))))
          : occ.size();
  return *occ[pick_index(pool, rng)];
}

}  // namespace

EvolveResult evolve_cycle(const Trace& trace, AnalyticCostModel& cost,
                          const EvolveConfig& cfg,
                          const std::vector<Candidate>& warm_seed,
                          GenomeMutator* llm) {
  validate_evolve_config(cfg);
  if (trace.records.empty())
    throw EvolveError("trace " + trace.id + " has no records");
  if (cfg.mutator != MutatorKind::rule_based && llm == nullptr)
    throw EvolveError("mutator " + to_string(cfg.mutator) +
                      " requested with no external mutator plugged in");

  const auto t0 = Clock::now();
  const auto deadline =
      t0 + std::chrono::duration_cast<Clock::duration>(
               std::chrono::duration<double>(cfg.evolution_timeout_seconds));

  std::vector<std::mt19937_64> rng;
  rng.reserve(cfg.num_islands);
  for (int i = 0; i < cfg.num_islands; ++i) {
    std::seed_seq seq{unsigned(cfg.seed), unsigned(cfg.seed >> 32), unsigned(i)};
    rng.emplace_back(seq);
  }

  // Founders: the warm population, best first, or the built-in baselines.
  std::vector<Candidate> base;
  if (warm_seed.empty()) {
    for (const auto& g : seed_genomes()) base.push_back(Candidate{g, {}, 0, 0, {}});
  } else {
    base = warm_seed;
    std::stable_sort(base.begin(), base.end(),
                     [](const Candidate& a, const Candidate& b) {
                       return a.fitness() < b.fitness();
                     });
  }

  auto mutate = [&](const Candidate& parent, const FeedbackDelta* delta,
                    std::mt19937_64& r) {
    if (cfg.mutator == MutatorKind::llm) return llm->mutate(parent, delta, r);
    if (cfg.mutator == MutatorKind::mixed &&
        std::uniform_real_distribution<double>(0.0, 1.0)(r) < cfg.llm_share)
      return llm->mutate(parent, delta, r);
    return mutate_rule_based(parent, delta, r);
  };

  // Every island is seeded with the founders in order, then with mutations of
  // them, so islands start aligned and never need to borrow lineages.
  std::vector<PendingEval> pend;
  for (int isl = 0; isl < cfg.num_islands; ++isl) {
    const int quota = cfg.population_size / cfg.num_islands +
                      (isl < cfg.population_size % cfg.num_islands ? 1 : 0);
    for (int s = 0; s < quota; ++s) {
      if (size_t(s) < base.size()) {
        pend.push_back(PendingEval{base[s].genome, isl, 0, {}});
      } else {
        const Candidate& p = base[s % base.size()];
        pend.push_back(PendingEval{mutate(p, nullptr, rng[isl]), isl, 0, p});
      }
    }
  }

  EvolveResult result;
  Archive archive(cfg.num_islands, 5, cfg.sched_axis_cells);
  std::optional<Candidate> best;
  std::vector<std::string> failures;
  std::ofstream log;
  if (!cfg.log_path.empty()) {
    log.open(cfg.log_path, std::ios::app);
    if (!log) throw EvolveError("cannot open evolution log " + cfg.log_path);
  }

  auto absorb = [&](const PendingEval& pe, EvalReport rep, double secs) {
    ++result.evaluations;
    Candidate c{std::move(pe.genome), std::move(rep), pe.island, pe.generation, {}};
    c.descriptor = feature_descriptor(c.report, cfg);
    bool improved = false;
    if (c.report.failed) {
      ++result.failures;
      if (failures.size() < 20) failures.push_back(c.report.failure_note);
    } else {
      if (!best || c.fitness() < best->fitness()) {
        best = c;
        improved = true;
      }
      improved = archive.insert(c) || improved;
    }
    if (log) {
      ojson j;
      j["trace"] = trace.id;
      j["genome_id"] = c.genome.genome_id;
      j["parent"] = c.genome.lineage.parent;
      j["mutation"] = c.genome.lineage.mutation;
      j["island"] = c.island;
      j["generation"] = c.generation;
      j["failed"] = c.report.failed;
      if (c.report.failed) j["fitness"] = nullptr;
      else j["fitness"] = c.fitness();
      j["n"] = c.report.n;
      if (c.descriptor)
        j["descriptor"] = {c.descriptor->n_cell, c.descriptor->sched_cell};
      else
        j["descriptor"] = nullptr;
      j["eval_seconds"] = secs;
      j["note"] = c.report.failure_note;
      log << j.dump() << "\n";
    }
    return improved;
  };

  {
    auto outcome = evaluate_batch(pend, trace, cost, cfg, deadline);
    for (size_t i = 0; i < pend.size(); ++i)
      absorb(pend[i], std::move(outcome.reports[i]), outcome.seconds[i]);
  }

  std::vector<std::optional<FeedbackDelta>> last_delta(cfg.num_islands);
  int stall = 0;
  result.stopped = StopReason::max_iterations;
  for (int it = 1; it <= cfg.max_iterations; ++it) {
    if (stall >= cfg.stall_window) {
      result.stopped = StopReason::converged;
      break;
    }
    if (Clock::now() >= deadline) {
      result.stopped = StopReason::timed_out;
      break;
    }

    std::vector<PendingEval> kids;
    kids.reserve(cfg.num_islands);
    for (int isl = 0; isl < cfg.num_islands; ++isl) {
      Candidate parent = select_parent(archive, isl, base, cfg, rng[isl]);
      const FeedbackDelta* d =
          last_delta[isl] ? &*last_delta[isl] : nullptr;
      PolicyGenome child = mutate(parent, d, rng[isl]);
      kids.push_back(PendingEval{std::move(child), isl, it, std::move(parent)});
    }

    auto outcome = evaluate_batch(kids, trace, cost, cfg, deadline);
    bool any = false;
    for (size_t i = 0; i < kids.size(); ++i) {
      const EvalReport child_rep = outcome.reports[i];
      any = absorb(kids[i], std::move(outcome.reports[i]), outcome.seconds[i]) || any;
      const auto& parent = kids[i].parent;
      if (parent && !parent->report.failed && parent->report.n > 0 &&
          !child_rep.failed && parent->report.trace_id == child_rep.trace_id)
        last_delta[kids[i].island] = compare_feedback(parent->report, child_rep);
    }

    if (cfg.migration_interval > 0 && cfg.num_islands > 1 &&
        it % cfg.migration_interval == 0) {
      // Ring exchange of each island's current best; snapshot first so one
      // round cannot cascade a single elite all the way around.
      std::vector<std::optional<Candidate>> elites(cfg.num_islands);
      for (int isl = 0; isl < cfg.num_islands; ++isl) {
        const auto occ = archive.occupied(isl);
        if (!occ.empty()) elites[isl] = *occ.front();
      }
      for (int isl = 0; isl < cfg.num_islands; ++isl) {
        if (!elites[isl]) continue;
        Candidate m = *elites[isl];
        m.island = (isl + 1) % cfg.num_islands;
        any = archive.insert(m) || any;
      }
    }

    stall = any ? 0 : stall + 1;
    result.iterations = it;
  }

  result.elapsed_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  if (!best) {
    std::ostringstream os;
    os << "every candidate failed (" << result.failures << " of "
       << result.evaluations << ")";
    for (const auto& f : failures) os << "\n  " << f;
    throw EvolveError(os.str());
  }
  result.best = std::move(*best);
  result.archive = std::move(archive);
  return result;
}

}  // namespace evoserve
