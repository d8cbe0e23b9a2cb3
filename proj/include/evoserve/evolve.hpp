#pragma once

#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoserve/evaluator.hpp"

namespace evoserve {

enum class MutatorKind { rule_based, llm, mixed };

std::string to_string(MutatorKind m);
MutatorKind mutator_kind_from_string(const std::string& s);

struct EvolveConfig {
  int max_iterations = 100;
  int population_size = 50;
  int num_islands = 3;
  // Probability a parent is drawn from the elite pool (the best fitness
  // fraction of occupied cells) instead of uniformly over occupied cells.
  double elite_selection_ratio = 0.2;
  int migration_interval = 10;  // iterations between elite exchanges; <= 0: never
  // Archive shape: the interval-count axis is fixed at five buckets
  // {1, 2, 3-4, 5-8, 9+}; this sizes the scheduling-cost axis (decades).
  int sched_axis_cells = 8;
  int stall_window = 15;  // improvement-free iterations treated as converged
  double candidate_timeout_seconds = 10.0;
  double evolution_timeout_seconds = 600.0;
  int parallel_eval_degree = 10;
  unsigned long long seed = 0;
  MutatorKind mutator = MutatorKind::rule_based;
  double llm_share = 0.3;  // mixed: probability an edit comes from the llm
  ReplayOptions replay;    // timer, pricing, and grid used for every evaluation
  std::string log_path;    // append-only candidate log; empty disables
};

class EvolveError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void validate_evolve_config(const EvolveConfig& cfg);

struct Descriptor {
  int n_cell = 0;      // bucketed interval count
  int sched_cell = 0;  // bucketed decade of summed scheduling seconds
  bool operator==(const Descriptor&) const = default;
};

struct Candidate {
  PolicyGenome genome;
  EvalReport report;
  int island = 0;
  int generation = 0;
  std::optional<Descriptor> descriptor;  // absent when the report failed

  double fitness() const { return report.fitness(); }
};

// Interval-count bucket and scheduling-cost decade, clamped to the grid.
// A failed report maps nowhere.
std::optional<Descriptor> feature_descriptor(const EvalReport& rep,
                                             const EvolveConfig& cfg);

// Per-island elite grids. A cell keeps the lowest-fitness candidate ever
// mapped to it; ties keep the incumbent.
class Archive {
 public:
  Archive() = default;
  Archive(int islands, int n_cells, int sched_cells);

  // True when the cell was empty or strictly beaten. Candidates without a
  // descriptor are refused.
  bool insert(const Candidate& c);

  const std::optional<Candidate>& at(int island, const Descriptor& d) const;
  // Occupants sorted by fitness ascending, ties by island then cell, so
  // selection pools are stable. island -1 spans all islands.
  std::vector<const Candidate*> occupied(int island = -1) const;
  const Candidate* best() const;

  int islands() const { return islands_; }
  int n_cells() const { return n_cells_; }
  int sched_cells() const { return sched_cells_; }

 private:
  int islands_ = 0;
  int n_cells_ = 0;
  int sched_cells_ = 0;
  std::vector<std::optional<Candidate>> cells_;
};

// One structural edit: trigger thresholds scaled within [0.5, 2], variant or
// solver switches, time budget and migration weight doublings, batch ladder
// and tp floor edits. delta, when given, biases the draw: evidence that more
// rescheduling improved T_total raises the loosening weight, and symmetric.
// The child validates; lineage records the parent id and the edit.
PolicyGenome mutate_rule_based(const Candidate& parent, const FeedbackDelta* delta,
                               std::mt19937_64& rng);

// Mutation seam for plugging an external editor next to the rule table.
struct GenomeMutator {
  virtual ~GenomeMutator() = default;
  virtual PolicyGenome mutate(const Candidate& parent, const FeedbackDelta* delta,
                              std::mt19937_64& rng) = 0;
};

// Runs eval on a worker with a fresh cancel flag. Past the timeout the flag
// is raised and the partial report comes back marked failed with a timeout
// note; a timeout is a marker, never an exception.
EvalReport run_with_timeouts(const std::function<EvalReport(CancelFlag&)>& eval,
                             double timeout_seconds);

enum class StopReason { max_iterations, converged, timed_out };

std::string to_string(StopReason r);

struct EvolveResult {
  Candidate best;
  Archive archive;
  int iterations = 0;     // loop iterations completed, not counting seeding
  long evaluations = 0;   // replays attempted, including failures
  long failures = 0;
  StopReason stopped = StopReason::max_iterations;
  double elapsed_seconds = 0;
};

// One evolution cycle over one trace. Seeds the islands from warm_seed when
// given (else the built-in baselines) plus mutations up to population_size,
// then iterates select-mutate-evaluate-insert per island with periodic elite
// migration. Stops on max_iterations, the evolution timeout, or stall_window
// improvement-free iterations. Throws EvolveError when nothing ever evaluated
// successfully, carrying the collected failure notes.
EvolveResult evolve_cycle(const Trace& trace, AnalyticCostModel& cost,
                          const EvolveConfig& cfg,
                          const std::vector<Candidate>& warm_seed = {},
                          GenomeMutator* llm = nullptr);

}  // namespace evoserve
