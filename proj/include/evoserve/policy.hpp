#pragma once

#include <optional>
#include <string>
#include <vector>

#include "evoserve/scheduler.hpp"

namespace evoserve {

enum class TriggerVariant { periodic, workload_delta, cost_benefit };
enum class MigrationMode { full, minimal, penalized };

std::string to_string(TriggerVariant v);
TriggerVariant trigger_variant_from_string(const std::string& s);
std::string to_string(MigrationMode m);
MigrationMode migration_mode_from_string(const std::string& s);

// When to abandon the deployed plan. One variant is live at a time; the other
// variants' parameters ride along so an edit can switch variants without
// inventing values.
struct TriggerSpec {
  TriggerVariant variant = TriggerVariant::periodic;
  long period_steps = 1;        // periodic: fire every k monitoring steps
  double delta = 0.2;           // workload_delta: relative change threshold
  double margin_seconds = 0.0;  // cost_benefit: surplus required over reconfig
  bool mandatory_on_cluster_change = true;
  bool operator==(const TriggerSpec&) const = default;
};

// How much the scheduler is allowed to move. full rebuilds from scratch,
// minimal repairs in place, penalized prices movement into the objective.
struct MigrationSpec {
  MigrationMode mode = MigrationMode::full;
  double w = 0.0;  // penalized only; full pins 0, minimal never reads it
  bool operator==(const MigrationSpec&) const = default;
};

struct Lineage {
  std::string parent;    // genome id this one was edited from; empty for seeds
  std::string mutation;  // one-line description of the edit
  bool operator==(const Lineage&) const = default;
};

// The full behaviour of a serving policy as one immutable value: trigger,
// scheduler configuration, migration stance. Serialization is canonical
// (fixed field order, fixed indentation) so equal genomes have equal text.
struct PolicyGenome {
  TriggerSpec trigger;
  SchedulerConfig scheduler;
  MigrationSpec migration;
  std::string genome_id;
  Lineage lineage;
  bool operator==(const PolicyGenome&) const = default;
};

class GenomeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fingerprint of the behavioural fields only (trigger, scheduler, migration).
// Lineage and the stored id stay out, so behaviour-identical genomes collide
// on purpose.
std::string compute_genome_id(const PolicyGenome& g);

// Returns g with genome_id refreshed from its behavioural fields. Every edit
// ends with this.
PolicyGenome finalize_genome(PolicyGenome g);

// Collects every invariant violation. Throwing variant used by the parser.
ValidationReport validate_genome(const PolicyGenome& g);

std::string genome_to_json(const PolicyGenome& g);
PolicyGenome genome_from_json(const std::string& text);
PolicyGenome load_genome(const std::string& path);
void save_genome(const PolicyGenome& g, const std::string& path);

// The trigger half of the policy. Stateless: everything it may depend on is
// in the arguments. A missing or empty deployed plan fires unconditionally,
// as does a deployed plan the current cluster can no longer host (when
// mandatory_on_cluster_change is set).
bool should_reschedule(const PolicyGenome& g, const Context& ctx,
                       long step_index, long last_reschedule_step,
                       AnalyticCostModel& cost);

// The planning half. Dispatches to the configured solver with migration
// handling per genome.migration; minimal mode bypasses the solver for
// everything already placed and repairs only displaced demand. Infeasibility
// throws SchedulerError with the genome id in the message; the returned
// result is always a feasible, validated plan.
SchedResult policy_schedule(const PolicyGenome& g, const Context& ctx,
                            AnalyticCostModel& cost,
                            CancelFlag* cancel = nullptr);

// The starting population: three hand-written baselines spanning the solver
// and trigger families.
std::vector<PolicyGenome> seed_genomes();

}  // namespace evoserve
