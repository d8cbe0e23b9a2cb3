#pragma once

#include <string>
#include <vector>

#include "evoserve/plan.hpp"

namespace evoserve {

// One monitoring point: what the world looked like at time t.
struct TraceRecord {
  double t = 0;
  WorkloadSnapshot workload;
  ClusterState cluster;
  std::string phase;  // optional annotation, empty when unlabeled

  bool operator==(const TraceRecord&) const = default;
};

// Immutable after construction. Records are strictly ordered by time;
// cadence_seconds is the default spacing generators used, kept in the file so
// replays know the intended monitoring rhythm.
struct Trace {
  std::string id;
  double cadence_seconds = 60;
  std::vector<TraceRecord> records;

  bool operator==(const Trace&) const = default;
};

class TraceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Structural checks against a catalog: strictly increasing times, known model
// and GPU type names, nonnegative demands and counts. Violations carry the
// record index. Existence of a type is enough; traces may offer more GPUs
// than any one ClusterState elsewhere does.
ValidationReport validate_trace(const Trace& tr, const Catalog& cat);

std::string trace_to_json(const Trace& tr);
Trace trace_from_json(const std::string& text);
Trace load_trace(const std::string& path);
void save_trace(const Trace& tr, const std::string& path);

// The shipped scenario set, reconstructed in code: two short motivation
// traces, a stable and a volatile ten-step workload, two five-step elastic
// cluster schedules, and the 35-bucket elastic capacity schedule with its
// four hidden workload phases.
std::vector<Trace> bundled_traces();
Trace bundled_trace(const std::string& id);

struct PhaseSpec {
  std::string label;
  WorkloadSnapshot workload;
  ClusterState cluster;
  double duration_seconds = 60;
};

// Piecewise-constant trace with optional multiplicative jitter on batch
// demand, one record per cadence tick from t = 0 up to (not including) the
// total duration. Identical (phases, cadence, jitter, seed) give an identical
// trace; jittered demands stay within [1, round(d * (1 + jitter))].
Trace generate_phase_trace(const std::string& id,
                           const std::vector<PhaseSpec>& phases,
                           double cadence_seconds, double lambda_jitter,
                           unsigned seed);

}  // namespace evoserve
