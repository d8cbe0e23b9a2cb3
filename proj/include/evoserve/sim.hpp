#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "evoserve/catalog.hpp"

namespace evoserve {

// Knobs shared by every analytic cost computation. penalty_latency stands in
// for an infeasible deployment; it must dominate any reachable latency.
// decode_sum_exact_limit switches the per-token decode sum from an exact loop
// to the closed-form split; both paths agree to float noise.
struct SimConfig {
  double mem_threshold = 0.8;
  double penalty_latency = 1.0e9;
  long decode_sum_exact_limit = 4096;
};

class SimError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Attainable time for one operator: flops / min((flops/bytes)*bw, peak),
// i.e. max(compute time, memory time). Both arguments must be positive.
double roofline_time(double flops, double bytes, const GpuType& g);

// Ring all-reduce across tp shards, two per layer, sequence length seq.
// tp = 1 costs exactly zero. Link is intra-node while tp fits in one node.
double allreduce_time(const ModelSpec& m, const GpuType& g, int tp, long batch,
                      long seq);

// Weight movement over the host link: weight_size / pcie_bandwidth * pcie_coeff.
double transfer_time(const ModelSpec& m, const GpuType& g);

// Per-shard weights within the memory budget: weight_size/tp <= threshold*mem.
// Boundary is feasible.
bool memory_feasible(const ModelSpec& m, const GpuType& g, int tp,
                     double mem_threshold);

// Full-request latency: prefill over prefill_len plus one decode step per
// generated token, each step attending over the context so far. Requires
// tp >= 1 dividing q_heads, batch >= 1, positive lengths.
double serve_latency(const ModelSpec& m, const GpuType& g, int tp, long batch,
                     long prefill_len, long decode_len, const SimConfig& cfg);

// Both decode-sum paths, exposed so the switchover can be audited directly.
double decode_sum_exact(const ModelSpec& m, const GpuType& g, int tp, long batch,
                        long first_ctx, long steps);
double decode_sum_closed(const ModelSpec& m, const GpuType& g, int tp, long batch,
                         long first_ctx, long steps);

}  // namespace evoserve
