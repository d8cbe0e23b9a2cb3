#pragma once

#include <string>

#include "evoserve/catalog.hpp"
#include "evoserve/plan.hpp"

namespace evoserve::testing {

// Raw-number hardware for arithmetic checks; fields are whatever the test
// needs, not realistic silicon.
inline GpuType make_gpu(std::string name, double mem, double flops, double hbm,
                        double intra, double inter, double pcie, int per_node) {
  GpuType g;
  g.name = std::move(name);
  g.mem_bytes = mem;
  g.peak_flops = flops;
  g.hbm_bandwidth = hbm;
  g.intra_node_bandwidth = intra;
  g.inter_node_bandwidth = inter;
  g.pcie_bandwidth = pcie;
  g.gpus_per_node = per_node;
  g.total_count = 64;
  return g;
}

inline ModelSpec make_model(std::string name, int L, int H, int I, int V, int A,
                            int K, int bits = 16) {
  ModelSpec m;
  m.name = std::move(name);
  m.layers = L;
  m.hidden = H;
  m.intermediate = I;
  m.vocab = V;
  m.q_heads = A;
  m.kv_heads = K;
  m.head_dim = H / A;
  m.bits = bits;
  return m;
}

// Exactly 13e9 bytes of weights at 16 bits: 6·1083333328 + 16 + 16 parameters.
inline ModelSpec thirteen_gb_model() {
  return make_model("m13gb", 1, 2, 1083333328, 4, 2, 2);
}

inline DemandEntry demand(long n, long prefill, long decode, long cap = 64) {
  DemandEntry d;
  d.batch_demand = n;
  d.prefill_len = prefill;
  d.decode_len = decode;
  d.batch_cap = cap;
  return d;
}

}  // namespace evoserve::testing
