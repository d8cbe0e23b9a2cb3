#include "evoserve/sim.hpp"

#include <algorithm>
#include <cmath>

namespace evoserve {

namespace {

struct Shard {
  double q_heads;   // A / tp
  double kv_heads;  // K / min(tp, K); KV weights replicate past K shards
  double inter;     // I / tp
  double vocab;     // V / tp
  double d;
  double bp;        // bytes per element
};

Shard make_shard(const ModelSpec& m, int tp) {
  Shard s;
  s.q_heads = double(m.q_heads) / tp;
  s.kv_heads = double(m.kv_heads) / std::min<int>(tp, m.kv_heads);
  s.inter = double(m.intermediate) / tp;
  s.vocab = double(m.vocab) / tp;
  s.d = m.head_dim;
  s.bp = m.bits / 8.0;
  return s;
}

// One matmul of x[rows, in] by w[in, out]: weights once, activations in+out.
double matmul_time(double rows, double in, double out, double bp,
                   const GpuType& g) {
  const double flops = 2.0 * rows * in * out;
  const double bytes = (in * out + rows * in + rows * out) * bp;
  return roofline_time(flops, bytes, g);
}

// Score + value application for q query rows attending over ctx cached rows.
// KV reads scale with the context; Q and output are read+written per row.
double attention_time(const Shard& s, double batch, double q, double ctx,
                      const GpuType& g) {
  const double flops = 4.0 * batch * s.q_heads * q * ctx * s.d;
  const double bytes =
      (2.0 * batch * ctx * s.kv_heads * s.d + 2.0 * batch * q * s.q_heads * s.d) *
      s.bp;
  return roofline_time(flops, bytes, g);
}

// All per-layer operators at query length q and context ctx, times layers,
// plus the softmax-head matmul over one position per sequence.
double step_time(const ModelSpec& m, const GpuType& g, const Shard& s,
                 double batch, double q, double ctx) {
  const double H = m.hidden;
  double layer = 0;
  layer += matmul_time(batch * q, H, (s.q_heads + 2 * s.kv_heads) * s.d, s.bp, g);
  layer += attention_time(s, batch, q, ctx, g);
  layer += matmul_time(batch * q, s.q_heads * s.d, H, s.bp, g);
  layer += 2 * matmul_time(batch * q, H, s.inter, s.bp, g);
  layer += matmul_time(batch * q, s.inter, H, s.bp, g);
  return m.layers * layer + matmul_time(batch, H, s.vocab, s.bp, g);
}

void check_shape(const ModelSpec& m, int tp, long batch, long prefill_len,
                 long decode_len) {
  if (tp < 1) throw SimError("tp must be >= 1");
  if (m.q_heads % tp != 0)
    throw SimError("tp " + std::to_string(tp) + " does not divide q_heads " +
                   std::to_string(m.q_heads) + " of " + m.name);
  if (batch < 1) throw SimError("batch must be >= 1");
  if (prefill_len < 1) throw SimError("prefill_len must be >= 1");
  if (decode_len < 1) throw SimError("decode_len must be >= 1");
}

// Sum over k in [a, a+n) of max(comp_slope*k, mem_base + mem_slope*k).
// The two sides cross at most once for k >= 0, so each side is an arithmetic
// series.
double sum_max_affine(double comp_slope, double mem_base, double mem_slope,
                      long a, long n) {
  auto series = [](double base, double slope, long lo, long hi) {
    // sum over k in [lo, hi] inclusive
    const double cnt = double(hi - lo + 1);
    return cnt * base + slope * 0.5 * cnt * double(lo + hi);
  };
  const long b = a + n - 1;
  if (comp_slope <= mem_slope) return series(mem_base, mem_slope, a, b);
  // memory side wins while k <= mem_base / (comp_slope - mem_slope)
  const double cross = mem_base / (comp_slope - mem_slope);
  const long split = (long)std::floor(cross);
  if (split >= b) return series(mem_base, mem_slope, a, b);
  if (split < a) return series(0.0, comp_slope, a, b);
  return series(mem_base, mem_slope, a, split) +
         series(0.0, comp_slope, split + 1, b);
}

}  // namespace

double roofline_time(double flops, double bytes, const GpuType& g) {
  if (flops <= 0) throw SimError("roofline_time: flops must be positive");
  if (bytes <= 0) throw SimError("roofline_time: bytes must be positive");
  return std::max(flops / g.peak_flops, bytes / g.hbm_bandwidth);
}

double allreduce_time(const ModelSpec& m, const GpuType& g, int tp, long batch,
                      long seq) {
  if (tp < 1) throw SimError("allreduce_time: tp must be >= 1");
  if (tp == 1) return 0.0;
  const double link = tp <= g.gpus_per_node ? g.intra_node_bandwidth
                                            : g.inter_node_bandwidth;
  const double payload =
      2.0 * m.layers * m.hidden * double(batch) * double(seq) * (m.bits / 8.0);
  return (2.0 * (tp - 1) / tp) * payload / link;
}

double transfer_time(const ModelSpec& m, const GpuType& g) {
  return weight_size(m) / g.pcie_bandwidth * m.pcie_coeff;
}

bool memory_feasible(const ModelSpec& m, const GpuType& g, int tp,
                     double mem_threshold) {
  if (tp < 1) throw SimError("memory_feasible: tp must be >= 1");
  return weight_size(m) / tp <= mem_threshold * g.mem_bytes;
}

double decode_sum_exact(const ModelSpec& m, const GpuType& g, int tp, long batch,
                        long first_ctx, long steps) {
  const Shard s = make_shard(m, tp);
  const double comm = allreduce_time(m, g, tp, batch, 1);
  double total = 0;
  for (long k = first_ctx; k < first_ctx + steps; ++k)
    total += step_time(m, g, s, batch, 1, double(k)) + comm;
  return total;
}

double decode_sum_closed(const ModelSpec& m, const GpuType& g, int tp, long batch,
                         long first_ctx, long steps) {
  const Shard s = make_shard(m, tp);
  // Everything except attention is independent of the context length; price
  // one step at ctx=0 contribution removed, then add the attention series.
  const double H = m.hidden;
  double fixed = 0;
  fixed += matmul_time(batch, H, (s.q_heads + 2 * s.kv_heads) * s.d, s.bp, g);
  fixed += matmul_time(batch, s.q_heads * s.d, H, s.bp, g);
  fixed += 2 * matmul_time(batch, H, s.inter, s.bp, g);
  fixed += matmul_time(batch, s.inter, H, s.bp, g);
  fixed *= m.layers;
  fixed += matmul_time(batch, H, s.vocab, s.bp, g);
  fixed += allreduce_time(m, g, tp, batch, 1);

  const double comp_slope = 4.0 * batch * s.q_heads * s.d / g.peak_flops;
  const double mem_base =
      2.0 * batch * s.q_heads * s.d * s.bp / g.hbm_bandwidth;
  const double mem_slope =
      2.0 * batch * s.kv_heads * s.d * s.bp / g.hbm_bandwidth;
  const double attn = m.layers * sum_max_affine(comp_slope, mem_base, mem_slope,
                                                first_ctx, steps);
  return double(steps) * fixed + attn;
}

double serve_latency(const ModelSpec& m, const GpuType& g, int tp, long batch,
                     long prefill_len, long decode_len, const SimConfig& cfg) {
  check_shape(m, tp, batch, prefill_len, decode_len);
  const Shard s = make_shard(m, tp);
  const double prefill =
      step_time(m, g, s, double(batch), double(prefill_len), double(prefill_len)) +
      allreduce_time(m, g, tp, batch, prefill_len);
  const double decode =
      decode_len <= cfg.decode_sum_exact_limit
          ? decode_sum_exact(m, g, tp, batch, prefill_len, decode_len)
          : decode_sum_closed(m, g, tp, batch, prefill_len, decode_len);
  return prefill + decode;
}

}  // namespace evoserve
