#include "evoserve/traces.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evoserve {

using nlohmann::ordered_json;

ValidationReport validate_trace(const Trace& tr, const Catalog& cat) {
  ValidationReport rep;
  auto bad = [&](size_t i, const std::string& s) {
    rep.violations.push_back("record " + std::to_string(i) + ": " + s);
  };
  if (tr.records.empty()) rep.violations.push_back("trace has no records");
  if (tr.cadence_seconds <= 0)
    rep.violations.push_back("cadence_seconds must be positive");
  for (size_t i = 0; i < tr.records.size(); ++i) {
    const auto& r = tr.records[i];
    if (i > 0 && !(r.t > tr.records[i - 1].t))
      bad(i, "time does not increase");
    for (const auto& [m, d] : r.workload.demand) {
      if (!cat.has_model(m)) bad(i, "unknown model " + m);
      if (d.batch_demand < 0) bad(i, "negative demand for " + m);
      if (d.prefill_len < 1 || d.decode_len < 1)
        bad(i, "sequence lengths must be >= 1 for " + m);
      if (d.batch_cap < 1) bad(i, "batch_cap must be >= 1 for " + m);
    }
    for (const auto& [g, n] : r.cluster.available) {
      if (!cat.has_gpu(g)) bad(i, "unknown gpu type " + g);
      if (n < 0) bad(i, "negative count for " + g);
    }
  }
  return rep;
}

std::string trace_to_json(const Trace& tr) {
  ordered_json j;
  j["id"] = tr.id;
  j["cadence_seconds"] = tr.cadence_seconds;
  ordered_json recs = ordered_json::array();
  for (const auto& r : tr.records) {
    ordered_json rj;
    rj["t"] = r.t;
    if (!r.phase.empty()) rj["phase"] = r.phase;
    ordered_json wl;
    for (const auto& [m, d] : r.workload.demand) {
      ordered_json dj;
      dj["batch"] = d.batch_demand;
      dj["prefill"] = d.prefill_len;
      dj["decode"] = d.decode_len;
      dj["cap"] = d.batch_cap;
      wl[m] = std::move(dj);
    }
    rj["workloads"] = std::move(wl);
    ordered_json cl;
    for (const auto& [g, n] : r.cluster.available) cl[g] = n;
    rj["cluster"] = std::move(cl);
    recs.push_back(std::move(rj));
  }
  j["records"] = std::move(recs);
  return j.dump(2) + "\n";
}

Trace trace_from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("trace parse error: ") + e.what());
  }
  Trace tr;
  try {
    tr.id = j.at("id").get<std::string>();
    tr.cadence_seconds = j.at("cadence_seconds").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw TraceError(std::string("trace field error: ") + e.what());
  }
  const auto& recs = j.find("records") != j.end() ? j.at("records") : ordered_json::array();
  for (size_t i = 0; i < recs.size(); ++i) {
    TraceRecord r;
    try {
      const auto& rj = recs.at(i);
      r.t = rj.at("t").get<double>();
      if (rj.contains("phase")) r.phase = rj.at("phase").get<std::string>();
      for (const auto& [m, dj] : rj.at("workloads").items()) {
        DemandEntry d;
        d.batch_demand = dj.at("batch").get<long>();
        d.prefill_len = dj.at("prefill").get<long>();
        d.decode_len = dj.at("decode").get<long>();
        d.batch_cap = dj.at("cap").get<long>();
        r.workload.demand[m] = d;
      }
      for (const auto& [g, nj] : rj.at("cluster").items())
        r.cluster.available[g] = nj.get<int>();
    } catch (const nlohmann::json::exception& e) {
      throw TraceError("trace field error at record " + std::to_string(i) +
                       ": " + e.what());
    }
    if (!tr.records.empty() && !(r.t > tr.records.back().t))
      throw TraceError("trace field error at record " + std::to_string(i) +
                       ": time does not increase");
    tr.records.push_back(std::move(r));
  }
  return tr;
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return trace_from_json(ss.str());
}

void save_trace(const Trace& tr, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TraceError("cannot open trace file: " + path);
  out << trace_to_json(tr);
}

namespace {

constexpr std::array<const char*, 6> kModels = {
    "qwen2.5-1.5b", "qwen2.5-3b",  "qwen2.5-7b",
    "qwen2.5-14b",  "qwen2.5-32b", "qwen2.5-72b"};

constexpr long kCap = 64;

// Heavy-dominant: small models idle on short decodes, large models loaded
// with long prefills and decodes. Light-dominant reverses the roles.
DemandEntry shaped_demand(int model_idx, char phase, long batch) {
  static constexpr std::array<long, 6> kHeavyDecode = {2048, 1536, 3072,
                                                       8192, 6144, 5120};
  static constexpr std::array<long, 6> kLightDecode = {4096, 3072, 6144,
                                                       2048, 1536, 1280};
  DemandEntry d;
  d.batch_demand = batch;
  d.batch_cap = kCap;
  if (phase == 'H') {
    d.prefill_len = model_idx < 3 ? 256 : 512;
    d.decode_len = kHeavyDecode[model_idx];
  } else {
    d.prefill_len = 256;
    d.decode_len = kLightDecode[model_idx];
  }
  return d;
}

WorkloadSnapshot six_model_row(char phase, const std::array<long, 6>& batches) {
  WorkloadSnapshot w;
  for (int i = 0; i < 6; ++i)
    w.demand[kModels[i]] = shaped_demand(i, phase, batches[i]);
  return w;
}

// The fixed pool the workload-only traces run on.
ClusterState workload_cluster() {
  ClusterState c;
  c.available = {{"A100-80GB", 16}, {"H100-SXM", 16}, {"H200-SXM", 8}};
  return c;
}

Trace phase_rows_trace(const std::string& id,
                       const std::vector<std::pair<char, std::array<long, 6>>>& rows) {
  Trace tr;
  tr.id = id;
  tr.cadence_seconds = 60;
  const ClusterState cl = workload_cluster();
  for (size_t i = 0; i < rows.size(); ++i) {
    TraceRecord r;
    r.t = 60.0 * (double)i;
    r.phase = std::string(1, rows[i].first);
    r.workload = six_model_row(rows[i].first, rows[i].second);
    r.cluster = cl;
    tr.records.push_back(std::move(r));
  }
  return tr;
}

Trace motivation_shifting() {
  return phase_rows_trace("motivation-shifting",
                          {{'H', {64, 64, 64, 384, 256, 128}},
                           {'L', {960, 480, 288, 64, 32, 16}},
                           {'H', {64, 64, 64, 384, 256, 128}}});
}

Trace motivation_hybrid() {
  return phase_rows_trace("motivation-hybrid",
                          {{'L', {960, 480, 288, 64, 32, 16}},
                           {'L', {968, 476, 284, 64, 32, 16}},
                           {'H', {64, 64, 64, 384, 256, 128}},
                           {'H', {72, 64, 64, 400, 256, 128}},
                           {'H', {64, 64, 64, 384, 256, 128}}});
}

Trace volatile_workload() {
  return phase_rows_trace("volatile-workload",
                          {{'H', {64, 64, 64, 384, 256, 128}},
                           {'H', {80, 64, 64, 400, 256, 128}},
                           {'H', {64, 64, 64, 384, 256, 128}},
                           {'L', {960, 480, 288, 64, 32, 16}},
                           {'L', {1008, 480, 336, 64, 32, 16}},
                           {'L', {960, 480, 288, 64, 32, 16}},
                           {'H', {96, 64, 64, 416, 256, 128}},
                           {'H', {64, 64, 64, 384, 256, 128}},
                           {'H', {80, 64, 64, 400, 256, 128}},
                           {'L', {960, 480, 288, 64, 32, 16}}});
}

Trace stable_workload() {
  // Three small models, ten steps. Two length excursions break the otherwise
  // flat profile: a doubled decode at ts3 for the 1.5B and a doubled prefill
  // at ts6 for the 7B.
  static constexpr std::array<long, 10> k15 = {960, 1008, 952, 960, 968,
                                               956, 962,  958, 1008, 964};
  static constexpr std::array<long, 10> k3 = {480, 476, 484, 480, 544,
                                              478, 482, 479, 481, 483};
  static constexpr std::array<long, 10> k7 = {288, 284, 264, 290, 286,
                                              288, 336, 287, 285, 291};
  Trace tr;
  tr.id = "stable-workload";
  tr.cadence_seconds = 60;
  const ClusterState cl = workload_cluster();
  for (int i = 0; i < 10; ++i) {
    TraceRecord r;
    r.t = 60.0 * i;
    r.phase = "stable";
    auto put = [&](const char* m, long batch, long prefill, long decode) {
      DemandEntry d;
      d.batch_demand = batch;
      d.prefill_len = prefill;
      d.decode_len = decode;
      d.batch_cap = kCap;
      r.workload.demand[m] = d;
    };
    put("qwen2.5-1.5b", k15[i], 256, i == 3 ? 8192 : 4096);
    put("qwen2.5-3b", k3[i], 256, 3072);
    put("qwen2.5-7b", k7[i], i == 6 ? 512 : 256, 6144);
    r.cluster = cl;
    tr.records.push_back(std::move(r));
  }
  return tr;
}

// The elastic case studies share one fixed three-model workload; only the
// pool composition moves.
WorkloadSnapshot elastic_workload() {
  WorkloadSnapshot w;
  auto put = [&](const char* m, long batch, long decode) {
    DemandEntry d;
    d.batch_demand = batch;
    d.prefill_len = 512;
    d.decode_len = decode;
    d.batch_cap = kCap;
    w.demand[m] = d;
  };
  put("qwen2.5-7b", 32, 512);
  put("qwen2.5-14b", 64, 2048);
  put("qwen2.5-72b", 128, 4096);
  return w;
}

Trace elastic_cluster_trace(const std::string& id,
                            const std::vector<std::array<int, 3>>& rows) {
  Trace tr;
  tr.id = id;
  tr.cadence_seconds = 60;
  const WorkloadSnapshot wl = elastic_workload();
  for (size_t i = 0; i < rows.size(); ++i) {
    TraceRecord r;
    r.t = 60.0 * (double)i;
    r.workload = wl;
    const auto& [a100, h100, h200] = rows[i];
    if (a100 > 0) r.cluster.available["A100-80GB"] = a100;
    if (h100 > 0) r.cluster.available["H100-SXM"] = h100;
    if (h200 > 0) r.cluster.available["H200-SXM"] = h200;
    tr.records.push_back(std::move(r));
  }
  return tr;
}

Trace elastic_stable() {
  return elastic_cluster_trace("elastic-stable", {{0, 16, 16},
                                                  {0, 16, 24},
                                                  {0, 24, 24},
                                                  {16, 16, 8},
                                                  {8, 24, 16}});
}

Trace elastic_volatile() {
  return elastic_cluster_trace("elastic-volatile", {{8, 16, 16},
                                                     {0, 8, 24},
                                                     {16, 24, 8},
                                                     {16, 40, 8},
                                                     {8, 24, 16}});
}

Trace elastic_azure() {
  // 35 control buckets over a two-minute window; most span 3 seconds, five
  // span 6. The pool is homogeneous and only its size moves. Underneath, the
  // workload walks four hidden 30-second phases on the largest model.
  static constexpr std::array<std::pair<int, int>, 35> kSchedule = {{
      {0, 24},   {3, 25},   {6, 26},   {9, 27},   {12, 29},  {15, 30},
      {18, 32},  {21, 33},  {24, 36},  {27, 38},  {30, 42},  {33, 45},
      {36, 48},  {39, 51},  {42, 54},  {45, 55},  {48, 60},  {54, 63},
      {57, 62},  {60, 64},  {63, 61},  {66, 62},  {69, 60},  {75, 57},
      {78, 56},  {81, 54},  {87, 55},  {90, 53},  {93, 51},  {96, 50},
      {99, 49},  {105, 47}, {108, 45}, {114, 44}, {117, 43},
  }};
  struct Phase {
    const char* label;
    long prefill;
    long decode;
  };
  static constexpr std::array<Phase, 4> kPhases = {{
      {"decode-heavy", 512, 1024},
      {"mixed", 2048, 256},
      {"prefill-heavy", 4096, 128},
      {"mixed-stable", 2048, 256},
  }};
  Trace tr;
  tr.id = "elastic-azure";
  tr.cadence_seconds = 3;
  for (const auto& [start, size] : kSchedule) {
    const auto& ph = kPhases[std::min(3, start / 30)];
    TraceRecord r;
    r.t = (double)start;
    r.phase = ph.label;
    DemandEntry d;
    d.batch_demand = 128;
    d.prefill_len = ph.prefill;
    d.decode_len = ph.decode;
    d.batch_cap = kCap;
    r.workload.demand["qwen2.5-72b"] = d;
    r.cluster.available["A100-80GB"] = size;
    tr.records.push_back(std::move(r));
  }
  return tr;
}

}  // namespace

std::vector<Trace> bundled_traces() {
  return {motivation_shifting(), motivation_hybrid(), stable_workload(),
          volatile_workload(),   elastic_stable(),    elastic_volatile(),
          elastic_azure()};
}

Trace bundled_trace(const std::string& id) {
  for (auto& tr : bundled_traces())
    if (tr.id == id) return tr;
  throw TraceError("no bundled trace named " + id);
}

Trace generate_phase_trace(const std::string& id,
                           const std::vector<PhaseSpec>& phases,
                           double cadence_seconds, double lambda_jitter,
                           unsigned seed) {
  if (phases.empty()) throw TraceError("phase list must not be empty");
  if (cadence_seconds <= 0) throw TraceError("cadence must be positive");
  if (lambda_jitter < 0) throw TraceError("jitter must be >= 0");
  for (const auto& p : phases)
    if (p.duration_seconds <= 0)
      throw TraceError("phase durations must be positive");

  std::mt19937_64 rng(seed);
  // Top 53 bits of the draw, mapped into [-jitter, +jitter). Explicit so the
  // stream is pinned by the engine alone.
  auto draw = [&]() {
    const double u = (double)(rng() >> 11) * (1.0 / 9007199254740992.0);
    return (2.0 * u - 1.0) * lambda_jitter;
  };

  double total = 0;
  for (const auto& p : phases) total += p.duration_seconds;

  Trace tr;
  tr.id = id;
  tr.cadence_seconds = cadence_seconds;
  for (double t = 0; t < total; t += cadence_seconds) {
    double acc = 0;
    size_t pi = 0;
    for (; pi + 1 < phases.size(); ++pi) {
      acc += phases[pi].duration_seconds;
      if (t < acc) break;
    }
    const PhaseSpec& p = phases[pi];
    TraceRecord r;
    r.t = t;
    r.phase = p.label;
    r.cluster = p.cluster;
    r.workload = p.workload;
    if (lambda_jitter > 0) {
      for (auto& [m, d] : r.workload.demand) {
        const double f = 1.0 + draw();
        d.batch_demand = std::max<long>(1, (long)std::llround((double)d.batch_demand * f));
      }
    }
    tr.records.push_back(std::move(r));
  }
  return tr;
}

}  // namespace evoserve
