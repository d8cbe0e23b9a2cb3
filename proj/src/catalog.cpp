#include "evoserve/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace evoserve {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr double kGB = 1e9;

ordered_json gpu_to_json(const GpuType& g) {
  ordered_json j;
  j["name"] = g.name;
  j["mem_bytes"] = g.mem_bytes;
  j["peak_flops"] = g.peak_flops;
  j["hbm_bandwidth"] = g.hbm_bandwidth;
  j["intra_node_bandwidth"] = g.intra_node_bandwidth;
  j["inter_node_bandwidth"] = g.inter_node_bandwidth;
  j["pcie_bandwidth"] = g.pcie_bandwidth;
  j["gpus_per_node"] = g.gpus_per_node;
  j["total_count"] = g.total_count;
  return j;
}

ordered_json model_to_json(const ModelSpec& m) {
  ordered_json j;
  j["name"] = m.name;
  j["layers"] = m.layers;
  j["hidden"] = m.hidden;
  j["intermediate"] = m.intermediate;
  j["vocab"] = m.vocab;
  j["q_heads"] = m.q_heads;
  j["kv_heads"] = m.kv_heads;
  j["head_dim"] = m.head_dim;
  j["bits"] = m.bits;
  j["pcie_coeff"] = m.pcie_coeff;
  return j;
}

GpuType gpu_from_json(const json& j) {
  GpuType g;
  g.name = j.at("name").get<std::string>();
  g.mem_bytes = j.at("mem_bytes").get<double>();
  g.peak_flops = j.at("peak_flops").get<double>();
  g.hbm_bandwidth = j.at("hbm_bandwidth").get<double>();
  g.intra_node_bandwidth = j.at("intra_node_bandwidth").get<double>();
  g.inter_node_bandwidth = j.at("inter_node_bandwidth").get<double>();
  g.pcie_bandwidth = j.at("pcie_bandwidth").get<double>();
  g.gpus_per_node = j.at("gpus_per_node").get<int>();
  g.total_count = j.at("total_count").get<int>();
  return g;
}

ModelSpec model_from_json(const json& j) {
  ModelSpec m;
  m.name = j.at("name").get<std::string>();
  m.layers = j.at("layers").get<int>();
  m.hidden = j.at("hidden").get<int>();
  m.intermediate = j.at("intermediate").get<int>();
  m.vocab = j.at("vocab").get<int>();
  m.q_heads = j.at("q_heads").get<int>();
  m.kv_heads = j.at("kv_heads").get<int>();
  m.head_dim = j.at("head_dim").get<int>();
  m.bits = j.at("bits").get<int>();
  m.pcie_coeff = j.value("pcie_coeff", 1.0);
  return m;
}

}  // namespace

const GpuType& Catalog::gpu(const std::string& name) const {
  for (const auto& g : gpus)
    if (g.name == name) return g;
  throw CatalogError("unknown GPU type: " + name);
}

const ModelSpec& Catalog::model(const std::string& name) const {
  for (const auto& m : models)
    if (m.name == name) return m;
  throw CatalogError("unknown model: " + name);
}

bool Catalog::has_gpu(const std::string& name) const {
  return std::any_of(gpus.begin(), gpus.end(),
                     [&](const GpuType& g) { return g.name == name; });
}

bool Catalog::has_model(const std::string& name) const {
  return std::any_of(models.begin(), models.end(),
                     [&](const ModelSpec& m) { return m.name == name; });
}

double weight_size(const ModelSpec& m) {
  const double H = m.hidden, I = m.intermediate, V = m.vocab;
  const double A = m.q_heads, K = m.kv_heads, d = m.head_dim;
  const double per_layer = 3.0 * H * I + 2.0 * A * H * d + 2.0 * K * H * d;
  const double params = m.layers * per_layer + 2.0 * H * V;
  return params * (m.bits / 8.0);
}

void validate_catalog(const Catalog& c) {
  std::vector<std::string> bad;
  std::set<std::string> seen;
  for (const auto& g : c.gpus) {
    if (!seen.insert(g.name).second) bad.push_back("duplicate gpu name " + g.name);
    if (g.mem_bytes <= 0) bad.push_back(g.name + ": mem_bytes must be positive");
    if (g.peak_flops <= 0) bad.push_back(g.name + ": peak_flops must be positive");
    if (g.hbm_bandwidth <= 0) bad.push_back(g.name + ": hbm_bandwidth must be positive");
    if (g.intra_node_bandwidth <= 0)
      bad.push_back(g.name + ": intra_node_bandwidth must be positive");
    if (g.inter_node_bandwidth <= 0)
      bad.push_back(g.name + ": inter_node_bandwidth must be positive");
    if (g.pcie_bandwidth <= 0) bad.push_back(g.name + ": pcie_bandwidth must be positive");
    if (g.gpus_per_node < 1) bad.push_back(g.name + ": gpus_per_node must be >= 1");
    if (g.total_count < 0) bad.push_back(g.name + ": total_count must be >= 0");
  }
  seen.clear();
  for (const auto& m : c.models) {
    if (!seen.insert(m.name).second) bad.push_back("duplicate model name " + m.name);
    if (m.layers < 1) bad.push_back(m.name + ": layers must be >= 1");
    if (m.hidden < 1) bad.push_back(m.name + ": hidden must be >= 1");
    if (m.intermediate < 1) bad.push_back(m.name + ": intermediate must be >= 1");
    if (m.vocab < 1) bad.push_back(m.name + ": vocab must be >= 1");
    if (m.q_heads < 1) bad.push_back(m.name + ": q_heads must be >= 1");
    if (m.kv_heads < 1) bad.push_back(m.name + ": kv_heads must be >= 1");
    if (m.q_heads % std::max(m.kv_heads, 1) != 0)
      bad.push_back(m.name + ": kv_heads must divide q_heads");
    if (m.head_dim < 1) bad.push_back(m.name + ": head_dim must be >= 1");
    if (m.head_dim * m.q_heads != m.hidden)
      bad.push_back(m.name + ": head_dim * q_heads must equal hidden");
    if (m.bits != 4 && m.bits != 8 && m.bits != 16)
      bad.push_back(m.name + ": bits must be 4, 8 or 16");
    if (m.pcie_coeff <= 0) bad.push_back(m.name + ": pcie_coeff must be positive");
  }
  if (!bad.empty()) {
    std::ostringstream os;
    os << "catalog validation failed:";
    for (const auto& b : bad) os << "\n  " << b;
    throw CatalogError(os.str());
  }
}

std::string catalog_to_json(const Catalog& c) {
  ordered_json j;
  j["gpus"] = json::array();
  for (const auto& g : c.gpus) j["gpus"].push_back(gpu_to_json(g));
  j["models"] = json::array();
  for (const auto& m : c.models) j["models"].push_back(model_to_json(m));
  return j.dump(2);
}

Catalog catalog_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CatalogError(std::string("catalog parse error: ") + e.what());
  }
  Catalog c;
  try {
    for (const auto& g : j.at("gpus")) c.gpus.push_back(gpu_from_json(g));
    for (const auto& m : j.at("models")) c.models.push_back(model_from_json(m));
  } catch (const json::exception& e) {
    throw CatalogError(std::string("catalog field error: ") + e.what());
  }
  validate_catalog(c);
  return c;
}

Catalog load_catalog(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CatalogError("cannot open catalog file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return catalog_from_json(ss.str());
}

void save_catalog(const Catalog& c, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw CatalogError("cannot write catalog file: " + path);
  out << catalog_to_json(c) << "\n";
}

Catalog bundled_catalog() {
  Catalog c;
  auto gpu = [](std::string name, double mem_gb, double tflops, double hbm_tbs,
                double nvlink_gbs, double inter_gbs, double pcie_gbs, int per_node,
                int count) {
    GpuType g;
    g.name = std::move(name);
    g.mem_bytes = mem_gb * kGB;
    g.peak_flops = tflops * 1e12;
    g.hbm_bandwidth = hbm_tbs * 1e12;
    g.intra_node_bandwidth = nvlink_gbs * kGB;
    g.inter_node_bandwidth = inter_gbs * kGB;
    g.pcie_bandwidth = pcie_gbs * kGB;
    g.gpus_per_node = per_node;
    g.total_count = count;
    return g;
  };
  c.gpus.push_back(gpu("A100-80GB", 80, 312, 2.039, 600, 25, 32, 8, 64));
  c.gpus.push_back(gpu("H100-SXM", 80, 989, 3.35, 900, 50, 64, 8, 40));
  c.gpus.push_back(gpu("H200-SXM", 141, 989, 4.8, 900, 50, 64, 8, 24));

  auto model = [](std::string name, int L, int H, int I, int V, int A, int K,
                  double coeff) {
    ModelSpec m;
    m.name = std::move(name);
    m.layers = L;
    m.hidden = H;
    m.intermediate = I;
    m.vocab = V;
    m.q_heads = A;
    m.kv_heads = K;
    m.head_dim = H / A;
    m.bits = 16;
    m.pcie_coeff = coeff;
    return m;
  };
  c.models.push_back(model("qwen2.5-1.5b", 28, 1536, 8960, 151936, 12, 2, 11.5));
  c.models.push_back(model("qwen2.5-3b", 36, 2048, 11008, 151936, 16, 2, 10.5));
  c.models.push_back(model("qwen2.5-7b", 28, 3584, 18944, 152064, 28, 4, 9.5));
  c.models.push_back(model("qwen2.5-14b", 48, 5120, 13824, 152064, 40, 8, 8.0));
  c.models.push_back(model("qwen2.5-32b", 64, 5120, 27648, 152064, 40, 8, 6.5));
  c.models.push_back(model("qwen2.5-72b", 80, 8192, 29568, 152064, 64, 8, 5.3));
  validate_catalog(c);
  return c;
}

}  // namespace evoserve
