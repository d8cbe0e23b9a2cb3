#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace evoserve {

// Hardware entry. Bandwidths and memory are bytes/s and bytes; flops are
// FLOP/s at serving precision. total_count is the physical maximum; a
// ClusterState may offer fewer, never more.
struct GpuType {
  std::string name;
  double mem_bytes = 0;
  double peak_flops = 0;
  double hbm_bandwidth = 0;
  double intra_node_bandwidth = 0;
  double inter_node_bandwidth = 0;
  double pcie_bandwidth = 0;
  int gpus_per_node = 8;
  int total_count = 0;
};

// Dense transformer shape. head_dim * q_heads must equal hidden; kv_heads
// covers grouped-query attention. bits is the serving precision (4/8/16).
// pcie_coeff scales host-link weight transfers; 1.0 means raw bandwidth.
struct ModelSpec {
  std::string name;
  int layers = 0;
  int hidden = 0;
  int intermediate = 0;
  int vocab = 0;
  int q_heads = 0;
  int kv_heads = 0;
  int head_dim = 0;
  int bits = 16;
  double pcie_coeff = 1.0;
};

struct Catalog {
  std::vector<GpuType> gpus;
  std::vector<ModelSpec> models;

  const GpuType& gpu(const std::string& name) const;
  const ModelSpec& model(const std::string& name) const;
  bool has_gpu(const std::string& name) const;
  bool has_model(const std::string& name) const;
};

class CatalogError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Total parameter bytes: layers * (3*H*I + 2*A*H*d + 2*K*H*d) + 2*H*V
// parameters, scaled by bits/8. Exact in double for every realistic shape.
double weight_size(const ModelSpec& m);

// Throws CatalogError listing every violated field, not just the first.
void validate_catalog(const Catalog& c);

Catalog load_catalog(const std::string& path);
void save_catalog(const Catalog& c, const std::string& path);
std::string catalog_to_json(const Catalog& c);
Catalog catalog_from_json(const std::string& text);

// Three GPU generations and the six dense model shapes the bundled traces
// reference. Data, not code: edit data/catalog.json and reload to change it.
Catalog bundled_catalog();

}  // namespace evoserve
