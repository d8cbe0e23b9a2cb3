#include <doctest.h>

#include <cstdio>
#include <string>

#include "evoserve/catalog.hpp"
#include "helpers.hpp"

using namespace evoserve;
using namespace evoserve::testing;

TEST_CASE("weight size matches the hand-expanded toy shape") {
  // L=2, H=4, I=8, V=10, A=2, K=2, d=2, 16-bit.
  // Per layer: 3*4*8 + 2*2*4*2 + 2*2*4*2 = 96 + 32 + 32 = 160.
  // Total params: 2*160 + 2*4*10 = 400; at 2 bytes each: 800.
  const auto m = make_model("toy", 2, 4, 8, 10, 2, 2);
  CHECK(m.head_dim == 2);
  CHECK(weight_size(m) == 800.0);
}

TEST_CASE("weight size matches the spreadsheet value for an 8B-class shape") {
  const auto m = make_model("dense8b", 32, 4096, 14336, 128256, 32, 8);
  // Independently expanded: 32 * (176160768 + 33554432 + 8388608)
  // + 1050673152 = 8029995008 parameters, two bytes each.
  const double expected = 16059990016.0;
  CHECK(weight_size(m) == expected);
}

TEST_CASE("weight size scales linearly with serving precision") {
  auto m = make_model("p", 4, 64, 256, 1000, 8, 4);
  const double w16 = weight_size(m);
  m.bits = 8;
  CHECK(weight_size(m) == doctest::Approx(w16 / 2).epsilon(1e-12));
  m.bits = 4;
  CHECK(weight_size(m) == doctest::Approx(w16 / 4).epsilon(1e-12));
}

TEST_CASE("catalog validation reports every violation at once") {
  Catalog c;
  c.gpus.push_back(make_gpu("g", -1, 1e12, 1e12, 1e11, 1e10, 1e10, 8));
  auto m = make_model("bad", 0, 64, 256, 1000, 8, 4);
  m.head_dim = 7;  // 7 * 8 != 64
  c.models.push_back(m);
  try {
    validate_catalog(c);
    FAIL("expected CatalogError");
  } catch (const CatalogError& e) {
    const std::string what = e.what();
    CHECK(what.find("mem_bytes") != std::string::npos);
    CHECK(what.find("layers") != std::string::npos);
    CHECK(what.find("head_dim * q_heads") != std::string::npos);
  }
}

TEST_CASE("catalog validation rejects odd precisions and duplicate names") {
  Catalog c;
  c.gpus.push_back(make_gpu("g", 8e10, 1e12, 1e12, 1e11, 1e10, 1e10, 8));
  c.models.push_back(make_model("m", 2, 64, 256, 1000, 8, 4, 12));
  CHECK_THROWS_AS(validate_catalog(c), CatalogError);
  c.models[0].bits = 16;
  c.models.push_back(c.models[0]);
  CHECK_THROWS_WITH_AS(validate_catalog(c),
                       doctest::Contains("duplicate model name"), CatalogError);
}

TEST_CASE("catalog json round-trips losslessly") {
  const Catalog c = bundled_catalog();
  const Catalog back = catalog_from_json(catalog_to_json(c));
  REQUIRE(back.gpus.size() == c.gpus.size());
  REQUIRE(back.models.size() == c.models.size());
  for (size_t i = 0; i < c.gpus.size(); ++i) {
    CHECK(back.gpus[i].name == c.gpus[i].name);
    CHECK(back.gpus[i].mem_bytes == c.gpus[i].mem_bytes);
    CHECK(back.gpus[i].pcie_bandwidth == c.gpus[i].pcie_bandwidth);
  }
  for (size_t i = 0; i < c.models.size(); ++i) {
    CHECK(back.models[i].name == c.models[i].name);
    CHECK(back.models[i].pcie_coeff == c.models[i].pcie_coeff);
    CHECK(back.models[i].intermediate == c.models[i].intermediate);
  }
}

TEST_CASE("malformed catalog text names the problem") {
  CHECK_THROWS_WITH_AS(catalog_from_json("{not json"),
                       doctest::Contains("parse error"), CatalogError);
  CHECK_THROWS_WITH_AS(catalog_from_json(R"({"gpus": []})"),
                       doctest::Contains("field error"), CatalogError);
}

TEST_CASE("lookups by unknown name mention the name") {
  const Catalog c = bundled_catalog();
  CHECK_THROWS_WITH_AS(c.model("nope"), doctest::Contains("nope"), CatalogError);
  CHECK_THROWS_WITH_AS(c.gpu("nope"), doctest::Contains("nope"), CatalogError);
}

TEST_CASE("bundled catalog carries the three GPU generations") {
  const Catalog c = bundled_catalog();
  REQUIRE(c.gpus.size() == 3);
  const auto& h100 = c.gpu("H100-SXM");
  CHECK(h100.mem_bytes == doctest::Approx(80e9));
  CHECK(h100.intra_node_bandwidth == doctest::Approx(900e9));
  CHECK(h100.pcie_bandwidth == doctest::Approx(64e9));
  const auto& h200 = c.gpu("H200-SXM");
  CHECK(h200.mem_bytes == doctest::Approx(141e9));
  const auto& a100 = c.gpu("A100-80GB");
  CHECK(a100.intra_node_bandwidth == doctest::Approx(600e9));
  CHECK(a100.pcie_bandwidth == doctest::Approx(32e9));
  REQUIRE(c.models.size() == 6);
  // The 72B-class shape lands near 145 GB of 16-bit weights.
  CHECK(weight_size(c.model("qwen2.5-72b")) ==
        doctest::Approx(145.4e9).epsilon(0.01));
  for (const auto& m : c.models) CHECK(m.head_dim * m.q_heads == m.hidden);
}

TEST_CASE("checked-in catalog file stays in sync with the bundled data") {
  const std::string path = std::string(EVOSERVE_DATA_DIR) + "/catalog.json";
  const Catalog disk = load_catalog(path);
  CHECK(catalog_to_json(disk) == catalog_to_json(bundled_catalog()));
}

TEST_CASE("save and load through a temp file") {
  const std::string path = "/tmp/evoserve_catalog_rt.json";
  save_catalog(bundled_catalog(), path);
  const Catalog back = load_catalog(path);
  CHECK(catalog_to_json(back) == catalog_to_json(bundled_catalog()));
  std::remove(path.c_str());
}
