#include "doctest.h"

#include <filesystem>
#include <fstream>

#include "metasurf/error.hpp"
#include "metasurf/ops.hpp"
#include "metasurf/param_store.hpp"

using namespace metasurf;
using namespace metasurf::ad;
namespace fs = std::filesystem;

namespace {

ParamStore sample_store() {
  Rng rng(3);
  ParamStore s;
  s.seed = 42;
  s.meta_json = R"({"arch":"test"})";
  s.add_param("conv.w", kaiming_uniform({4, 2, 3, 3}, 18, 0.2, rng));
  s.add_param("head.b", Tensor({5}, 0.25));
  s.add_buffer("bn.running_var", Tensor({4}, 1.0));
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metasurf_test_params" / name;
  fs::remove_all(dir);
  return dir;
}

}  // namespace

TEST_CASE("registration and counts") {
  ParamStore s = sample_store();
  CHECK(s.param_count() == 4 * 2 * 9 + 5);
  CHECK(s.contains("bn.running_var"));
  CHECK_FALSE(s.contains("missing"));
  CHECK(s.get("conv.w").requires_grad());
  CHECK_FALSE(s.get("bn.running_var").requires_grad());
  CHECK_THROWS_AS(s.add_param("head.b", Tensor({1})), Error);
  CHECK_THROWS_AS(s.get("missing"), Error);
}

TEST_CASE("checkpoint round trip keeps values, kinds and Adam state") {
  ParamStore s = sample_store();
  backward(sum(mul(s.get("conv.w"), s.get("conv.w"))));
  backward(sum(s.get("head.b")));
  adam_step(s, AdamConfig{});
  const fs::path dir = fresh_dir("rt");
  s.save(dir);
  CHECK(fs::exists(dir / "manifest.json"));
  CHECK(fs::file_size(dir / "params.bin") == 8 * (3 * (72 + 5) + 4));
  const ParamStore back = ParamStore::load(dir);
  CHECK(back.hash() == s.hash());
  CHECK(back.step == 1);
  CHECK(back.seed == 42);
  CHECK(back.meta_json == R"({"arch":"test"})");
  REQUIRE(back.entries().size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(back.entries()[i].name == s.entries()[i].name);
    CHECK(back.entries()[i].trainable == s.entries()[i].trainable);
    CHECK(back.entries()[i].m == s.entries()[i].m);
    CHECK(back.entries()[i].v == s.entries()[i].v);
  }
}

TEST_CASE("clone is deep and hash tracks values") {
  ParamStore s = sample_store();
  ParamStore c = s.clone();
  CHECK(c.hash() == s.hash());
  c.get("head.b").data()[0] = 9;
  CHECK(c.hash() != s.hash());
  CHECK(s.get("head.b").data()[0] == 0.25);
}

TEST_CASE("freezing") {
  ParamStore s = sample_store();
  s.set_trainable(false);
  CHECK_FALSE(s.get("conv.w").requires_grad());
  s.set_trainable(true);
  CHECK(s.get("conv.w").requires_grad());
  CHECK_FALSE(s.get("bn.running_var").requires_grad());
}

TEST_CASE("corrupt checkpoints are rejected") {
  const fs::path dir = fresh_dir("bad");
  sample_store().save(dir);
  {
    std::ofstream f(dir / "params.bin", std::ios::binary | std::ios::app);
    f << "x";
  }
  CHECK_THROWS_AS(ParamStore::load(dir), Error);
  {
    std::ofstream f(dir / "manifest.json");
    f << R"({"format":"other"})";
  }
  CHECK_THROWS_AS(ParamStore::load(dir), Error);
  CHECK_THROWS_AS(ParamStore::load(fresh_dir("none")), Error);
}
