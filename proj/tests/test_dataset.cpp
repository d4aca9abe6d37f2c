#include "doctest.h"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "metasurf/dataset.hpp"
#include "metasurf/error.hpp"
#include "metasurf/rng.hpp"

using namespace metasurf;
namespace fs = std::filesystem;

namespace {

DatasetFile synthetic(std::size_t n, std::uint64_t seed) {
  DatasetFile ds = DatasetFile::create(PatternClass::RDN, SolverConfig::desk(), GeneratorParams{}, seed);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s;
    s.gen_seed = hash64(seed, i);
    s.pattern = gen_rdn(s.gen_seed);
    Rng rng(s.gen_seed);
    for (auto& v : s.copr) v = static_cast<float>(rng.uniform());
    ds.samples.push_back(s);
  }
  return ds;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "metasurf_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("record layout is 168 bytes, bit for bit") {
  CHECK(kRecordBytes == 168);
  DatasetFile ds = DatasetFile::create(PatternClass::PTN, SolverConfig{}, GeneratorParams{}, 7);
  Sample s;
  s.pattern.set(0, 0, true);    // bit 0 -> byte 0, 0x80
  s.pattern.set(0, 9, true);    // bit 9 -> byte 1, 0x40
  s.pattern.set(15, 15, true);  // bit 255 -> byte 31, 0x01
  s.gen_seed = 0x0102030405060708ULL;
  for (int k = 0; k < 32; ++k) s.copr[k] = 0.25f * static_cast<float>(k % 4) + 0.125f;
  ds.samples.push_back(s);
  const auto bytes = encode(ds);

  const std::size_t L = ds.header_json.size();
  REQUIRE(bytes.size() == 20 + L + 168);
  CHECK(std::memcmp(bytes.data(), "MSDS", 4) == 0);
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 1);  // PTN
  CHECK(bytes[7] == 0);
  CHECK((bytes[8] | bytes[9] << 8 | bytes[10] << 16 | std::uint32_t(bytes[11]) << 24) == L);
  CHECK(std::string(bytes.begin() + 12, bytes.begin() + 12 + static_cast<long>(L)) == ds.header_json);
  for (int b = 0; b < 8; ++b) CHECK(bytes[12 + L + b] == (b == 0 ? 1 : 0));

  const std::uint8_t* rec = bytes.data() + 20 + L;
  std::array<std::uint8_t, 32> want_pattern{};
  want_pattern[0] = 0x80;
  want_pattern[1] = 0x40;
  want_pattern[31] = 0x01;
  CHECK(std::memcmp(rec, want_pattern.data(), 32) == 0);
  const std::uint8_t want_seed[8] = {8, 7, 6, 5, 4, 3, 2, 1};
  CHECK(std::memcmp(rec + 32, want_seed, 8) == 0);
  for (int k = 0; k < 32; ++k) {
    const std::uint32_t bits = std::bit_cast<std::uint32_t>(s.copr[k]);
    for (int b = 0; b < 4; ++b) CHECK(rec[40 + 4 * k + b] == ((bits >> (8 * b)) & 0xff));
  }
}

TEST_CASE("pattern packing round trip") {
  for (int i = 0; i < 100; ++i) {
    const Pattern p = gen_rdn(hash64(3, i), 0.1 * (i % 11));
    const auto packed = pack_pattern(p);
    CHECK(unpack_pattern(packed).same_cells(p));
  }
}

TEST_CASE("encode/decode and save/load are byte exact") {
  const DatasetFile ds = synthetic(50, 21);
  const auto bytes = encode(ds);
  const DatasetFile back = decode(bytes);
  CHECK(encode(back) == bytes);
  CHECK(back.cls == ds.cls);
  CHECK(back.header_json == ds.header_json);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(back.samples[i].pattern.same_cells(ds.samples[i].pattern));
    CHECK(back.samples[i].gen_seed == ds.samples[i].gen_seed);
    CHECK(back.samples[i].copr == ds.samples[i].copr);
  }
  const fs::path path = temp_file("rt.msds");
  save(ds, path);
  std::ifstream in(path, std::ios::binary);
  const std::vector<std::uint8_t> on_disk((std::istreambuf_iterator<char>(in)), {});
  CHECK(on_disk == bytes);
  CHECK(encode(load(path)) == bytes);
  CHECK(content_fingerprint(load(path)) == content_fingerprint(ds));
}

TEST_CASE("header accessors") {
  const DatasetFile ds = synthetic(2, 1);
  CHECK(ds.solver() == SolverConfig::desk());
  CHECK(ds.solver_fingerprint() == fingerprint(SolverConfig::desk()));
  CHECK(ds.freqs().size() == 32);
  CHECK(ds.spectrum(1).values.size() == 32);
  CHECK(ds.empty_like().size() == 0);
  CHECK(ds.empty_like().header_json == ds.header_json);
}

TEST_CASE("corrupt inputs are rejected") {
  const auto bytes = encode(synthetic(5, 4));
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(kind_of([&] { decode(bad_magic); }) == ErrorKind::CorruptHeader);
  auto bad_version = bytes;
  bad_version[4] = 9;
  CHECK(kind_of([&] { decode(bad_version); }) == ErrorKind::VersionMismatch);
  auto bad_tag = bytes;
  bad_tag[6] = 7;
  CHECK(kind_of([&] { decode(bad_tag); }) == ErrorKind::CorruptHeader);
  const std::vector<std::uint8_t> truncated(bytes.begin(), bytes.end() - 100);
  try {
    decode(truncated);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TruncatedRecords);
    CHECK(std::string(e.what()).find("record 4") != std::string::npos);
  }
  auto trailing = bytes;
  trailing.push_back(0);
  CHECK(kind_of([&] { decode(trailing); }) == ErrorKind::CorruptHeader);
  CHECK(kind_of([&] { decode(std::vector<std::uint8_t>(5, 0)); }) == ErrorKind::CorruptHeader);
  CHECK(kind_of([] { load("/nonexistent/file.msds"); }) == ErrorKind::Io);
}

TEST_CASE("record independence") {
  DatasetFile ds = synthetic(6, 9);
  const auto full = encode(ds);
  const std::size_t base = 20 + ds.header_json.size();
  ds.samples.erase(ds.samples.begin() + 2);
  const auto cut = encode(ds);
  for (std::size_t j = 0; j < 5; ++j) {
    const std::size_t src = j < 2 ? j : j + 1;
    CHECK(std::equal(cut.begin() + static_cast<long>(base + 168 * j), cut.begin() + static_cast<long>(base + 168 * (j + 1)),
                     full.begin() + static_cast<long>(base + 168 * src)));
  }
}

TEST_CASE("split sizes, disjointness and determinism") {
  const DatasetFile ten = synthetic(10, 5);
  const Split s = split(ten, 0.1, 3);
  CHECK(s.train.size() == 9);
  CHECK(s.test.size() == 1);
  const DatasetFile big = synthetic(2200, 6);
  const Split a = split(big, 200.0 / 2200.0, 11);
  const Split b = split(big, 200.0 / 2200.0, 11);
  CHECK(a.train.size() == 2000);
  CHECK(a.test.size() == 200);
  CHECK(encode(a.test) == encode(b.test));
  std::multiset<std::uint64_t> all, parts;
  for (const auto& x : big.samples) all.insert(x.gen_seed);
  for (const auto& x : a.train.samples) parts.insert(x.gen_seed);
  for (const auto& x : a.test.samples) parts.insert(x.gen_seed);
  CHECK(all == parts);
  CHECK(kind_of([&] { split(synthetic(3, 1), 0.01, 1); }) == ErrorKind::EmptySide);
  CHECK(kind_of([&] { split(ten, 1.0, 1); }) == ErrorKind::InvalidArgument);
  CHECK(head(big, 5).size() == 5);
  CHECK(head(ten, 50).size() == 10);
}

TEST_CASE("build_dataset: one record, worker independence") {
  const SolverConfig cfg = SolverConfig::desk();
  const DatasetFile one = build_dataset(PatternClass::PLG, 1, 99, cfg, 1);
  CHECK(encode(one).size() == 20 + one.header_json.size() + 168);
  CHECK(one.samples[0].pattern.same_cells(generate_pattern(PatternClass::PLG, one.samples[0].gen_seed, {})));
  const DatasetFile w1 = build_dataset(PatternClass::PTN, 3, 5, cfg, 1);
  const DatasetFile w3 = build_dataset(PatternClass::PTN, 3, 5, cfg, 3);
  CHECK(encode(w1) == encode(w3));
  for (const auto& s : w1.samples) CHECK(placements_consistent(generate_pattern(PatternClass::PTN, s.gen_seed, {})));
  CHECK(kind_of([&] { build_dataset(PatternClass::RDN, 0, 1, cfg, 1); }) == ErrorKind::InvalidArgument);
  CHECK(kind_of([&] { build_dataset(PatternClass::OTHER, 1, 1, cfg, 1); }) == ErrorKind::InvalidArgument);
}

TEST_CASE("generator params JSON") {
  GeneratorParams g;
  g.ptn_max_shapes = 9;
  CHECK(generator_params_from_json(to_json(g)) == g);
  CHECK(kind_of([] { generator_params_from_json(R"({"nope": 1})"); }) == ErrorKind::InvalidConfig);
}
