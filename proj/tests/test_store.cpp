#include <doctest.h>

#include "cotfaith/errors.hpp"
#include "cotfaith/run_store.hpp"
#include "test_util.hpp"

#include <fstream>

using namespace cotfaith;
using cotfaith::test::TempDir;

namespace {

Manifest test_manifest() {
  Manifest m;
  m.run_id = "run-test";
  m.seed = 1;
  m.config = {{"backend", {{"type", "scripted"}}}};
  return m;
}

}  // namespace

TEST_CASE("append then scan round-trips") {
  TempDir tmp("store");
  auto store = RunStore::create(tmp.path() / "run", test_manifest());
  CHECK(store.append("bf", "ex1", 0, {{"value", 1}}));
  CHECK(store.append("bf", "ex2", 0, {{"value", 2}}));
  const auto payloads = store.scan("bf");
  REQUIRE(payloads.size() == 2);
  CHECK(payloads[0].at("value") == 1);
  CHECK(payloads[1].at("value") == 2);
}

TEST_CASE("duplicate appends are idempotent no-ops") {
  TempDir tmp("store");
  auto store = RunStore::create(tmp.path() / "run", test_manifest());
  CHECK(store.append("bf", "ex1", 0, {{"value", 1}}));
  CHECK_FALSE(store.append("bf", "ex1", 0, {{"value", 999}}));
  const auto payloads = store.scan("bf");
  REQUIRE(payloads.size() == 1);
  CHECK(payloads[0].at("value") == 1);
}

TEST_CASE("resume point reflects stored keys") {
  TempDir tmp("store");
  auto store = RunStore::create(tmp.path() / "run", test_manifest());
  store.append("fak", "ex1", 0, {{"v", 0}});
  store.append("fak", "ex1", 3, {{"v", 3}});
  auto reopened = RunStore::open(tmp.path() / "run");
  const auto keys = reopened.resume_point("fak");
  CHECK(keys.size() == 2);
  CHECK(reopened.has("fak", "ex1", 3));
  CHECK_FALSE(reopened.has("fak", "ex1", 1));
}

TEST_CASE("created_at is the per-run append ordinal") {
  TempDir tmp("store");
  auto store = RunStore::create(tmp.path() / "run", test_manifest());
  store.append("bf", "ex1", 0, {});
  store.append("ft", "ex1", 0, {});
  store.append("bf", "ex2", 0, {});
  const auto bf = store.scan_envelopes("bf");
  const auto ft = store.scan_envelopes("ft");
  CHECK(bf[0].at("created_at") == 0);
  CHECK(ft[0].at("created_at") == 1);
  CHECK(bf[1].at("created_at") == 2);
}

TEST_CASE("manifest mismatch on resume is an error") {
  TempDir tmp("store");
  { auto store = RunStore::create(tmp.path() / "run", test_manifest()); }
  Manifest other = test_manifest();
  other.seed = 99;
  CHECK_THROWS_AS(RunStore::create(tmp.path() / "run", other), StoreError);
  Manifest same = test_manifest();
  CHECK_NOTHROW(RunStore::create(tmp.path() / "run", same));
}

TEST_CASE("torn tail lines are dropped on open") {
  TempDir tmp("store");
  {
    auto store = RunStore::create(tmp.path() / "run", test_manifest());
    store.append("bf", "ex1", 0, {{"v", 1}});
    store.append("bf", "ex2", 0, {{"v", 2}});
  }
  {
    std::ofstream out(tmp.path() / "run" / "bf.records", std::ios::app);
    out << "{\"kind\":\"bf\",\"example_id\":\"ex3\",\"sample";  // torn write
  }
  auto reopened = RunStore::open(tmp.path() / "run");
  CHECK(reopened.scan("bf").size() == 2);
  CHECK_FALSE(reopened.has("bf", "ex3", 0));
  // Appending after recovery keeps the file parseable.
  reopened.append("bf", "ex3", 0, {{"v", 3}});
  CHECK(RunStore::open(tmp.path() / "run").scan("bf").size() == 3);
}

TEST_CASE("opening a directory without a manifest fails") {
  TempDir tmp("store");
  CHECK_THROWS_AS(RunStore::open(tmp.path() / "missing"), StoreError);
}
