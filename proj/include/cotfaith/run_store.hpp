#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace cotfaith {

inline constexpr int kStoreSchemaVersion = 1;

struct Manifest {
  std::string run_id;
  uint64_t seed = 0;
  int schema_version = kStoreSchemaVersion;
  nlohmann::json config;  // config snapshot
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

// Append-only run directory: manifest.json plus one line-delimited record
// file per kind (bf.records, ft.records, ...). Records carry a logical
// created_at — the per-run append ordinal — so identical runs produce
// byte-identical stores. One writer per directory; scans see acked records.
class RunStore {
public:
  // Creates the directory and manifest, or resumes an existing run after
  // verifying the manifest matches (same run_id and seed).
  static RunStore create(const std::filesystem::path& dir, Manifest manifest);
  // Opens an existing run directory.
  static RunStore open(const std::filesystem::path& dir);

  // Durable before return. Returns false (warning, no-op) when the
  // (kind, example_id, sample_index) key already exists in this run.
  bool append(const std::string& kind, const std::string& example_id, int sample_index,
              const nlohmann::json& payload);

  // Payloads of one kind, in append order.
  std::vector<nlohmann::json> scan(const std::string& kind) const;
  // Full envelopes (kind, created_at, example_id, sample_index, payload).
  std::vector<nlohmann::json> scan_envelopes(const std::string& kind) const;

  // Keys already present for a kind; drives idempotent resume.
  std::set<std::pair<std::string, int>> resume_point(const std::string& kind) const;
  bool has(const std::string& kind, const std::string& example_id, int sample_index) const;

  const Manifest& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  long record_count() const { return next_ordinal_; }

  static std::vector<std::string> known_kinds();

private:
  RunStore(std::filesystem::path dir, Manifest manifest);
  void load_existing();
  std::filesystem::path kind_path(const std::string& kind) const;

  std::filesystem::path dir_;
  Manifest manifest_;
  long next_ordinal_ = 0;
  std::map<std::string, std::set<std::pair<std::string, int>>> keys_;
};

}  // namespace cotfaith
