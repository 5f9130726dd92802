#include "cotfaith/run_store.hpp"

#include "cotfaith/errors.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

#ifdef _WIN32
#include <io.h>
#else
#include <unistd.h>
#endif

namespace cotfaith {

namespace fs = std::filesystem;

void to_json(nlohmann::json& j, const Manifest& m) {
  j = nlohmann::json{{"run_id", m.run_id},
                     {"seed", m.seed},
                     {"schema_version", m.schema_version},
                     {"config", m.config}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.run_id = j.at("run_id").get<std::string>();
  m.seed = j.value("seed", uint64_t{0});
  m.schema_version = j.value("schema_version", kStoreSchemaVersion);
  m.config = j.value("config", nlohmann::json::object());
}

std::vector<std::string> RunStore::known_kinds() {
  return {"bf", "ft", "fur", "fak", "lens", "cma"};
}

RunStore::RunStore(fs::path dir, Manifest manifest)
    : dir_(std::move(dir)), manifest_(std::move(manifest)) {}

fs::path RunStore::kind_path(const std::string& kind) const {
  return dir_ / (kind + ".records");
}

RunStore RunStore::create(const fs::path& dir, Manifest manifest) {
  fs::create_directories(dir);
  const fs::path mpath = dir / "manifest.json";
  if (fs::exists(mpath)) {
    std::ifstream in(mpath);
    nlohmann::json j;
    in >> j;
    Manifest existing = j.get<Manifest>();
    if (existing.run_id != manifest.run_id || existing.seed != manifest.seed)
      throw StoreError("run directory " + dir.string() +
                       " already holds a different run (id '" + existing.run_id +
                       "', seed " + std::to_string(existing.seed) + ")");
    if (existing.schema_version > manifest.schema_version)
      throw StoreError("run directory " + dir.string() + " has newer schema_version " +
                       std::to_string(existing.schema_version));
    manifest = std::move(existing);
  } else {
    nlohmann::json j = manifest;
    std::ofstream out(mpath);
    if (!out) throw StoreError("cannot write manifest: " + mpath.string());
    out << j.dump(2) << "\n";
  }
  RunStore store(dir, std::move(manifest));
  store.load_existing();
  return store;
}

RunStore RunStore::open(const fs::path& dir) {
  const fs::path mpath = dir / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw StoreError("no manifest in run directory: " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw StoreError("corrupt manifest " + mpath.string() + ": " + e.what());
  }
  RunStore store(dir, j.get<Manifest>());
  store.load_existing();
  return store;
}

void RunStore::load_existing() {
  next_ordinal_ = 0;
  keys_.clear();
  for (const auto& kind : known_kinds()) {
    const fs::path path = kind_path(kind);
    if (!fs::exists(path)) continue;
    std::ifstream in(path, std::ios::binary);
    std::string content((std::istreambuf_iterator<char>(in)), {});
    in.close();

    // Keep only the prefix of complete, parseable, newline-terminated lines;
    // a crash can leave a torn tail which must be dropped before appending.
    uintmax_t good_bytes = 0;
    size_t start = 0;
    while (start < content.size()) {
      const size_t nl = content.find('\n', start);
      if (nl == std::string::npos) break;  // partial line without newline
      const std::string line = content.substr(start, nl - start);
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception&) {
        break;
      }
      keys_[kind].insert({j.value("example_id", ""), j.value("sample_index", 0)});
      ++next_ordinal_;
      good_bytes = nl + 1;
      start = nl + 1;
    }
    if (fs::file_size(path) != good_bytes) fs::resize_file(path, good_bytes);
  }
}

bool RunStore::append(const std::string& kind, const std::string& example_id,
                      int sample_index, const nlohmann::json& payload) {
  auto& kind_keys = keys_[kind];
  if (!kind_keys.insert({example_id, sample_index}).second) {
    std::cerr << "[run-store] duplicate record ignored: kind=" << kind
              << " example=" << example_id << " sample=" << sample_index << "\n";
    return false;
  }
  nlohmann::json envelope{{"kind", kind},
                          {"run_id", manifest_.run_id},
                          {"created_at", next_ordinal_},
                          {"schema_version", manifest_.schema_version},
                          {"example_id", example_id},
                          {"sample_index", sample_index},
                          {"payload", payload}};
  const std::string line = envelope.dump() + "\n";

  std::FILE* f = std::fopen(kind_path(kind).c_str(), "ab");
  if (!f) throw StoreError("cannot open for append: " + kind_path(kind).string());
  const size_t written = std::fwrite(line.data(), 1, line.size(), f);
  const bool flushed = std::fflush(f) == 0;
#ifndef _WIN32
  ::fsync(fileno(f));
#endif
  std::fclose(f);
  if (written != line.size() || !flushed)
    throw StoreError("short write to " + kind_path(kind).string());
  ++next_ordinal_;
  return true;
}

std::vector<nlohmann::json> RunStore::scan_envelopes(const std::string& kind) const {
  std::vector<nlohmann::json> out;
  const fs::path path = kind_path(kind);
  if (!fs::exists(path)) return out;
  std::ifstream in(path);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw StoreError("corrupt record in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<nlohmann::json> RunStore::scan(const std::string& kind) const {
  std::vector<nlohmann::json> out;
  for (auto& env : scan_envelopes(kind)) out.push_back(env.at("payload"));
  return out;
}

std::set<std::pair<std::string, int>> RunStore::resume_point(const std::string& kind) const {
  auto it = keys_.find(kind);
  return it == keys_.end() ? std::set<std::pair<std::string, int>>{} : it->second;
}

bool RunStore::has(const std::string& kind, const std::string& example_id,
                   int sample_index) const {
  auto it = keys_.find(kind);
  return it != keys_.end() && it->second.count({example_id, sample_index}) > 0;
}

}  // namespace cotfaith
