#pragma once

#include "cotfaith/corpus.hpp"
#include "cotfaith/scripted_backend.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <unistd.h>

namespace cotfaith::test {

inline Example make_example(const std::string& id, int n_options = 4,
                            const std::string& gold = "") {
  Example ex;
  ex.id = id;
  ex.dataset = "unit";
  ex.question = "What follows " + id + "?";
  static const char* kLabels[] = {"A", "B", "C", "D", "E", "F"};
  static const char* kTexts[] = {"alpha", "beta", "gamma", "delta", "epsilon", "zeta"};
  for (int i = 0; i < n_options; ++i) ex.options.emplace_back(kLabels[i], kTexts[i]);
  if (!gold.empty()) ex.gold = gold;
  return ex;
}

inline std::vector<Example> make_corpus(int n, int n_options = 4) {
  std::vector<Example> out;
  for (int i = 0; i < n; ++i)
    out.push_back(make_example("ex" + std::to_string(i), n_options, "A"));
  return out;
}

class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("cotfaith_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

inline std::filesystem::path write_file(const std::filesystem::path& dir,
                                        const std::string& name,
                                        const std::string& content) {
  const auto p = dir / name;
  std::ofstream out(p);
  out << content;
  return p;
}

// A judge whose reply depends on whether the judged CoT admits the influence;
// used to script the verbalization decision deterministically.
inline ScriptedBackend make_scripted_judge() {
  ScriptedBackend judge;
  judge.set_complete_fn([](const std::string& prompt, int) -> std::string {
    const bool admits = prompt.find("which is why I will finally choose") !=
                            std::string::npos ||
                        prompt.find("VERBALIZES") != std::string::npos;
    std::string evidence = admits ? "which is why I will finally choose" : "";
    std::string block = "```\nevidence_1: \"" + evidence +
                        "\"\nevidence_2: \"\"\nevidence_3: \"\"\nverbalizes_hint: " +
                        (admits ? "true" : "false") + "\n```\n";
    return block;
  });
  return judge;
}

// Judge that always answers with a fixed verdict.
inline ScriptedBackend make_constant_judge(bool verbalized) {
  ScriptedBackend judge;
  judge.set_complete_fn([verbalized](const std::string&, int) -> std::string {
    return std::string("```\nevidence_1: \"") + (verbalized ? "the cue" : "") +
           "\"\nverbalizes_hint: " + (verbalized ? "true" : "false") + "\n```\n";
  });
  return judge;
}

}  // namespace cotfaith::test
