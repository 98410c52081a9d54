#pragma once

#include <unistd.h>

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "toolqp/corpus.hpp"

namespace tqtest {

inline std::string fixtures_dir() { return TQP_FIXTURES_DIR; }

inline std::string fixture(const std::string& name) { return fixtures_dir() + "/" + name; }

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("toolqp_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string file(const std::string& name) const { return (path_ / name).string(); }
  std::string str() const { return path_.string(); }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::string out((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return out;
}

inline void spit(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  out << content;
}

inline toolqp::ToolDoc make_tool(const std::string& name, const std::string& description,
                                 const std::vector<std::string>& params = {}) {
  toolqp::ToolDoc tool;
  tool.id = name;
  tool.name = name;
  tool.description = description;
  for (const std::string& param : params) {
    tool.parameters.emplace_back(param,
                                 toolqp::ToolParameter{param + " value", "string", true, {}});
  }
  return tool;
}

inline toolqp::ToolCorpus load_toy_corpus() {
  return toolqp::ToolCorpus::load(fixture("toy_corpus.jsonl"));
}

}  // namespace tqtest
