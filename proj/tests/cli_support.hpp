#pragma once

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>

#include "sdkprint/binary_io.hpp"
#include "sdkprint/hash.hpp"

namespace testing_support {

struct RunResult {
  int code = -1;
  std::string output;  // stdout and stderr interleaved
};

inline RunResult run_cli(const std::string& args) {
  const std::string cmd = std::string(SDKPRINT_BIN) + " " + args + " 2>&1";
  RunResult r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.output.append(buf, n);
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

inline std::string q(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

// Relative path -> contents for every file below `root`.
inline std::map<std::string, std::string> file_tree(const std::filesystem::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root))
    if (e.is_regular_file())
      out[std::filesystem::relative(e.path(), root).string()] = sdkprint::io::read_file(e.path().string());
  return out;
}

inline std::uint64_t tree_hash(const std::filesystem::path& root) {
  std::string all;
  for (const auto& [path, body] : file_tree(root)) all += path + '\0' + std::to_string(body.size()) + '\0' + body;
  return sdkprint::stable_hash(all);
}

}  // namespace testing_support
