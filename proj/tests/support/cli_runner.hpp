#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace cli {

struct Outcome {
  int exit_code = -1;
  std::string out;
};

// Runs the CLI through the shell with stderr discarded, capturing stdout.
inline Outcome run(const std::string& args, const std::string& env = "") {
  const auto capture = std::filesystem::temp_directory_path() / ("mss_cli_" + std::to_string(::getpid()) + ".out");
  const std::string cmd = env + (env.empty() ? "" : " ") + MSS_CLI_PATH + std::string(" ") + args + " > " +
                          capture.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  Outcome o;
  o.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream in(capture);
  std::ostringstream buf;
  buf << in.rdbuf();
  o.out = buf.str();
  std::filesystem::remove(capture);
  return o;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// True when both directories hold the same file names with identical bytes.
inline bool same_tree(const std::filesystem::path& a, const std::filesystem::path& b) {
  namespace fs = std::filesystem;
  std::size_t count = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    const auto other = b / entry.path().filename();
    if (!fs::exists(other) || slurp(entry.path()) != slurp(other)) return false;
    ++count;
  }
  std::size_t other_count = 0;
  for ([[maybe_unused]] const auto& entry : fs::directory_iterator(b)) ++other_count;
  return count == other_count && count > 0;
}

}  // namespace cli
