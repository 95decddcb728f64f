#pragma once

// The relprobe command line. Exit status: 0 success, 1 validation or runtime
// failure, 2 usage error. Errors are written to `err` prefixed with "error:".

#include <map>
#include <ostream>
#include <string>
#include <vector>

namespace relprobe {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

// key=value lines, '#' comments. Keys are normalised to flag spelling
// ('_' becomes '-'). Throws Error on malformed lines or repeated keys.
std::map<std::string, std::string> parse_config(const std::string& text, const std::string& source = "<config>");

}  // namespace relprobe
