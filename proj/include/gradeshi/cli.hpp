#ifndef GRADESHI_CLI_HPP
#define GRADESHI_CLI_HPP

#include <iosfwd>
#include <string>
#include <vector>

namespace gradeshi {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// args excludes the program name. Returns the process exit status.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

} // namespace gradeshi

#endif
