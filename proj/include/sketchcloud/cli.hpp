#pragma once

// Command-line front end. Each command is a plain function so tests can run
// it in-process.

#include <iosfwd>
#include <string>
#include <vector>

#include "sketchcloud/gradcheck.hpp"

namespace sketchcloud {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitNumerical = 3,
};

// args excludes the program name, e.g. {"train", "--data", "d", "--out", "m.sksm"}.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// `extra` cases run after the standard suite.
int cmd_gradcheck(std::uint64_t seed, std::ostream& out, const std::vector<GradcheckCase>& extra = {});

}  // namespace sketchcloud
