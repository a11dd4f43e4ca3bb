#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace fsim {

/// Entry point of the `fsim` tool. Subcommands: synth-corpus, train,
/// evaluate, scan; global flags --config, --seed, --out. Returns the process
/// exit code; failures print a JSON error object to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

}  // namespace fsim
