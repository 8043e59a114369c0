#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>

#include "difformer/config.hpp"
#include "json.hpp"

namespace difformer::cli {

/// Environment variable naming the directory that receives every output file.
inline constexpr const char* kOutDirEnv = "DIFFORMER_OUT_DIR";

/// DIFFORMER_OUT_DIR when set (created on demand), the working directory otherwise.
std::filesystem::path output_dir();

/// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kFailure = 1;
inline constexpr int kUsage = 2;

/// Parses argv and runs one subcommand (train, verify, bench, ablate, sweep).
/// Progress goes to `out`, diagnostics to `err`.
int dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Energy suites behind `verify`: tangency, bound, oracle equivalence and the
/// descent frontier. `passed` is false when any suite fails.
struct VerifyOutcome {
    nlohmann::json report;
    bool passed = true;
};
VerifyOutcome run_verify(const RunConfig& cfg);

}  // namespace difformer::cli
