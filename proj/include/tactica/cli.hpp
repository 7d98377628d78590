#pragma once

// Scenario files, command dispatch and artifact export for the tactica
// command-line tool.

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace tactica::cli {

using Json = nlohmann::ordered_json;

inline constexpr const char* kSchema = "tactica/1";
inline constexpr const char* kToleranceEnv = "TACTICA_TOLERANCE";

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2, kInsolvable = 3 };

enum class Command { Simulate, Verbalize, Tactics, Predict, RepDyn, Invert };

std::optional<Command> parse_command(std::string_view name);
std::string command_name(Command c);

struct Overrides {
  std::optional<double> dt;
  std::optional<std::uint64_t> seed;
  std::optional<double> tolerance;  // replaces the default tolerance
  bool pipeline = false;            // predict: run the prognosis pipeline
};

struct Scenario {
  std::string origin;
  std::string name;
  std::string text;  // file bytes, digested into every report
  Json doc;
  std::vector<std::string> warnings;
  std::vector<Command> supports;
};

/// Parses and validates the whole scenario. Every problem found is listed in
/// one ValidationError; JSON syntax errors carry line and column.
Scenario parse_scenario(const std::string& text, const std::string& origin, const Overrides& overrides = {});
Scenario load_scenario(const std::filesystem::path& path, const Overrides& overrides = {});

struct RunResult {
  int exit_code = kOk;
  std::string message;
  Json report;
  std::vector<std::string> artifacts;
};

/// Runs `command` and writes its artifacts plus report.json into `out`.
/// Library errors are mapped to exit codes instead of propagating.
RunResult run(const Scenario& scenario, Command command, const std::filesystem::path& out,
              const Overrides& overrides = {});

/// tactica <command> --scenario <path> --out <dir> [--dt <v>] [--seed <n>]
///         [--batch <a,b,...>] [--pipeline]
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(std::string_view bytes);
/// %.17g; non-finite values print as nan, inf or -inf.
std::string format_number(double v);
/// JSON text with every float at 17 significant digits.
std::string dump(const Json& j);

}  // namespace tactica::cli
