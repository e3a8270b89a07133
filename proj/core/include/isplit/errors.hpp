#pragma once

#include <stdexcept>
#include <string>

namespace isplit {

// Exit codes used by the CLI; library errors map onto these in tools/.
enum class ExitCode : int {
  ok = 0,
  config_error = 1,
  data_error = 2,
  stage_failure = 3,
  network_failure = 4,
};

struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DataError : std::runtime_error {
  explicit DataError(const std::string& what) : std::runtime_error(what) {}
};

struct CheckpointError : std::runtime_error {
  enum class Code { io, bad_magic, bad_version, checksum, truncated, bad_header };
  CheckpointError(Code c, const std::string& what) : std::runtime_error(what), code(c) {}
  Code code;
};

struct StageError : std::runtime_error {
  StageError(std::string stage_name, const std::string& what)
      : std::runtime_error("stage " + stage_name + ": " + what), stage(std::move(stage_name)) {}
  std::string stage;
};

}  // namespace isplit
