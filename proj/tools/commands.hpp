#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dirgnn/spurious_motif.hpp"
#include "dirgnn/train.hpp"

namespace dirgnn::cli {

enum ExitCode : int {
  kOk = 0,
  kUsage = 2,
  kMissingInput = 3,
  kIncompatible = 4,
  kNotFound = 5,
};

// Thrown by commands; carries the process exit code.
class CommandError : public std::runtime_error {
 public:
  CommandError(int code, const std::string& what) : std::runtime_error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct GenerateArgs {
  motif::GenConfig cfg;
  std::filesystem::path out;
};

struct TrainArgs {
  std::filesystem::path data;
  train::TrainConfig cfg;
  std::filesystem::path out;
};

struct EvalArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::optional<std::size_t> k;
  std::filesystem::path out;
};

struct SweepArgs {
  TrainArgs base;
  std::vector<double> lambdas;
  std::size_t seeds = 5;
};

struct ExportArgs {
  std::filesystem::path checkpoint;
  std::filesystem::path data;
  std::vector<std::int64_t> ids;
  std::string split;
  std::string format = "json";
  std::filesystem::path out;
};

// Full argv of the invocation, stored in every run manifest.
void set_command_line(std::vector<std::string> argv);

int cmd_generate(const GenerateArgs& a);
int cmd_train(const TrainArgs& a);
int cmd_eval(const EvalArgs& a);
int cmd_sweep(const SweepArgs& a);
int cmd_export(const ExportArgs& a);

std::string sha256_file(const std::filesystem::path& p);

}  // namespace dirgnn::cli
