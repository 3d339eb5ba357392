#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "ordcast/baseline.hpp"
#include "ordcast/intensity.hpp"
#include "ordcast/micromodel.hpp"
#include "ordcast/synthdata.hpp"
#include "ordcast/verify.hpp"

namespace ordcast {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitMissingArtifact = 2,
  kExitSchema = 3,
  kExitDivergence = 4,
};

class MissingArtifact : public std::runtime_error {
 public:
  explicit MissingArtifact(const std::filesystem::path& p)
      : std::runtime_error("missing artifact: " + p.string()), path(p) {}
  std::filesystem::path path;
};

class HashMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct DataConfig {
  double days = 60;
  double interval_h = 6;  // one sequence every interval_h hours
  double step_min = 10;   // minutes between frames
  std::size_t extra_frames = 2;  // sequence length = t_in + t_out + extra
  std::size_t max_val_windows = 64;
  std::size_t max_test_windows = 64;
};

struct EvalConfig {
  std::vector<double> thresholds{0.5, 1, 2, 5, 10};
  std::vector<double> neighbourhoods_km{2, 10, 20};
  std::vector<std::size_t> pools{};
  bool ssim = false;
};

struct AttributionConfig {
  std::size_t steps = 64;
  std::size_t samples = 2;
  std::size_t cls = 0;
};

/// Whole-run configuration. Unknown keys are rejected at every level.
struct RunConfig {
  std::uint64_t seed = 0;
  // Matches the default model.k; "paper-europe" needs model.k = 18.
  nlohmann::json bins_json = nlohmann::json::array({0.5, 1, 2, 5, 10});
  DataConfig data;
  SplitOptions split;
  SceneConfig scene;
  ModelConfig model;
  EvalConfig eval;
  MotionOptions motion;
  AttributionConfig attribution;

  BinSet bins() const { return BinSet::from_json(bins_json); }
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  // FNV-1a of the canonical JSON dump, as 16 hex digits.
  std::string hash() const;
};

struct RunOptions {
  std::filesystem::path config;
  std::filesystem::path out = "run";
  std::string model = "micromodel";
  std::optional<std::uint64_t> seed;
  bool plot_data = false;
  bool force = false;
  std::ostream* log = nullptr;
};

inline const std::vector<std::string>& pipeline_stages() {
  static const std::vector<std::string> s{"gen",     "split", "train",     "calibrate",
                                          "predict", "eval",  "attribute", "report"};
  return s;
}

// Runs one stage; throws the typed errors above (see exit_code_for).
void run_stage(const std::string& stage, const RunOptions& opt);
// Runs a stage and maps failures to exit codes, printing to stderr.
int run_stage_status(const std::string& stage, const RunOptions& opt);

}  // namespace ordcast
