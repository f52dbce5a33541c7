#pragma once

// Pipeline stages behind the famarl command line. Every command writes its
// resolved configuration as <out>/<command>.config next to its outputs and
// never modifies its inputs.

#include <filesystem>
#include <optional>
#include <vector>

#include <json.hpp>

#include "famarl/cli/run_config.hpp"

namespace famarl::cli {

using std::filesystem::path;

/// <out>/demos.jsonl and <out>/manifest.json.
void gen_demos(const RunConfig& cfg);

/// <out>/segments.jsonl and <out>/distances/episode_<id>.csv. Throws
/// UsageError for an empty corpus.
void segment(const RunConfig& cfg, const path& corpus);

/// Segments of a corpus padded to the model length: split to fit L and with L
/// chosen from the lengths when `L` is 0.
struct SegmentSet {
  std::vector<favae::ActionSeq> segments;
  int L = 0;
};
SegmentSet load_segment_set(const RunConfig& cfg, const path& corpus, const path& segments, int L = 0);

/// <out>/calibration.json; returns C_last.
std::vector<double> calibrate_c(const RunConfig& cfg, const path& corpus, const path& segments);

/// <out>/favae.ck and <out>/favae_log.csv. Calibrates first unless the config
/// carries C_last. Returns the resolved config.
RunConfig train_favae(RunConfig cfg, const path& corpus, const path& segments);

/// One JSON-lines file per value: <out>/traversal_<k>.jsonl. Returns the
/// written paths.
std::vector<path> traverse(const RunConfig& cfg, const path& model, const path& corpus, const path& segments);

/// <out>/policy.ck and <out>/curve.csv. The famarl agent needs a FAVAE
/// checkpoint.
void train_policy(const RunConfig& cfg, const std::optional<path>& favae_model);

/// Deterministic evaluation of a policy checkpoint, or of a scripted expert
/// when `script` is set. Writes <out>/metrics.json.
nlohmann::json evaluate(const RunConfig& cfg, const std::optional<path>& policy_model,
                        const std::optional<path>& favae_model, std::optional<scripts::ScriptKind> script);

/// Runs the invariant suites (plus the tiling check of a manifest when both
/// paths are given). Writes <out>/check.json; "passed" is the conjunction.
nlohmann::json check(const RunConfig& cfg, const std::optional<path>& corpus, const std::optional<path>& segments);

}  // namespace famarl::cli
