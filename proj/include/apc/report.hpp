#pragma once

// JSON and CSV artifact layer shared by the command-line tool and the tests.
// Every artifact carries "schema": 1 and a run manifest; with an empty
// timestamp (the default) reruns under the same seed are byte-identical.

#include <string>
#include <vector>

#include <json.hpp>

#include "apc/analysis.hpp"
#include "apc/datagen.hpp"
#include "apc/inference.hpp"

namespace apc {

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolName = "apc";
inline constexpr const char* kToolVersion = "0.1.0";

// Manifest recorded in every artifact: tool identity, the command, its
// effective arguments, and the master seed.  `stamp` fills the timestamp
// with wall-clock time (ISO 8601) and is off by default because it breaks
// byte-identical reruns.
nlohmann::json make_manifest(const std::string& command, std::uint64_t seed,
                             const nlohmann::json& args, bool stamp = false);

nlohmann::json grid_spec_to_json(const GridSpec& spec);
nlohmann::json fit_config_to_json(const FitConfig& cfg);
nlohmann::json effects_to_json(const EffectSet& e);
EffectSet effects_from_json(const nlohmann::json& j);

// Sidecar for a generated dataset: case, grid, seed, and the true effects.
nlohmann::json dataset_manifest(const Dataset& data, const CaseSpec& c,
                                const EffectSet& beta,
                                const nlohmann::json& manifest);

nlohmann::json fit_report(const FitResult& fit, const std::string& data_path,
                          const nlohmann::json& manifest);

nlohmann::json grid_report(const std::vector<BiasReport>& rows,
                           const nlohmann::json& manifest);

// One line per grid cell: case_id,signs,model,s,grade,converged.
std::string grid_csv(const std::vector<BiasReport>& rows);

// Index weight sums, their ratios under level and difference penalties, and
// the closed-form gap between the two.
nlohmann::json theory_report(int I, int J);

// Long-format plot series.  Case mode: noise-free cell means, one series per
// period, x = age group.  Fit mode: one series per factor block from a fit
// report, x = level index.
std::string plot_case_csv(const CaseSpec& c, const GridSpec& spec);
std::string plot_fit_csv(const nlohmann::json& fit_report_json);

// Serialize with a stable layout (2-space indent, sorted keys off, newline
// at end) so identical content means identical bytes.
std::string dump_json(const nlohmann::json& j);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace apc
