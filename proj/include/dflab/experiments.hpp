#pragma once

#include <string>

#include "json.hpp"

namespace dflab {

using Json = nlohmann::ordered_json;

// FNV-1a 64 over the canonical dump of the manifest, rendered as 16 hex
// digits. Every results payload embeds this so a result file can be matched
// to the exact configuration that produced it.
std::string manifest_hash(const Json& manifest);

struct RunOutcome {
    int exit_code = 0;   // 0 pass, 1 configuration error, 2 assertion failure
    Json results;        // schema dflab.results.v1
    std::string csv;     // tables.csv body; empty when the kind emits none
    std::string error;   // set when exit_code != 0
};

// Executes the experiment named by manifest["kind"]. Configuration problems
// (unknown kind, out-of-range values, incompatible parameter combinations)
// come back as exit_code 1 with the offending field named in `error`; a
// violated identity comes back as exit_code 2 with the full report attached.
// Identical manifests produce byte-identical results except the timestamp
// field.
RunOutcome run_manifest(const Json& manifest);

// Writes results.json, the manifest verbatim as manifest.json, and (when the
// kind produced one) tables.csv into out_dir, creating it if needed.
// Returns the path of results.json.
std::string write_run_files(const RunOutcome& outcome, const std::string& out_dir);

}  // namespace dflab
