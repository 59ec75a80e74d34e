#pragma once

#include <string>

namespace m3pt {

// Runs the quick invariant suite (the checks that need no fixtures and finish
// in seconds). Appends one "ok <name>" / "FAIL <name>: <why>" line per check.
// Returns true when everything passed. Output is deterministic.
bool run_selftest(std::string& output);

}  // namespace m3pt
