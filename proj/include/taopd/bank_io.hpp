#pragma once

#include <string>
#include <vector>

#include "taopd/context_bank.hpp"
#include "taopd/diagnostics.hpp"

namespace taopd::io {

/// Saves a frozen bank with its checkpoint snapshots and any recorded
/// intervention runs. Saving over an existing bank file requires the
/// contexts (including teacher distributions) to be unchanged: the frozen
/// part of a bank is write-once, only snapshots and runs may grow.
void save_bank(const std::string& path, const diag::ContextBank& bank,
               std::span<const diag::InterventionRun> runs = {});

struct LoadedBank {
  diag::ContextBank bank;
  std::vector<diag::InterventionRun> runs;
};

/// Loads a bank and verifies snapshot alignment. Doubles round-trip exactly.
LoadedBank load_bank(const std::string& path);

}  // namespace taopd::io
