// Copyright 2026 The dyntree Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace dyntree::cli {

enum ExitCode : int {
  kSuccess = 0,
  kUsageError = 1,
  kDataError = 2,
  kCertificationFailed = 3,
};

/// Runs one invocation. `args` excludes the program name, e.g.
/// {"generate", "--target", "m.json"}. Token streams and human-readable
/// summaries go to `out`, diagnostics to `err`.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace dyntree::cli
