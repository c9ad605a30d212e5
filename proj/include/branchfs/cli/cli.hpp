#pragma once

namespace branchfs::cli {

/// Exit codes of the branchfs tool. Stable; scripts depend on them.
enum ExitCode : int {
  kOk = 0,
  kFailure = 1,      // anything not listed below
  kUsage = 2,
  kUnreachable = 3,  // no control file, or it cannot be opened
  kNotFound = 4,     // ENOENT
  kExists = 5,       // EEXIST
  kStale = 6,        // ESTALE: a sibling already committed
  kFrozen = 7,       // EROFS: the branch has live children
  kInvalid = 8,      // EINVAL: bad name, or the branch is committed/aborted
};

int exit_code_for_errno(int err);

int cli_main(int argc, char** argv);

}  // namespace branchfs::cli
