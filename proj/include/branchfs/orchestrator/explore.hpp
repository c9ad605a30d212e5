#pragma once

#include <sys/types.h>

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace branchfs::orchestrator {

/// The workspace is not a branchfs mount, or the group could not be created.
class WorkspaceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExploreSpec {
  std::filesystem::path workspace;
  int n_branches = 1;
  /// argv; run once per branch.
  std::vector<std::string> command;
  /// Parent branch token for the control protocol ("." = mount default).
  std::string parent = ".";
  /// Branch names are <prefix>-1 .. <prefix>-N; generated when empty.
  std::string name_prefix;
  /// Workers commit themselves (child_commit) instead of exiting 0 and
  /// letting the orchestrator commit for them.
  bool self_commit = false;
  std::chrono::milliseconds grace{2000};
  /// Close every inherited descriptor above stderr before exec.
  bool close_fds = false;
  /// Bind each worker's @branch view over the workspace path in a private
  /// mount namespace (needs CAP_SYS_ADMIN or user namespaces).
  bool bind_namespace = false;
};

struct ChildResult {
  int index = 0;  // 1-based, equals BRANCH_INDEX
  std::string branch;
  pid_t pid = -1;
  bool spawned = false;
  /// Raw wait status; meaningful when `exited`.
  int wait_status = 0;
  bool exited = false;
  /// Terminated by the orchestrator after another branch won.
  bool terminated = false;
  std::chrono::milliseconds duration{0};
};

struct CommitSummary {
  std::string branch;
  std::string parent;
  std::uint64_t parent_epoch = 0;  // after the commit
};

struct ExploreOutcome {
  std::optional<int> winner;  // 1-based index
  std::vector<ChildResult> children;
  std::optional<CommitSummary> commit;
  /// Processes that left their worker's process group (setsid and
  /// friends) and were found and killed afterwards.
  std::vector<pid_t> escaped;
};

/// Runs the fork / explore / commit cycle: creates an exclusive group of
/// N branches, runs one worker per branch in <workspace>/@<name>, commits
/// the first worker to succeed, then terminates and aborts the rest.
ExploreOutcome explore(const ExploreSpec& spec);

/// Worker-side helpers. Both read BRANCH_NAME and locate the control file
/// like the CLI does. Return 0 or a negative errno; -ESTALE means another
/// branch already won. Throw std::runtime_error when the environment does
/// not describe a branch.
int child_commit();
int child_abort();

}  // namespace branchfs::orchestrator
