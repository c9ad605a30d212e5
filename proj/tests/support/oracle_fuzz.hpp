#pragma once

#include <cstdint>
#include <string>

#include "branchfs/branch_store.hpp"

namespace branchfs::testing {

struct FuzzConfig {
  int ops = 1000;
  int max_depth = 4;
  int compare_every = 25;
};

struct FuzzResult {
  bool ok = true;
  std::string failure;
  int ops_run = 0;
  int forks = 0;
  int commits = 0;
  int aborts = 0;
  int max_depth_seen = 0;
  int view_checks = 0;
};

/// Drives `store` and the snapshot-copy reference model with the same seeded
/// random operation sequence (fork, group fork, create, mkdir, write,
/// truncate, chmod, delete, rename, commit, abort). Every operation's error
/// outcome must match; every `compare_every` operations and at the end, the
/// visible tree and state of every live branch must match.
FuzzResult run_oracle_fuzz(BranchStore& store, std::uint64_t seed, const FuzzConfig& cfg = {});

}  // namespace branchfs::testing
