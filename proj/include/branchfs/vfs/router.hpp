#pragma once

#include <string_view>

#include "branchfs/rel_path.hpp"
#include "branchfs/types.hpp"

namespace branchfs::vfs {

inline constexpr std::string_view kControlName = ".branchfs_ctl";

/// Where a mount-relative path lands.
struct RoutedPath {
  enum class Kind {
    kMountRoot,  // the mount directory itself
    kControl,    // /.branchfs_ctl
    kBranch,     // a path inside some branch view (including /@name itself)
  };
  Kind kind = Kind::kBranch;
  BranchId branch;
  RelPath rel;
  /// True for "/@name": the branch root reached through its virtual entry.
  bool via_at = false;

  bool operator==(const RoutedPath&) const = default;
};

/// Routes `path` (leading slash optional). "@name" as the first component
/// selects branch `name`; `.branchfs_ctl` selects the control file when
/// `control_enabled`; anything else belongs to `default_branch`. An '@'
/// name that is not a valid branch name raises kNotFound; whether the
/// branch exists is checked later by the store.
RoutedPath route(std::string_view path, const BranchId& default_branch, bool control_enabled);

/// True for names that the mount root reserves: "@..." and the control file.
bool reserved_at_root(std::string_view name, bool control_enabled);

}  // namespace branchfs::vfs
