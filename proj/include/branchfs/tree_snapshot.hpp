#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "branchfs/types.hpp"

namespace branchfs {

/// Content-level picture of a directory tree: every entry below the root,
/// keyed by relative path, with kind, permission bits, and content (file
/// bytes or symlink target). Timestamps and ownership are ignored.
struct TreeEntry {
  FileKind kind = FileKind::kRegular;
  unsigned mode = 0;  // permission bits only
  std::string content;

  bool operator==(const TreeEntry&) const = default;
};

using TreeSnapshot = std::map<std::string, TreeEntry>;

TreeSnapshot snapshot_directory(const std::filesystem::path& root);

/// Hex SHA-256 over a canonical serialization of the snapshot.
std::string tree_hash(const TreeSnapshot& snap);
std::string hash_directory(const std::filesystem::path& root);

/// Human-readable list of differences, empty when equal.
std::string diff_snapshots(const TreeSnapshot& expected, const TreeSnapshot& actual,
                           std::size_t max_lines = 20);

}  // namespace branchfs
