#pragma once

#include <compare>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace branchfs {

/// A normalized workspace-relative path: components separated by single '/',
/// no leading or trailing slash, no "." or ".." components. The workspace
/// root is the empty path.
class RelPath {
 public:
  RelPath() = default;

  /// Normalizes `raw`. Leading, trailing, and repeated slashes are dropped;
  /// "." and ".." components are rejected with kInvalidArgument so no entry
  /// can escape a layer root.
  static RelPath parse(std::string_view raw);

  /// Validates a single path component.
  static bool valid_component(std::string_view name);

  const std::string& str() const noexcept { return path_; }
  bool is_root() const noexcept { return path_.empty(); }

  std::string_view name() const;
  RelPath parent() const;
  RelPath join(std::string_view component) const;
  std::vector<std::string_view> components() const;

  /// True when this path is a strict ancestor of `other`.
  bool is_ancestor_of(const RelPath& other) const;
  bool is_same_or_ancestor_of(const RelPath& other) const;

  /// Rebases `other` (which must be under this path) onto `to`.
  RelPath rebase(const RelPath& other, const RelPath& to) const;

  /// `root / path`, or `root` itself for the workspace root.
  std::filesystem::path under(const std::filesystem::path& root) const;

  auto operator<=>(const RelPath&) const = default;

 private:
  explicit RelPath(std::string normalized) : path_(std::move(normalized)) {}
  std::string path_;
};

}  // namespace branchfs

template <>
struct std::hash<branchfs::RelPath> {
  size_t operator()(const branchfs::RelPath& p) const noexcept {
    return std::hash<std::string>{}(p.str());
  }
};
