#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace branchfs {

/// Name of a branch, unique among live branches of one store. The root
/// branch (whose storage is the base directory) is the reserved name "root".
class BranchId {
 public:
  static constexpr std::string_view kRootName = "root";

  BranchId() : name_(kRootName) {}

  /// Validates a user-supplied branch name (kInvalidArgument on failure).
  static BranchId make(std::string_view name);
  static BranchId root() { return BranchId(); }
  /// Accepts "root" as well as ordinary names.
  static BranchId parse(std::string_view name);

  static bool valid_name(std::string_view name);

  const std::string& str() const noexcept { return name_; }
  bool is_root() const noexcept { return name_ == kRootName; }

  auto operator<=>(const BranchId&) const = default;

 private:
  explicit BranchId(std::string name) : name_(std::move(name)) {}
  std::string name_;
};

enum class BranchState { kActive, kFrozen, kStale, kCommitted, kAborted };

std::string_view state_name(BranchState s);
std::optional<BranchState> parse_state(std::string_view s);

inline bool is_terminal(BranchState s) {
  return s == BranchState::kCommitted || s == BranchState::kAborted;
}

using GroupId = std::uint64_t;

struct BranchMeta {
  BranchId id;
  std::optional<BranchId> parent;  // empty for root
  BranchState state = BranchState::kActive;
  std::uint64_t epoch = 0;
  std::uint64_t parent_epoch_at_create = 0;
  std::optional<GroupId> group;
  std::uint32_t children = 0;  // live (non-terminal) children

  bool operator==(const BranchMeta&) const = default;
};

struct ExclusiveGroup {
  GroupId id = 0;
  std::vector<BranchId> members;
  std::optional<BranchId> winner;
};

struct CommitReport {
  BranchId branch;
  std::uint64_t files_applied = 0;
  std::uint64_t bytes_copied = 0;
  std::uint64_t tombstones_applied = 0;
  std::uint64_t siblings_invalidated = 0;
};

enum class FileKind { kRegular, kDirectory, kSymlink, kSpecial };

FileKind kind_of_mode(unsigned mode);

struct Resolution {
  enum class Outcome { kFound, kTombstoned, kAbsent };

  Outcome outcome = Outcome::kAbsent;
  /// Layer that decided the outcome; root means the base directory. Unset
  /// for kAbsent.
  std::optional<BranchId> layer;
  /// Physical location for kFound.
  std::filesystem::path physical;
  FileKind kind = FileKind::kRegular;

  bool found() const noexcept { return outcome == Outcome::kFound; }
  bool is_dir() const noexcept { return found() && kind == FileKind::kDirectory; }
};

struct DirEntry {
  std::string name;
  FileKind kind;

  bool operator==(const DirEntry&) const = default;
};

}  // namespace branchfs

template <>
struct std::hash<branchfs::BranchId> {
  size_t operator()(const branchfs::BranchId& id) const noexcept {
    return std::hash<std::string>{}(id.str());
  }
};
