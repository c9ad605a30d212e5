#pragma once

#include <sys/stat.h>

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "branchfs/rel_path.hpp"
#include "branchfs/types.hpp"

namespace branchfs {

/// The branching engine. Owns the branch tree, every branch's delta layer,
/// path resolution through the branch chain, copy-up, commit and abort.
///
/// On-disk layout under the store root:
///
///     branches/root/meta                   epoch of the root branch
///     branches/<name>/meta                 JSON metadata document
///     branches/<name>/data/...             copied-up and created entries
///     branches/<name>/tombstones/...       deletion sentinels
///     branches/<name>/tmp/                 staging area for copy-up
///     branches/<name>/commit-in-progress   present only during a commit
///
/// The root branch has no delta layer of its own: its storage is the base
/// directory, so mutations on root and commits of root's children land there.
///
/// A tombstone for path p is either an empty regular file at tombstones/p or,
/// when p was deleted and later recreated as a directory whose children were
/// deleted again, a directory at tombstones/p with the sticky bit set. Plain
/// directories in the tombstone tree are only containers.
///
/// Thread-safe. Metadata transitions (create, commit, abort) take the store
/// lock exclusively; data operations share it, and mutations additionally
/// serialize per branch.
class BranchStore {
 public:
  using TimingHook =
      std::function<void(std::string_view op, std::chrono::nanoseconds elapsed)>;

  /// Opens (or initializes) a store. Replays any commit interrupted by a
  /// crash before returning.
  BranchStore(std::filesystem::path base_dir, std::filesystem::path store_dir);
  ~BranchStore();

  BranchStore(const BranchStore&) = delete;
  BranchStore& operator=(const BranchStore&) = delete;

  const std::filesystem::path& base_dir() const noexcept { return base_dir_; }
  const std::filesystem::path& store_dir() const noexcept { return store_dir_; }

  // Branch lifecycle.
  BranchId create_branch(const BranchId& parent, std::string_view name);
  std::vector<BranchId> create_branch_group(const BranchId& parent,
                                            std::span<const std::string> names);
  CommitReport commit_branch(const BranchId& branch);
  void abort_branch(const BranchId& branch);

  BranchMeta branch_status(const BranchId& branch) const;
  /// Every known branch in pre-order (parents before children, siblings by
  /// name), including retained records of committed/aborted branches.
  std::vector<BranchMeta> list_branches() const;
  std::optional<ExclusiveGroup> group(GroupId id) const;
  bool is_live(const BranchId& branch) const;

  // Read side.
  Resolution resolve(const BranchId& branch, const RelPath& path) const;
  std::optional<struct stat> stat(const BranchId& branch, const RelPath& path) const;
  std::vector<DirEntry> list_dir(const BranchId& branch, const RelPath& dir) const;
  std::string read_file(const BranchId& branch, const RelPath& path,
                        std::uint64_t offset, std::size_t size) const;
  std::string read_link(const BranchId& branch, const RelPath& path) const;

  // Mutations; all land in the branch's own delta layer.
  enum class CopyUpContent { kFull, kEmpty };
  std::filesystem::path copy_up(const BranchId& branch, const RelPath& path,
                                CopyUpContent content = CopyUpContent::kFull);
  std::size_t write_file(const BranchId& branch, const RelPath& path,
                         std::uint64_t offset, std::span<const std::byte> bytes);
  std::filesystem::path create_file(const BranchId& branch, const RelPath& path,
                                    mode_t mode);
  void mkdir(const BranchId& branch, const RelPath& path, mode_t mode);
  void symlink(const BranchId& branch, const std::string& target, const RelPath& path);
  void truncate(const BranchId& branch, const RelPath& path, std::uint64_t length);
  void set_mode(const BranchId& branch, const RelPath& path, mode_t mode);
  void set_times(const BranchId& branch, const RelPath& path,
                 std::optional<struct timespec> atime,
                 std::optional<struct timespec> mtime);
  /// Deletes a file or (recursively) a directory from the branch view.
  void remove(const BranchId& branch, const RelPath& path);
  void rename(const BranchId& branch, const RelPath& src, const RelPath& dst);

  /// Holds the store lock shared after checking that `branch` may perform
  /// I/O (and, for writes, is not frozen). Used by callers that do I/O on
  /// descriptors they opened on resolved physical paths, so that a commit
  /// or abort cannot interleave with the I/O.
  class IoGuard {
   public:
    explicit IoGuard(std::shared_lock<std::shared_mutex> lock) : lock_(std::move(lock)) {}

   private:
    std::shared_lock<std::shared_mutex> lock_;
  };
  enum class Access { kRead, kWrite };
  IoGuard guard_io(const BranchId& branch, Access access) const;

  /// Bumped on every namespace change (create/delete/rename/copy-up/commit/
  /// abort). Callers caching resolutions compare against it.
  std::uint64_t generation() const noexcept { return generation_.load(); }

  void set_timing_hook(TimingHook hook);

 private:
  struct Node;
  struct Layer {
    std::filesystem::path data;
    std::filesystem::path tombs;  // empty for root
    const Node* node;
    bool is_root() const { return tombs.empty(); }
  };
  enum class TombState { kNone, kSelf, kPrefix };

  Node& live_node(const BranchId& id);
  const Node& live_node(const BranchId& id) const;
  const Node* find_live(const BranchId& id) const;
  BranchState effective_state(const Node& n) const;
  bool is_stale(const Node& n) const;
  void check_readable(const Node& n) const;
  void check_mutable(const Node& n) const;
  std::vector<Layer> chain(const Node& n) const;
  Layer layer_of(const Node& n) const;
  BranchMeta snapshot(const Node& n) const;

  static TombState tomb_state(const Layer& layer, const RelPath& path);
  Resolution resolve_in(std::span<const Layer> layers, const RelPath& path) const;
  std::vector<DirEntry> list_in(std::span<const Layer> layers, const RelPath& dir) const;
  bool visible_below(std::span<const Layer> layers, const RelPath& path) const;

  std::filesystem::path copy_up_locked(const Node& n, std::span<const Layer> layers,
                                       const RelPath& path, CopyUpContent content);
  void materialize_dirs(const Node& n, std::span<const Layer> layers, const RelPath& dir);
  void deep_copy_up(const Node& n, std::span<const Layer> layers, const RelPath& path);
  void remove_locked(std::span<const Layer> layers, const RelPath& path);
  static void place_tombstone(const Layer& layer, const RelPath& path);
  static void ensure_tomb_container(const Layer& layer, const RelPath& dir);

  CommitReport apply_delta(const Node& child, Node& parent);
  void finish_commit(Node& child, Node& parent);
  void abort_locked(Node& n);
  void persist(const Node& n) const;
  void load();
  void record(std::string_view op, std::chrono::steady_clock::time_point start) const;

  std::filesystem::path branch_dir(const BranchId& id) const;

  std::filesystem::path base_dir_;
  std::filesystem::path store_dir_;
  mutable std::shared_mutex mu_;
  std::map<BranchId, std::unique_ptr<Node>> live_;
  std::map<BranchId, BranchMeta> retired_;
  std::map<GroupId, ExclusiveGroup> groups_;
  GroupId next_group_ = 1;
  std::atomic<std::uint64_t> generation_{0};
  TimingHook timing_hook_;
};

}  // namespace branchfs
