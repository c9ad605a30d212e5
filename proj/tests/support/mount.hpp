#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "branchfs/branch_store.hpp"
#include "branchfs/vfs/branch_fs.hpp"
#include "branchfs/vfs/fuse_server.hpp"

namespace branchfs::testing {

/// A store over `root`/base mounted in-process at `root`/mnt. Mounting needs
/// /dev/fuse and CAP_SYS_ADMIN; when either is missing, ok() is false and
/// why() says what failed.
class ScopedMount {
 public:
  explicit ScopedMount(const std::filesystem::path& root, std::size_t fd_cache = 256);
  ~ScopedMount();

  bool ok() const { return server_ != nullptr; }
  const std::string& why() const { return why_; }
  std::filesystem::path base() const { return root_ / "base"; }
  std::filesystem::path mnt() const { return root_ / "mnt"; }
  std::filesystem::path ctl() const { return mnt() / ".branchfs_ctl"; }
  BranchStore& store() { return *store_; }

  /// Writes one raw control line; returns 0 or errno.
  int control(const std::string& line) const;

 private:
  std::filesystem::path root_;
  std::unique_ptr<BranchStore> store_;
  std::unique_ptr<vfs::BranchFs> fs_;
  std::unique_ptr<vfs::FuseServer> server_;
  std::string why_;
};

}  // namespace branchfs::testing
