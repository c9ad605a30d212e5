#pragma once

#include <sys/stat.h>
#include <sys/statvfs.h>

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "branchfs/branch_store.hpp"
#include "branchfs/posix.hpp"
#include "branchfs/vfs/router.hpp"

namespace branchfs::vfs {

struct MountConfig {
  std::filesystem::path base_dir;
  std::filesystem::path mountpoint;
  std::filesystem::path store_dir;
  BranchId default_branch;
  bool allow_control = true;
  /// Read handles allowed to keep their descriptor open between requests.
  /// 0 means every read opens, reads, and closes the physical file.
  std::size_t fd_cache_capacity = 256;
  /// fsync is a no-op unless this is set.
  bool honor_fsync = false;
};

/// The filesystem as the kernel sees it, expressed over mount-relative paths
/// ("" is the mount root, "@b1/src/x" a file in branch b1). Every method
/// throws BranchError; BranchError::to_errno() is the reply code.
class BranchFs {
 public:
  using Fh = std::uint64_t;

  BranchFs(BranchStore& store, MountConfig cfg);
  ~BranchFs();

  BranchFs(const BranchFs&) = delete;
  BranchFs& operator=(const BranchFs&) = delete;

  const MountConfig& config() const noexcept { return cfg_; }
  BranchStore& store() noexcept { return store_; }
  RoutedPath route_path(std::string_view path) const;

  struct stat getattr(const std::string& path);
  /// fstat through an open handle; works after the path was unlinked.
  struct stat fgetattr(Fh fh);
  std::vector<DirEntry> readdir(const std::string& path);
  std::string readlink(const std::string& path);
  struct statvfs statfs();

  void mkdir(const std::string& path, mode_t mode);
  void mknod(const std::string& path, mode_t mode);
  void symlink(const std::string& target, const std::string& path);
  void unlink(const std::string& path);
  void rmdir(const std::string& path);
  /// `flags` takes RENAME_NOREPLACE; RENAME_EXCHANGE is rejected.
  void rename(const std::string& from, const std::string& to, unsigned flags = 0);

  struct SetAttr {
    std::optional<mode_t> mode;
    std::optional<uid_t> uid;
    std::optional<gid_t> gid;
    std::optional<std::uint64_t> size;
    std::optional<struct timespec> atime;
    std::optional<struct timespec> mtime;
  };
  struct stat setattr(const std::string& path, const SetAttr& attr, std::optional<Fh> fh);

  Fh open(const std::string& path, int flags);
  Fh create(const std::string& path, mode_t mode, int flags);
  std::size_t read(Fh fh, std::uint64_t offset, std::span<std::byte> out);
  std::size_t write(Fh fh, std::uint64_t offset, std::span<const std::byte> data);
  void fsync(Fh fh);
  void release(Fh fh);
  bool is_control(Fh fh) const;

  /// Branch ioctl on the object at `path`. Returns the ioctl result; `out`
  /// (sized by the caller from the command's size field) receives any
  /// output payload.
  int ioctl(const std::string& path, unsigned cmd, std::span<std::byte> out);

  /// Number of read handles currently holding a cached descriptor.
  std::size_t cached_fds() const;

 private:
  struct Handle;

  std::shared_ptr<Handle> handle(Fh fh) const;
  Fh add_handle(std::shared_ptr<Handle> h);
  void touch_cache(Fh fh, Handle& h);
  void rekey_handles(const std::string& from, const std::string& to);
  std::size_t read_control(Handle& h, std::uint64_t offset, std::span<std::byte> out);
  std::size_t write_control(std::span<const std::byte> data);
  std::string listing() const;
  std::vector<DirEntry> root_entries();
  struct stat branch_root_attr(const RoutedPath& r);
  RoutedPath route_data(const std::string& path) const;
  void reject_reserved(const RoutedPath& r) const;

  BranchStore& store_;
  MountConfig cfg_;

  mutable std::mutex handles_mu_;
  std::map<Fh, std::shared_ptr<Handle>> handles_;
  Fh next_fh_ = 1;

  // Read descriptors live in the cache rather than in the handle so that
  // eviction never needs another handle's lock; a reader holding the
  // shared_ptr keeps its descriptor alive even if it is evicted mid-read.
  struct CachedFd {
    std::shared_ptr<posix::UniqueFd> fd;
    std::filesystem::path physical;
  };
  mutable std::mutex cache_mu_;
  std::map<Fh, CachedFd> cache_;
  // Front = most recently used.
  std::list<Fh> lru_;
  std::map<Fh, std::list<Fh>::iterator> lru_pos_;

  std::atomic<std::uint64_t> ioc_serial_{0};
};

}  // namespace branchfs::vfs
