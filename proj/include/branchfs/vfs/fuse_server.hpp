#pragma once

#include <sys/types.h>

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "branchfs/posix.hpp"
#include "branchfs/vfs/branch_fs.hpp"

struct fuse_in_header;

namespace branchfs::vfs {

/// Serves a BranchFs over the Linux FUSE kernel protocol by talking to
/// /dev/fuse directly. Needs CAP_SYS_ADMIN for mount(2).
class FuseServer {
 public:
  FuseServer(BranchFs& fs, std::filesystem::path mountpoint, unsigned threads = 8);
  ~FuseServer();

  FuseServer(const FuseServer&) = delete;
  FuseServer& operator=(const FuseServer&) = delete;

  /// Mounts and starts the worker threads; returns once INIT completed.
  void start();
  /// Blocks until the filesystem is unmounted from outside.
  void wait();
  /// Unmounts (lazily if busy) and joins the workers. Idempotent.
  void stop();

  bool running() const noexcept { return running_.load(); }
  const std::filesystem::path& mountpoint() const noexcept { return mountpoint_; }

 private:
  struct Node {
    std::string path;
    std::uint64_t nlookup = 0;
    mode_t type = 0;
    bool detached = false;
    std::set<BranchFs::Fh> open;
  };
  struct DirHandle {
    std::vector<DirEntry> entries;
    std::string path;
  };
  class Request;

  void worker();
  void dispatch(Request& req);
  void reply_err(const fuse_in_header& in, int err);
  void reply(const fuse_in_header& in, const void* data, size_t size);
  void reply2(const fuse_in_header& in, const void* a, size_t asz, const void* b, size_t bsz);

  std::string path_of(std::uint64_t nodeid);
  std::uint64_t remember(const std::string& path, mode_t type);
  void forget(std::uint64_t nodeid, std::uint64_t n);
  void detach(const std::string& path);
  void rekey(const std::string& from, const std::string& to);
  void note_open(std::uint64_t nodeid, BranchFs::Fh fh);
  void note_release(std::uint64_t nodeid, BranchFs::Fh fh);
  std::optional<BranchFs::Fh> any_open(std::uint64_t nodeid);

  void do_init(Request& req);
  void do_lookup(Request& req);
  void do_getattr(Request& req);
  void do_setattr(Request& req);
  void do_readlink(Request& req);
  void do_symlink(Request& req);
  void do_mknod(Request& req);
  void do_mkdir(Request& req);
  void do_unlink(Request& req, bool dir);
  void do_rename(Request& req, bool v2);
  void do_open(Request& req);
  void do_create(Request& req);
  void do_read(Request& req);
  void do_write(Request& req);
  void do_release(Request& req);
  void do_opendir(Request& req);
  void do_readdir(Request& req);
  void do_releasedir(Request& req);
  void do_statfs(Request& req);
  void do_ioctl(Request& req);
  void reply_entry(Request& req, const std::string& path, const struct stat& st);

  BranchFs& fs_;
  std::filesystem::path mountpoint_;
  unsigned thread_count_;
  posix::UniqueFd dev_;
  std::vector<std::thread> workers_;
  std::atomic<bool> running_{false};
  std::atomic<bool> mounted_{false};
  dev_t mount_dev_ = 0;

  std::mutex init_mu_;
  bool init_done_ = false;
  std::condition_variable init_cv_;

  std::mutex nodes_mu_;
  std::map<std::uint64_t, Node> nodes_;
  std::map<std::string, std::uint64_t> by_path_;
  std::uint64_t next_nodeid_ = 2;

  std::mutex dirs_mu_;
  std::map<std::uint64_t, DirHandle> dirs_;
  std::uint64_t next_dir_ = 1;

  std::mutex exit_mu_;
  std::condition_variable exit_cv_;
  unsigned exited_ = 0;
};

/// st_ino reported for a mount path; stable across lookups and equal to the
/// d_ino that readdir reports for the same entry.
std::uint64_t inode_number(std::string_view mount_path);

}  // namespace branchfs::vfs
