#include "support/mount.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>

namespace branchfs::testing {

namespace fs = std::filesystem;

ScopedMount::ScopedMount(const fs::path& root, std::size_t fd_cache) : root_(root) {
  fs::create_directories(base());
  fs::create_directories(mnt());
  store_ = std::make_unique<BranchStore>(base(), root_ / "store");
  vfs::MountConfig cfg;
  cfg.base_dir = base();
  cfg.mountpoint = mnt();
  cfg.store_dir = root_ / "store";
  cfg.fd_cache_capacity = fd_cache;
  fs_ = std::make_unique<vfs::BranchFs>(*store_, cfg);
  try {
    server_ = std::make_unique<vfs::FuseServer>(*fs_, mnt());
    server_->start();
  } catch (const std::exception& e) {
    why_ = e.what();
    server_.reset();
  }
}

ScopedMount::~ScopedMount() {
  if (server_) server_->stop();
}

int ScopedMount::control(const std::string& line) const {
  int fd = ::open(ctl().c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0) return errno;
  ssize_t n = ::write(fd, line.data(), line.size());
  int err = n < 0 ? errno : 0;
  ::close(fd);
  return err;
}

}  // namespace branchfs::testing
