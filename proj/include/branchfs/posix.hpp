#pragma once

#include <sys/stat.h>
#include <unistd.h>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>

namespace branchfs::posix {

/// Owning file descriptor.
class UniqueFd {
 public:
  UniqueFd() = default;
  explicit UniqueFd(int fd) : fd_(fd) {}
  UniqueFd(UniqueFd&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  UniqueFd& operator=(UniqueFd&& o) noexcept {
    if (this != &o) reset(std::exchange(o.fd_, -1));
    return *this;
  }
  UniqueFd(const UniqueFd&) = delete;
  UniqueFd& operator=(const UniqueFd&) = delete;
  ~UniqueFd() { reset(); }

  int get() const noexcept { return fd_; }
  bool valid() const noexcept { return fd_ >= 0; }
  explicit operator bool() const noexcept { return valid(); }
  int release() noexcept { return std::exchange(fd_, -1); }
  void reset(int fd = -1) noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = fd;
  }

 private:
  int fd_ = -1;
};

/// Opens or throws (via throw_errno).
UniqueFd open_or_throw(const std::filesystem::path& p, int flags, mode_t mode = 0);

std::optional<struct stat> lstat_opt(const std::filesystem::path& p);

void write_all(int fd, std::span<const std::byte> data, std::uint64_t offset);
void write_all(int fd, std::string_view data);
size_t pread_full(int fd, std::span<std::byte> buf, std::uint64_t offset);
std::string read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::string_view data, mode_t mode = 0644);

/// Copies every byte of `src_fd` into `dst_fd` (both positioned at 0) and
/// returns the number of bytes copied.
std::uint64_t copy_contents(int src_fd, int dst_fd);

/// Copies mode bits and atime/mtime from `st` onto `fd` (best effort for
/// times).
void copy_attrs(int fd, const struct stat& st);

void fsync_path(const std::filesystem::path& p);

/// Removes `p` recursively; missing paths are ignored. Never follows symlinks.
void remove_tree(const std::filesystem::path& p);

std::string errno_text(int err);

}  // namespace branchfs::posix
