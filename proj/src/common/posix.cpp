#include "branchfs/posix.hpp"

#include <fcntl.h>
#include <sys/sendfile.h>

#include <cerrno>
#include <cstring>
#include <system_error>

#include "branchfs/error.hpp"

namespace branchfs::posix {

namespace fs = std::filesystem;

UniqueFd open_or_throw(const fs::path& p, int flags, mode_t mode) {
  int fd = ::open(p.c_str(), flags | O_CLOEXEC, mode);
  if (fd < 0) throw_errno("open " + p.string());
  return UniqueFd(fd);
}

std::optional<struct stat> lstat_opt(const fs::path& p) {
  struct stat st {};
  if (::lstat(p.c_str(), &st) == 0) return st;
  if (errno == ENOENT || errno == ENOTDIR) return std::nullopt;
  throw_errno("lstat " + p.string());
}

void write_all(int fd, std::span<const std::byte> data, std::uint64_t offset) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::pwrite(fd, data.data() + done, data.size() - done,
                         static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("pwrite");
    }
    done += static_cast<size_t>(n);
  }
}

void write_all(int fd, std::string_view data) {
  size_t done = 0;
  while (done < data.size()) {
    ssize_t n = ::write(fd, data.data() + done, data.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("write");
    }
    done += static_cast<size_t>(n);
  }
}

size_t pread_full(int fd, std::span<std::byte> buf, std::uint64_t offset) {
  size_t done = 0;
  while (done < buf.size()) {
    ssize_t n = ::pread(fd, buf.data() + done, buf.size() - done,
                        static_cast<off_t>(offset + done));
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("pread");
    }
    if (n == 0) break;
    done += static_cast<size_t>(n);
  }
  return done;
}

std::string read_file(const fs::path& p) {
  UniqueFd fd = open_or_throw(p, O_RDONLY);
  std::string out;
  char buf[65536];
  for (;;) {
    ssize_t n = ::read(fd.get(), buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("read " + p.string());
    }
    if (n == 0) break;
    out.append(buf, static_cast<size_t>(n));
  }
  return out;
}

void write_file(const fs::path& p, std::string_view data, mode_t mode) {
  UniqueFd fd = open_or_throw(p, O_WRONLY | O_CREAT | O_TRUNC, mode);
  write_all(fd.get(), data);
}

std::uint64_t copy_contents(int src_fd, int dst_fd) {
  std::uint64_t total = 0;
  for (;;) {
    ssize_t n = ::copy_file_range(src_fd, nullptr, dst_fd, nullptr, 1 << 30, 0);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EXDEV || errno == ENOSYS || errno == EINVAL ||
          errno == EOPNOTSUPP) {
        break;  // fall back to sendfile below
      }
      throw_errno("copy_file_range");
    }
    if (n == 0) return total;
    total += static_cast<std::uint64_t>(n);
  }
  for (;;) {
    ssize_t n = ::sendfile(dst_fd, src_fd, nullptr, 1 << 30);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw_errno("sendfile");
    }
    if (n == 0) return total;
    total += static_cast<std::uint64_t>(n);
  }
}

void copy_attrs(int fd, const struct stat& st) {
  if (::fchmod(fd, st.st_mode & 07777) != 0) throw_errno("fchmod");
  struct timespec times[2] = {st.st_atim, st.st_mtim};
  (void)::futimens(fd, times);
}

void fsync_path(const fs::path& p) {
  UniqueFd fd = open_or_throw(p, O_RDONLY);
  if (::fsync(fd.get()) != 0) throw_errno("fsync " + p.string());
}

void remove_tree(const fs::path& p) {
  std::error_code ec;
  fs::remove_all(p, ec);
  if (ec && ec != std::errc::no_such_file_or_directory && ec != std::errc::not_a_directory) {
    throw_errno("remove " + p.string(), ec.value());
  }
}

std::string errno_text(int err) { return std::strerror(err); }

}  // namespace branchfs::posix
