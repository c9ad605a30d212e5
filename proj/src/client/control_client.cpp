#include "branchfs/client/control_client.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>

#include "branchfs/posix.hpp"
#include "branchfs/vfs/router.hpp"

namespace branchfs::client {

namespace fs = std::filesystem;

fs::path locate_control(const std::optional<fs::path>& mount) {
  if (const char* env = std::getenv("BRANCHFS_CTL"); env && *env) return env;
  if (mount) return *mount / vfs::kControlName;
  if (const char* env = std::getenv("BRANCHFS_MOUNT"); env && *env) {
    return fs::path(env) / vfs::kControlName;
  }
  std::error_code ec;
  for (fs::path dir = fs::current_path(ec); !ec && !dir.empty(); dir = dir.parent_path()) {
    fs::path candidate = dir / vfs::kControlName;
    if (fs::exists(candidate, ec)) return candidate;
    if (dir == dir.root_path()) break;
  }
  throw Unreachable("no branchfs control file found (set BRANCHFS_CTL or pass --mount)");
}

int ControlClient::send_line(std::string line) const {
  if (!line.ends_with('\n')) line += '\n';
  int fd = ::open(ctl_.c_str(), O_WRONLY | O_CLOEXEC);
  if (fd < 0) {
    throw Unreachable("cannot open " + ctl_.string() + ": " + std::strerror(errno));
  }
  posix::UniqueFd guard(fd);
  ssize_t n = ::write(fd, line.data(), line.size());
  if (n < 0) return errno;
  return static_cast<size_t>(n) == line.size() ? 0 : EIO;
}

std::string ControlClient::read_listing() const {
  int fd = ::open(ctl_.c_str(), O_RDONLY | O_CLOEXEC);
  if (fd < 0) {
    throw Unreachable("cannot open " + ctl_.string() + ": " + std::strerror(errno));
  }
  posix::UniqueFd guard(fd);
  std::string out;
  char buf[65536];
  for (;;) {
    ssize_t n = ::read(fd, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw Unreachable("cannot read " + ctl_.string() + ": " + std::strerror(errno));
    }
    if (n == 0) break;
    out.append(buf, static_cast<size_t>(n));
  }
  return out;
}

std::vector<control::ListingRow> ControlClient::list() const {
  return control::parse_listing(read_listing());
}

}  // namespace branchfs::client
