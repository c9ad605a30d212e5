#pragma once

#include <cerrno>
#include <stdexcept>
#include <string>
#include <string_view>

namespace branchfs {

/// Error categories raised by the branch store and everything layered on it.
/// Each category maps to exactly one errno value (see to_errno), which is the
/// value the FUSE adapter replies with and the control file write fails with.
enum class Errc {
  kNotFound,         // ENOENT
  kExists,           // EEXIST
  kInvalidArgument,  // EINVAL: bad names, bad paths, malformed control lines
  kStale,            // ESTALE: lost the group race / parent epoch moved
  kFrozen,           // EROFS: branch has live children
  kTerminal,         // EINVAL: branch already committed or aborted
  kUnsupported,      // EOPNOTSUPP: FIFOs, sockets, devices, hardlinks
  kNotDirectory,     // ENOTDIR
  kIsDirectory,      // EISDIR
  kNotEmpty,         // ENOTEMPTY
  kCrossBranch,      // EXDEV
  kIo,               // carries the underlying errno
};

std::string_view errc_name(Errc code);

class BranchError : public std::runtime_error {
 public:
  BranchError(Errc code, const std::string& what, int sys_errno = 0);

  Errc code() const noexcept { return code_; }
  /// errno of the failed system call for kIo; 0 otherwise.
  int sys_errno() const noexcept { return sys_errno_; }
  int to_errno() const noexcept;

 private:
  Errc code_;
  int sys_errno_;
};

int to_errno(Errc code, int sys_errno = 0) noexcept;

/// Throws BranchError(kIo) describing `what` with the current errno, unless
/// errno names a condition with its own category (ENOENT, EEXIST, ...).
[[noreturn]] void throw_errno(const std::string& what);
[[noreturn]] void throw_errno(const std::string& what, int err);

}  // namespace branchfs
