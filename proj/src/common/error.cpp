#include "branchfs/error.hpp"

#include <cstring>

namespace branchfs {

std::string_view errc_name(Errc code) {
  switch (code) {
    case Errc::kNotFound: return "not-found";
    case Errc::kExists: return "exists";
    case Errc::kInvalidArgument: return "invalid-argument";
    case Errc::kStale: return "stale";
    case Errc::kFrozen: return "frozen";
    case Errc::kTerminal: return "terminal";
    case Errc::kUnsupported: return "unsupported";
    case Errc::kNotDirectory: return "not-a-directory";
    case Errc::kIsDirectory: return "is-a-directory";
    case Errc::kNotEmpty: return "not-empty";
    case Errc::kCrossBranch: return "cross-branch";
    case Errc::kIo: return "io";
  }
  return "unknown";
}

BranchError::BranchError(Errc code, const std::string& what, int sys_errno)
    : std::runtime_error(what), code_(code), sys_errno_(sys_errno) {}

int BranchError::to_errno() const noexcept {
  return branchfs::to_errno(code_, sys_errno_);
}

int to_errno(Errc code, int sys_errno) noexcept {
  switch (code) {
    case Errc::kNotFound: return ENOENT;
    case Errc::kExists: return EEXIST;
    case Errc::kInvalidArgument: return EINVAL;
    case Errc::kStale: return ESTALE;
    case Errc::kFrozen: return EROFS;
    case Errc::kTerminal: return EINVAL;
    case Errc::kUnsupported: return EOPNOTSUPP;
    case Errc::kNotDirectory: return ENOTDIR;
    case Errc::kIsDirectory: return EISDIR;
    case Errc::kNotEmpty: return ENOTEMPTY;
    case Errc::kCrossBranch: return EXDEV;
    case Errc::kIo: return sys_errno != 0 ? sys_errno : EIO;
  }
  return EIO;
}

void throw_errno(const std::string& what) { throw_errno(what, errno); }

void throw_errno(const std::string& what, int err) {
  std::string msg = what + ": " + std::strerror(err);
  switch (err) {
    case ENOENT: throw BranchError(Errc::kNotFound, msg);
    case EEXIST: throw BranchError(Errc::kExists, msg);
    case ENOTDIR: throw BranchError(Errc::kNotDirectory, msg);
    case EISDIR: throw BranchError(Errc::kIsDirectory, msg);
    case ENOTEMPTY: throw BranchError(Errc::kNotEmpty, msg);
    default: throw BranchError(Errc::kIo, msg, err);
  }
}

}  // namespace branchfs
