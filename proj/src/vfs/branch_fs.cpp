#include "branchfs/vfs/branch_fs.hpp"

#include <fcntl.h>
#include <linux/fs.h>
#include <sys/ioctl.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>

#include "branchfs/control.hpp"
#include "branchfs/error.hpp"
#include "branchfs/ioctl.h"
#include "branchfs/posix.hpp"

namespace branchfs::vfs {

namespace fs = std::filesystem;
using posix::UniqueFd;

namespace {

[[noreturn]] void fail(int err, const std::string& what) {
  throw BranchError(Errc::kIo, what, err);
}

std::string normalize(std::string_view path) { return RelPath::parse(path).str(); }

}  // namespace

struct BranchFs::Handle {
  enum class Kind { kFile, kControl };
  Kind kind = Kind::kFile;
  std::mutex mu;
  std::string path;  // normalized mount path; follows renames
  RoutedPath routed;
  bool writable = false;
  UniqueFd fd;  // writable handles only
  fs::path physical;
  std::uint64_t generation = 0;
  std::string control_snapshot;
};

BranchFs::BranchFs(BranchStore& store, MountConfig cfg) : store_(store), cfg_(std::move(cfg)) {
  store_.branch_status(cfg_.default_branch);  // throws kNotFound for unknown defaults
}

BranchFs::~BranchFs() = default;

RoutedPath BranchFs::route_path(std::string_view path) const {
  return route(path, cfg_.default_branch, cfg_.allow_control);
}

RoutedPath BranchFs::route_data(const std::string& path) const {
  RoutedPath r = route_path(path);
  if (r.kind == RoutedPath::Kind::kMountRoot) fail(EBUSY, "mount root");
  if (r.kind == RoutedPath::Kind::kControl) fail(EPERM, "control file");
  if (r.via_at) fail(EPERM, "branch roots are managed through the control file");
  return r;
}

void BranchFs::reject_reserved(const RoutedPath& r) const {
  if (r.kind == RoutedPath::Kind::kMountRoot || r.kind == RoutedPath::Kind::kControl) {
    fail(EEXIST, "reserved name");
  }
  if (r.via_at) {
    if (store_.is_live(r.branch)) fail(EEXIST, "branch entry exists");
    fail(EPERM, "names starting with '@' are reserved at the mount root");
  }
}

// --- metadata ------------------------------------------------------------

struct stat BranchFs::branch_root_attr(const RoutedPath& r) {
  auto st = store_.stat(r.branch, RelPath());
  if (!st) throw BranchError(Errc::kNotFound, "branch root missing");
  return *st;
}

struct stat BranchFs::getattr(const std::string& path) {
  RoutedPath r = route_path(path);
  switch (r.kind) {
    case RoutedPath::Kind::kMountRoot: {
      auto st = posix::lstat_opt(cfg_.base_dir);
      if (!st) throw_errno("stat " + cfg_.base_dir.string());
      return *st;
    }
    case RoutedPath::Kind::kControl: {
      struct stat st {};
      auto base = posix::lstat_opt(cfg_.base_dir);
      if (base) st = *base;
      st.st_mode = S_IFREG | 0666;
      st.st_nlink = 1;
      st.st_size = 0;
      st.st_blocks = 0;
      st.st_uid = ::getuid();
      st.st_gid = ::getgid();
      return st;
    }
    case RoutedPath::Kind::kBranch: break;
  }
  if (r.via_at && !store_.is_live(r.branch)) {
    throw BranchError(Errc::kNotFound, "no branch '" + r.branch.str() + "'");
  }
  if (r.rel.is_root()) return branch_root_attr(r);
  auto st = store_.stat(r.branch, r.rel);
  if (!st) throw BranchError(Errc::kNotFound, "no such file '" + path + "'");
  return *st;
}

struct stat BranchFs::fgetattr(Fh fh) {
  auto h = handle(fh);
  std::lock_guard lk(h->mu);
  if (h->kind == Handle::Kind::kControl) return getattr(std::string(kControlName));
  struct stat st {};
  if (h->fd) {
    if (::fstat(h->fd.get(), &st) != 0) throw_errno("fstat");
    return st;
  }
  try {
    return getattr(h->path);
  } catch (const BranchError& e) {
    if (e.code() != Errc::kNotFound) throw;
  }
  if (::lstat(h->physical.c_str(), &st) != 0) throw_errno("stat " + h->physical.string());
  return st;
}

std::vector<DirEntry> BranchFs::root_entries() {
  std::vector<DirEntry> out;
  for (auto& e : store_.list_dir(cfg_.default_branch, RelPath())) {
    if (!reserved_at_root(e.name, cfg_.allow_control)) out.push_back(std::move(e));
  }
  for (const auto& b : store_.list_branches()) {
    if (!is_terminal(b.state)) out.push_back({"@" + b.id.str(), FileKind::kDirectory});
  }
  if (cfg_.allow_control) out.push_back({std::string(kControlName), FileKind::kRegular});
  return out;
}

std::vector<DirEntry> BranchFs::readdir(const std::string& path) {
  RoutedPath r = route_path(path);
  if (r.kind == RoutedPath::Kind::kMountRoot) return root_entries();
  if (r.kind == RoutedPath::Kind::kControl) {
    throw BranchError(Errc::kNotDirectory, "control file is not a directory");
  }
  return store_.list_dir(r.branch, r.rel);
}

std::string BranchFs::readlink(const std::string& path) {
  RoutedPath r = route_path(path);
  if (r.kind != RoutedPath::Kind::kBranch || r.rel.is_root()) {
    throw BranchError(Errc::kInvalidArgument, "not a symlink");
  }
  return store_.read_link(r.branch, r.rel);
}

struct statvfs BranchFs::statfs() {
  struct statvfs sv {};
  if (::statvfs(store_.store_dir().c_str(), &sv) != 0) throw_errno("statvfs");
  return sv;
}

// --- namespace operations --------------------------------------------------

void BranchFs::mkdir(const std::string& path, mode_t mode) {
  RoutedPath r = route_path(path);
  reject_reserved(r);
  store_.mkdir(r.branch, r.rel, mode & 07777);
}

void BranchFs::mknod(const std::string& path, mode_t mode) {
  if (!S_ISREG(mode)) throw BranchError(Errc::kUnsupported, "special files are not supported");
  RoutedPath r = route_path(path);
  reject_reserved(r);
  store_.create_file(r.branch, r.rel, mode & 07777);
}

void BranchFs::symlink(const std::string& target, const std::string& path) {
  RoutedPath r = route_path(path);
  reject_reserved(r);
  store_.symlink(r.branch, target, r.rel);
}

void BranchFs::unlink(const std::string& path) {
  RoutedPath r = route_data(path);
  struct stat st = getattr(path);
  if (S_ISDIR(st.st_mode)) throw BranchError(Errc::kIsDirectory, "is a directory");
  store_.remove(r.branch, r.rel);
}

void BranchFs::rmdir(const std::string& path) {
  RoutedPath r = route_data(path);
  struct stat st = getattr(path);
  if (!S_ISDIR(st.st_mode)) throw BranchError(Errc::kNotDirectory, "not a directory");
  if (!store_.list_dir(r.branch, r.rel).empty()) {
    throw BranchError(Errc::kNotEmpty, "directory not empty");
  }
  store_.remove(r.branch, r.rel);
}

void BranchFs::rename(const std::string& from, const std::string& to, unsigned flags) {
  if (flags & ~static_cast<unsigned>(RENAME_NOREPLACE)) {
    throw BranchError(Errc::kInvalidArgument, "unsupported rename flags");
  }
  RoutedPath a = route_data(from);
  RoutedPath b = route_path(to);
  if (b.kind != RoutedPath::Kind::kBranch || b.via_at) fail(EPERM, "reserved rename target");
  if (a.branch != b.branch) throw BranchError(Errc::kCrossBranch, "rename across branches");
  if ((flags & RENAME_NOREPLACE) && store_.stat(b.branch, b.rel)) {
    throw BranchError(Errc::kExists, "target exists");
  }
  store_.rename(a.branch, a.rel, b.rel);
  rekey_handles(normalize(from), normalize(to));
}

struct stat BranchFs::setattr(const std::string& path, const SetAttr& attr, std::optional<Fh> fh) {
  RoutedPath r = route_path(path);
  if (r.kind == RoutedPath::Kind::kControl) return getattr(path);
  if (r.kind == RoutedPath::Kind::kMountRoot) {
    if (attr.mode || attr.size || attr.atime || attr.mtime) fail(EPERM, "mount root");
    return getattr(path);
  }
  if (attr.uid || attr.gid) {
    struct stat cur = fh ? fgetattr(*fh) : getattr(path);
    if ((attr.uid && *attr.uid != cur.st_uid) || (attr.gid && *attr.gid != cur.st_gid)) {
      fail(EPERM, "ownership changes are not supported");
    }
  }
  if (attr.mode) store_.set_mode(r.branch, r.rel, *attr.mode & 07777);
  if (attr.size) {
    std::shared_ptr<Handle> h = fh ? handle(*fh) : nullptr;
    if (h && h->writable) {
      std::lock_guard lk(h->mu);
      auto guard = store_.guard_io(h->routed.branch, BranchStore::Access::kWrite);
      if (::ftruncate(h->fd.get(), static_cast<off_t>(*attr.size)) != 0) throw_errno("ftruncate");
    } else {
      store_.truncate(r.branch, r.rel, *attr.size);
    }
  }
  if (attr.atime || attr.mtime) store_.set_times(r.branch, r.rel, attr.atime, attr.mtime);
  try {
    return getattr(path);
  } catch (const BranchError& e) {
    if (e.code() != Errc::kNotFound || !fh) throw;
    return fgetattr(*fh);
  }
}

// --- handles -------------------------------------------------------------

std::shared_ptr<BranchFs::Handle> BranchFs::handle(Fh fh) const {
  std::lock_guard lk(handles_mu_);
  auto it = handles_.find(fh);
  if (it == handles_.end()) fail(EBADF, "unknown file handle");
  return it->second;
}

BranchFs::Fh BranchFs::add_handle(std::shared_ptr<Handle> h) {
  std::lock_guard lk(handles_mu_);
  Fh fh = next_fh_++;
  handles_.emplace(fh, std::move(h));
  return fh;
}

bool BranchFs::is_control(Fh fh) const { return handle(fh)->kind == Handle::Kind::kControl; }

void BranchFs::rekey_handles(const std::string& from, const std::string& to) {
  std::vector<std::shared_ptr<Handle>> all;
  {
    std::lock_guard lk(handles_mu_);
    for (const auto& [_, h] : handles_) all.push_back(h);
  }
  for (const auto& h : all) {
    std::lock_guard lk(h->mu);
    if (h->kind != Handle::Kind::kFile) continue;
    const std::string& p = h->path;
    if (p == from || (p.size() > from.size() && p.starts_with(from) && p[from.size()] == '/')) {
      h->path = to + p.substr(from.size());
      h->routed = route_path(h->path);
    }
  }
}

BranchFs::Fh BranchFs::open(const std::string& path, int flags) {
  RoutedPath r = route_path(path);
  auto h = std::make_shared<Handle>();
  h->path = normalize(path);
  h->routed = r;
  if (r.kind == RoutedPath::Kind::kControl) {
    h->kind = Handle::Kind::kControl;
    return add_handle(std::move(h));
  }
  if (r.kind == RoutedPath::Kind::kMountRoot || r.rel.is_root()) {
    throw BranchError(Errc::kIsDirectory, "is a directory");
  }
  int acc = flags & O_ACCMODE;
  bool trunc = (flags & O_TRUNC) != 0;
  h->writable = acc != O_RDONLY;
  if (h->writable) {
    auto phys = store_.copy_up(r.branch, r.rel,
                               trunc ? BranchStore::CopyUpContent::kEmpty
                                     : BranchStore::CopyUpContent::kFull);
    auto st = posix::lstat_opt(phys);
    if (st && S_ISDIR(st->st_mode)) throw BranchError(Errc::kIsDirectory, "is a directory");
    h->fd = posix::open_or_throw(phys, acc | (flags & O_APPEND) | O_NOFOLLOW);
    h->physical = phys;
    if (trunc) {
      auto guard = store_.guard_io(r.branch, BranchStore::Access::kWrite);
      if (::ftruncate(h->fd.get(), 0) != 0) throw_errno("ftruncate");
    }
    return add_handle(std::move(h));
  }
  if (trunc) store_.truncate(r.branch, r.rel, 0);
  h->generation = store_.generation();
  Resolution res = store_.resolve(r.branch, r.rel);
  if (!res.found()) throw BranchError(Errc::kNotFound, "no such file '" + path + "'");
  if (res.is_dir()) throw BranchError(Errc::kIsDirectory, "is a directory");
  h->physical = res.physical;
  Fh fh = add_handle(h);
  if (cfg_.fd_cache_capacity > 0) {
    try {
      std::lock_guard lk(h->mu);
      touch_cache(fh, *h);
    } catch (...) {
      release(fh);
      throw;
    }
  }
  return fh;
}

BranchFs::Fh BranchFs::create(const std::string& path, mode_t mode, int flags) {
  RoutedPath r = route_path(path);
  reject_reserved(r);
  auto phys = store_.create_file(r.branch, r.rel, mode & 07777);
  auto h = std::make_shared<Handle>();
  h->path = normalize(path);
  h->routed = r;
  h->writable = true;
  h->physical = phys;
  int acc = (flags & O_ACCMODE) == O_RDONLY ? O_RDWR : (flags & O_ACCMODE);
  h->fd = posix::open_or_throw(phys, acc | (flags & O_APPEND) | O_NOFOLLOW);
  return add_handle(std::move(h));
}

// Opens (or reuses) the cached read descriptor for `h`. Caller holds h.mu.
void BranchFs::touch_cache(Fh fh, Handle& h) {
  std::vector<CachedFd> evicted;  // closed after the locks drop
  {
    std::lock_guard lk(cache_mu_);
    auto it = cache_.find(fh);
    if (it != cache_.end() && it->second.physical == h.physical) {
      lru_.splice(lru_.begin(), lru_, lru_pos_.at(fh));
      return;
    }
  }
  auto fd = std::make_shared<UniqueFd>(posix::open_or_throw(h.physical, O_RDONLY));
  std::lock_guard lk(cache_mu_);
  cache_[fh] = CachedFd{std::move(fd), h.physical};
  if (auto pos = lru_pos_.find(fh); pos != lru_pos_.end()) {
    lru_.splice(lru_.begin(), lru_, pos->second);
  } else {
    lru_.push_front(fh);
    lru_pos_[fh] = lru_.begin();
  }
  while (lru_.size() > cfg_.fd_cache_capacity) {
    Fh victim = lru_.back();
    lru_.pop_back();
    lru_pos_.erase(victim);
    auto v = cache_.find(victim);
    if (v != cache_.end()) {
      evicted.push_back(std::move(v->second));
      cache_.erase(v);
    }
  }
}

std::size_t BranchFs::cached_fds() const {
  std::lock_guard lk(cache_mu_);
  return cache_.size();
}

std::size_t BranchFs::read(Fh fh, std::uint64_t offset, std::span<std::byte> out) {
  auto h = handle(fh);
  std::unique_lock lk(h->mu);
  if (h->kind == Handle::Kind::kControl) return read_control(*h, offset, out);

  if (h->writable) {
    auto guard = store_.guard_io(h->routed.branch, BranchStore::Access::kRead);
    return posix::pread_full(h->fd.get(), out, offset);
  }

  // Another operation may have copied the file up or renamed it since the
  // last read; re-resolve only when the store changed.
  std::uint64_t gen = store_.generation();
  if (gen != h->generation) {
    Resolution res = store_.resolve(h->routed.branch, h->routed.rel);
    if (res.found() && !res.is_dir()) h->physical = res.physical;
    h->generation = gen;
  }

  std::shared_ptr<UniqueFd> fd;
  if (cfg_.fd_cache_capacity > 0) {
    touch_cache(fh, *h);
    std::lock_guard cl(cache_mu_);
    fd = cache_.at(fh).fd;
  }
  fs::path physical = h->physical;
  BranchId branch = h->routed.branch;
  lk.unlock();

  auto guard = store_.guard_io(branch, BranchStore::Access::kRead);
  if (fd) return posix::pread_full(fd->get(), out, offset);
  UniqueFd once = posix::open_or_throw(physical, O_RDONLY);
  return posix::pread_full(once.get(), out, offset);
}

std::size_t BranchFs::write(Fh fh, std::uint64_t offset, std::span<const std::byte> data) {
  auto h = handle(fh);
  if (h->kind == Handle::Kind::kControl) return write_control(data);
  if (!h->writable) fail(EBADF, "handle not open for writing");
  auto guard = store_.guard_io(h->routed.branch, BranchStore::Access::kWrite);
  posix::write_all(h->fd.get(), data, offset);
  return data.size();
}

void BranchFs::fsync(Fh fh) {
  if (!cfg_.honor_fsync) return;
  auto h = handle(fh);
  std::lock_guard lk(h->mu);
  if (h->fd && ::fsync(h->fd.get()) != 0) throw_errno("fsync");
}

void BranchFs::release(Fh fh) {
  {
    std::lock_guard lk(handles_mu_);
    handles_.erase(fh);
  }
  CachedFd dropped;
  std::lock_guard lk(cache_mu_);
  if (auto it = cache_.find(fh); it != cache_.end()) {
    dropped = std::move(it->second);
    cache_.erase(it);
  }
  if (auto pos = lru_pos_.find(fh); pos != lru_pos_.end()) {
    lru_.erase(pos->second);
    lru_pos_.erase(pos);
  }
}

// --- control file ----------------------------------------------------------

std::string BranchFs::listing() const { return control::format_listing(store_.list_branches()); }

std::size_t BranchFs::read_control(Handle& h, std::uint64_t offset, std::span<std::byte> out) {
  if (offset == 0) h.control_snapshot = listing();
  if (offset >= h.control_snapshot.size()) return 0;
  size_t n = std::min<size_t>(out.size(), h.control_snapshot.size() - offset);
  std::memcpy(out.data(), h.control_snapshot.data() + offset, n);
  return n;
}

std::size_t BranchFs::write_control(std::span<const std::byte> data) {
  std::string_view text(reinterpret_cast<const char*>(data.data()), data.size());
  for (const auto& cmd : control::parse_buffer(text)) {
    control::execute(store_, cmd, cfg_.default_branch);
  }
  return data.size();
}

// --- ioctl ---------------------------------------------------------------

int BranchFs::ioctl(const std::string& path, unsigned cmd, std::span<std::byte> out) {
  if (_IOC_TYPE(cmd) != BRANCHFS_IOC_MAGIC) fail(ENOTTY, "not a branch ioctl");
  RoutedPath r = route_path(path);
  const BranchId& branch = r.branch;
  switch (cmd) {
    case FS_IOC_BRANCH_CREATE:
    case FS_IOC_BRANCH_CREATE_NAMED: {
      for (int attempt = 0; attempt < 10000; ++attempt) {
        std::uint64_t n = ++ioc_serial_;
        std::string name = "ioc-" + std::to_string(n);
        try {
          store_.create_branch(branch, name);
        } catch (const BranchError& e) {
          if (e.code() == Errc::kExists) continue;
          throw;
        }
        if (cmd == FS_IOC_BRANCH_CREATE_NAMED && out.size() >= sizeof(branchfs_ioc_name)) {
          std::memset(out.data(), 0, sizeof(branchfs_ioc_name));
          std::memcpy(out.data(), name.data(), std::min(name.size(), size_t{BRANCHFS_NAME_MAX - 1}));
        }
        return static_cast<int>(n);
      }
      fail(EEXIST, "could not find a free ioc-<n> name");
    }
    case FS_IOC_BRANCH_COMMIT: store_.commit_branch(branch); return 0;
    case FS_IOC_BRANCH_ABORT: store_.abort_branch(branch); return 0;
    default: throw BranchError(Errc::kUnsupported, "unknown branch ioctl");
  }
}

}  // namespace branchfs::vfs
