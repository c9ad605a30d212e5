#include "branchfs/vfs/fuse_server.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <linux/fuse.h>
#include <sys/mount.h>
#include <sys/stat.h>
#include <sys/sysmacros.h>
#include <sys/uio.h>
#include <unistd.h>

#include <spdlog/spdlog.h>

#include <chrono>
#include <cstring>
#include <fstream>

#include "branchfs/error.hpp"

namespace branchfs::vfs {

namespace fs = std::filesystem;

namespace {

constexpr std::uint32_t kMaxWrite = 1u << 20;
constexpr std::size_t kBufferSize = kMaxWrite + 64 * 1024;
constexpr std::uint32_t kOurMinor = 34;

std::string join(const std::string& dir, std::string_view name) {
  if (dir.empty()) return std::string(name);
  std::string out = dir;
  out += '/';
  out += name;
  return out;
}

void fill_attr(fuse_attr& a, const struct stat& st, std::uint64_t ino) {
  a = {};
  a.ino = ino;
  a.size = static_cast<std::uint64_t>(st.st_size);
  a.blocks = static_cast<std::uint64_t>(st.st_blocks);
  a.atime = static_cast<std::uint64_t>(st.st_atim.tv_sec);
  a.mtime = static_cast<std::uint64_t>(st.st_mtim.tv_sec);
  a.ctime = static_cast<std::uint64_t>(st.st_ctim.tv_sec);
  a.atimensec = static_cast<std::uint32_t>(st.st_atim.tv_nsec);
  a.mtimensec = static_cast<std::uint32_t>(st.st_mtim.tv_nsec);
  a.ctimensec = static_cast<std::uint32_t>(st.st_ctim.tv_nsec);
  a.mode = st.st_mode;
  a.nlink = static_cast<std::uint32_t>(st.st_nlink);
  a.uid = st.st_uid;
  a.gid = st.st_gid;
  a.rdev = static_cast<std::uint32_t>(st.st_rdev);
  a.blksize = static_cast<std::uint32_t>(st.st_blksize);
}

unsigned dirent_type(FileKind k) {
  switch (k) {
    case FileKind::kRegular: return DT_REG;
    case FileKind::kDirectory: return DT_DIR;
    case FileKind::kSymlink: return DT_LNK;
    case FileKind::kSpecial: return DT_UNKNOWN;
  }
  return DT_UNKNOWN;
}

int errno_of(const std::exception_ptr& ep) {
  try {
    std::rethrow_exception(ep);
  } catch (const BranchError& e) {
    return e.to_errno();
  } catch (const std::filesystem::filesystem_error& e) {
    return e.code().value() ? e.code().value() : EIO;
  } catch (const std::bad_alloc&) {
    return ENOMEM;
  } catch (...) {
    return EIO;
  }
}

}  // namespace

std::uint64_t inode_number(std::string_view mount_path) {
  if (mount_path.empty()) return FUSE_ROOT_ID;
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : mount_path) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h <= FUSE_ROOT_ID ? h + 2 : h;
}

class FuseServer::Request {
 public:
  Request(const char* buf, size_t len) : buf_(buf), len_(len) {
    in = reinterpret_cast<const fuse_in_header*>(buf);
    pos_ = sizeof(fuse_in_header);
  }

  template <typename T>
  const T& arg() {
    if (pos_ + sizeof(T) > len_) throw BranchError(Errc::kInvalidArgument, "short request");
    const T* p = reinterpret_cast<const T*>(buf_ + pos_);
    pos_ += sizeof(T);
    return *p;
  }

  std::string_view name() {
    const char* start = buf_ + pos_;
    size_t max = len_ - pos_;
    size_t n = strnlen(start, max);
    if (n == max) throw BranchError(Errc::kInvalidArgument, "unterminated name");
    pos_ += n + 1;
    return {start, n};
  }

  std::span<const std::byte> rest(size_t n) {
    if (pos_ + n > len_) throw BranchError(Errc::kInvalidArgument, "short payload");
    return {reinterpret_cast<const std::byte*>(buf_ + pos_), n};
  }

  const fuse_in_header* in;

 private:
  const char* buf_;
  size_t len_;
  size_t pos_;
};

FuseServer::FuseServer(BranchFs& fs, fs::path mountpoint, unsigned threads)
    : fs_(fs), mountpoint_(std::move(mountpoint)), thread_count_(threads ? threads : 1) {
  nodes_[FUSE_ROOT_ID] = Node{"", 1, S_IFDIR, false, {}};
  by_path_[""] = FUSE_ROOT_ID;
}

FuseServer::~FuseServer() { stop(); }

void FuseServer::start() {
  mountpoint_ = fs::canonical(mountpoint_);
  dev_ = posix::open_or_throw("/dev/fuse", O_RDWR);
  std::string opts = "fd=" + std::to_string(dev_.get()) +
                     ",rootmode=40000,user_id=" + std::to_string(::getuid()) +
                     ",group_id=" + std::to_string(::getgid()) + ",allow_other";
  if (::mount("branchfs", mountpoint_.c_str(), "fuse.branchfs", MS_NOSUID | MS_NODEV,
              opts.c_str()) != 0) {
    throw_errno("mount " + mountpoint_.string());
  }
  mounted_ = true;
  running_ = true;
  for (unsigned i = 0; i < thread_count_; ++i) workers_.emplace_back([this] { worker(); });

  std::unique_lock lk(init_mu_);
  if (!init_cv_.wait_for(lk, std::chrono::seconds(10), [&] { return init_done_; })) {
    lk.unlock();
    stop();
    throw BranchError(Errc::kIo, "kernel never sent FUSE_INIT", ETIMEDOUT);
  }
  struct stat st {};
  if (::stat(mountpoint_.c_str(), &st) == 0) mount_dev_ = st.st_dev;
  spdlog::debug("mounted branchfs at {}", mountpoint_.string());
}

void FuseServer::wait() {
  std::unique_lock lk(exit_mu_);
  exit_cv_.wait(lk, [&] { return exited_ > 0; });
}

void FuseServer::stop() {
  if (mounted_.exchange(false)) {
    if (::umount2(mountpoint_.c_str(), 0) != 0 && errno != EINVAL && errno != ENOENT) {
      spdlog::warn("umount {} failed ({}); detaching lazily", mountpoint_.string(),
                   std::strerror(errno));
      ::umount2(mountpoint_.c_str(), MNT_DETACH);
    }
  }
  if (!workers_.empty()) {
    // Open files elsewhere can keep a lazily detached connection alive;
    // abort it through fusectl so the workers see ENODEV.
    std::unique_lock lk(exit_mu_);
    if (!exit_cv_.wait_for(lk, std::chrono::seconds(2), [&] { return exited_ > 0; }) &&
        mount_dev_ != 0) {
      lk.unlock();
      fs::path ctl = "/sys/fs/fuse/connections";
      if (!fs::exists(ctl / std::to_string(minor(mount_dev_)))) {
        ::mount("fusectl", ctl.c_str(), "fusectl", 0, nullptr);
      }
      std::ofstream(ctl / std::to_string(minor(mount_dev_)) / "abort") << "1";
    }
  }
  for (auto& t : workers_) t.join();
  workers_.clear();
  dev_.reset();
  running_ = false;
}

void FuseServer::worker() {
  std::vector<char> buf(kBufferSize);
  for (;;) {
    ssize_t n = ::read(dev_.get(), buf.data(), buf.size());
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN || errno == ENOENT) continue;
      if (errno != ENODEV) spdlog::error("read /dev/fuse: {}", std::strerror(errno));
      break;
    }
    if (static_cast<size_t>(n) < sizeof(fuse_in_header)) continue;
    Request req(buf.data(), static_cast<size_t>(n));
    dispatch(req);
  }
  std::lock_guard lk(exit_mu_);
  ++exited_;
  exit_cv_.notify_all();
}

// --- replies ---------------------------------------------------------------

void FuseServer::reply2(const fuse_in_header& in, const void* a, size_t asz, const void* b,
                        size_t bsz) {
  fuse_out_header out{};
  out.unique = in.unique;
  out.error = 0;
  iovec iov[3];
  int cnt = 0;
  iov[cnt++] = {&out, sizeof(out)};
  if (asz) iov[cnt++] = {const_cast<void*>(a), asz};
  if (bsz) iov[cnt++] = {const_cast<void*>(b), bsz};
  out.len = static_cast<std::uint32_t>(sizeof(out) + asz + bsz);
  if (::writev(dev_.get(), iov, cnt) < 0 && errno != ENOENT) {
    spdlog::debug("reply to {} failed: {}", in.opcode, std::strerror(errno));
  }
}

void FuseServer::reply(const fuse_in_header& in, const void* data, size_t size) {
  reply2(in, data, size, nullptr, 0);
}

void FuseServer::reply_err(const fuse_in_header& in, int err) {
  fuse_out_header out{};
  out.unique = in.unique;
  out.error = -err;
  out.len = sizeof(out);
  if (::write(dev_.get(), &out, sizeof(out)) < 0 && errno != ENOENT) {
    spdlog::debug("error reply failed: {}", std::strerror(errno));
  }
}

// --- inode table -------------------------------------------------------------

std::string FuseServer::path_of(std::uint64_t nodeid) {
  std::lock_guard lk(nodes_mu_);
  auto it = nodes_.find(nodeid);
  if (it == nodes_.end() || it->second.detached) {
    throw BranchError(Errc::kNotFound, "stale node id");
  }
  return it->second.path;
}

std::uint64_t FuseServer::remember(const std::string& path, mode_t type) {
  std::lock_guard lk(nodes_mu_);
  auto it = by_path_.find(path);
  if (it != by_path_.end()) {
    Node& n = nodes_.at(it->second);
    if (n.type == (type & S_IFMT)) {
      ++n.nlookup;
      return it->second;
    }
    // Same name, different kind of object: hand out a fresh node id so the
    // kernel never sees an inode change type.
    n.detached = true;
    by_path_.erase(it);
  }
  std::uint64_t id = next_nodeid_++;
  nodes_[id] = Node{path, 1, type & S_IFMT, false, {}};
  by_path_[path] = id;
  return id;
}

void FuseServer::forget(std::uint64_t nodeid, std::uint64_t n) {
  if (nodeid == FUSE_ROOT_ID) return;
  std::lock_guard lk(nodes_mu_);
  auto it = nodes_.find(nodeid);
  if (it == nodes_.end()) return;
  Node& node = it->second;
  node.nlookup = node.nlookup > n ? node.nlookup - n : 0;
  if (node.nlookup == 0) {
    if (!node.detached) by_path_.erase(node.path);
    nodes_.erase(it);
  }
}

void FuseServer::detach(const std::string& path) {
  std::lock_guard lk(nodes_mu_);
  auto it = by_path_.lower_bound(path);
  while (it != by_path_.end() &&
         (it->first == path ||
          (it->first.size() > path.size() && it->first.starts_with(path) &&
           it->first[path.size()] == '/'))) {
    nodes_.at(it->second).detached = true;
    it = by_path_.erase(it);
  }
}

void FuseServer::rekey(const std::string& from, const std::string& to) {
  std::lock_guard lk(nodes_mu_);
  std::vector<std::pair<std::string, std::uint64_t>> moved;
  auto it = by_path_.lower_bound(from);
  while (it != by_path_.end() &&
         (it->first == from ||
          (it->first.size() > from.size() && it->first.starts_with(from) &&
           it->first[from.size()] == '/'))) {
    moved.emplace_back(to + it->first.substr(from.size()), it->second);
    it = by_path_.erase(it);
  }
  for (auto& [p, id] : moved) {
    nodes_.at(id).path = p;
    by_path_[p] = id;
  }
}

void FuseServer::note_open(std::uint64_t nodeid, BranchFs::Fh fh) {
  std::lock_guard lk(nodes_mu_);
  if (auto it = nodes_.find(nodeid); it != nodes_.end()) it->second.open.insert(fh);
}

void FuseServer::note_release(std::uint64_t nodeid, BranchFs::Fh fh) {
  std::lock_guard lk(nodes_mu_);
  if (auto it = nodes_.find(nodeid); it != nodes_.end()) it->second.open.erase(fh);
}

std::optional<BranchFs::Fh> FuseServer::any_open(std::uint64_t nodeid) {
  std::lock_guard lk(nodes_mu_);
  auto it = nodes_.find(nodeid);
  if (it == nodes_.end() || it->second.open.empty()) return std::nullopt;
  return *it->second.open.begin();
}

// --- dispatch --------------------------------------------------------------

void FuseServer::dispatch(Request& req) {
  const fuse_in_header& in = *req.in;
  switch (in.opcode) {
    case FUSE_FORGET: forget(in.nodeid, req.arg<fuse_forget_in>().nlookup); return;
    case FUSE_BATCH_FORGET: {
      const auto& b = req.arg<fuse_batch_forget_in>();
      for (std::uint32_t i = 0; i < b.count; ++i) {
        const auto& one = req.arg<fuse_forget_one>();
        forget(one.nodeid, one.nlookup);
      }
      return;
    }
    case FUSE_INTERRUPT: return;
    default: break;
  }
  try {
    switch (in.opcode) {
      case FUSE_INIT: return do_init(req);
      case FUSE_DESTROY: return reply(in, nullptr, 0);
      case FUSE_LOOKUP: return do_lookup(req);
      case FUSE_GETATTR: return do_getattr(req);
      case FUSE_SETATTR: return do_setattr(req);
      case FUSE_READLINK: return do_readlink(req);
      case FUSE_SYMLINK: return do_symlink(req);
      case FUSE_MKNOD: return do_mknod(req);
      case FUSE_MKDIR: return do_mkdir(req);
      case FUSE_UNLINK: return do_unlink(req, false);
      case FUSE_RMDIR: return do_unlink(req, true);
      case FUSE_RENAME: return do_rename(req, false);
      case FUSE_RENAME2: return do_rename(req, true);
      case FUSE_LINK: return reply_err(in, EOPNOTSUPP);
      case FUSE_OPEN: return do_open(req);
      case FUSE_CREATE: return do_create(req);
      case FUSE_READ: return do_read(req);
      case FUSE_WRITE: return do_write(req);
      case FUSE_RELEASE: return do_release(req);
      case FUSE_FLUSH: return reply(in, nullptr, 0);
      case FUSE_FSYNC: {
        fs_.fsync(req.arg<fuse_fsync_in>().fh);
        return reply(in, nullptr, 0);
      }
      case FUSE_OPENDIR: return do_opendir(req);
      case FUSE_READDIR: return do_readdir(req);
      case FUSE_RELEASEDIR: return do_releasedir(req);
      case FUSE_FSYNCDIR: return reply(in, nullptr, 0);
      case FUSE_STATFS: return do_statfs(req);
      case FUSE_ACCESS: return reply(in, nullptr, 0);
      case FUSE_IOCTL: return do_ioctl(req);
      case FUSE_SETXATTR: return reply_err(in, EOPNOTSUPP);
      default: return reply_err(in, ENOSYS);
    }
  } catch (...) {
    int err = errno_of(std::current_exception());
    if (spdlog::should_log(spdlog::level::debug)) {
      try {
        throw;
      } catch (const std::exception& e) {
        spdlog::debug("op {} on node {}: {} ({})", in.opcode, in.nodeid, e.what(),
                      std::strerror(err));
      }
    }
    reply_err(in, err);
  }
}

void FuseServer::do_init(Request& req) {
  const auto& ini = req.arg<fuse_init_in>();
  fuse_init_out out{};
  out.major = FUSE_KERNEL_VERSION;
  out.minor = std::min<std::uint32_t>(ini.minor, kOurMinor);
  if (ini.major != FUSE_KERNEL_VERSION) {
    spdlog::error("unsupported FUSE major version {}", ini.major);
    reply_err(*req.in, EPROTO);
    return;
  }
  std::uint32_t want = FUSE_ASYNC_READ | FUSE_ATOMIC_O_TRUNC | FUSE_BIG_WRITES |
                       FUSE_HAS_IOCTL_DIR | FUSE_PARALLEL_DIROPS | FUSE_MAX_PAGES;
  out.flags = ini.flags & want;
  out.max_readahead = ini.max_readahead;
  out.max_background = 64;
  out.congestion_threshold = 48;
  out.max_write = kMaxWrite;
  out.time_gran = 1;
  out.max_pages = static_cast<std::uint16_t>(kMaxWrite / 4096);
  size_t size = out.minor < 23 ? FUSE_COMPAT_22_INIT_OUT_SIZE : sizeof(out);
  reply(*req.in, &out, size);
  std::lock_guard lk(init_mu_);
  init_done_ = true;
  init_cv_.notify_all();
}

void FuseServer::reply_entry(Request& req, const std::string& path, const struct stat& st) {
  fuse_entry_out e{};
  e.nodeid = remember(path, st.st_mode);
  e.generation = 0;
  e.entry_valid = 0;
  e.attr_valid = 0;
  fill_attr(e.attr, st, inode_number(path));
  reply(*req.in, &e, sizeof(e));
}

void FuseServer::do_lookup(Request& req) {
  std::string path = join(path_of(req.in->nodeid), req.name());
  struct stat st = fs_.getattr(path);
  reply_entry(req, path, st);
}

void FuseServer::do_getattr(Request& req) {
  const auto& gi = req.arg<fuse_getattr_in>();
  struct stat st {};
  std::string path;
  bool have = false;
  try {
    path = path_of(req.in->nodeid);
    st = fs_.getattr(path);
    have = true;
  } catch (const BranchError& e) {
    if (e.code() != Errc::kNotFound) throw;
  }
  if (!have) {
    // Unlinked but still open: answer through a handle.
    std::optional<BranchFs::Fh> fh;
    if (gi.getattr_flags & FUSE_GETATTR_FH) fh = gi.fh;
    if (!fh) fh = any_open(req.in->nodeid);
    if (!fh) throw BranchError(Errc::kNotFound, "no such file");
    st = fs_.fgetattr(*fh);
  }
  fuse_attr_out out{};
  fill_attr(out.attr, st, path.empty() && req.in->nodeid != FUSE_ROOT_ID ? req.in->nodeid
                                                                         : inode_number(path));
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_setattr(Request& req) {
  const auto& si = req.arg<fuse_setattr_in>();
  BranchFs::SetAttr a;
  if (si.valid & FATTR_MODE) a.mode = si.mode;
  if (si.valid & FATTR_UID) a.uid = si.uid;
  if (si.valid & FATTR_GID) a.gid = si.gid;
  if (si.valid & FATTR_SIZE) a.size = si.size;
  if (si.valid & FATTR_ATIME_NOW) {
    a.atime = timespec{0, UTIME_NOW};
  } else if (si.valid & FATTR_ATIME) {
    a.atime = timespec{static_cast<time_t>(si.atime), static_cast<long>(si.atimensec)};
  }
  if (si.valid & FATTR_MTIME_NOW) {
    a.mtime = timespec{0, UTIME_NOW};
  } else if (si.valid & FATTR_MTIME) {
    a.mtime = timespec{static_cast<time_t>(si.mtime), static_cast<long>(si.mtimensec)};
  }
  std::optional<BranchFs::Fh> fh;
  if (si.valid & FATTR_FH) fh = si.fh;
  std::string path = path_of(req.in->nodeid);
  struct stat st = fs_.setattr(path, a, fh);
  fuse_attr_out out{};
  fill_attr(out.attr, st, inode_number(path));
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_readlink(Request& req) {
  std::string target = fs_.readlink(path_of(req.in->nodeid));
  reply(*req.in, target.data(), target.size());
}

void FuseServer::do_symlink(Request& req) {
  std::string name(req.name());
  std::string target(req.name());
  std::string path = join(path_of(req.in->nodeid), name);
  fs_.symlink(target, path);
  reply_entry(req, path, fs_.getattr(path));
}

void FuseServer::do_mknod(Request& req) {
  const auto& mi = req.arg<fuse_mknod_in>();
  std::string path = join(path_of(req.in->nodeid), req.name());
  fs_.mknod(path, mi.mode);
  reply_entry(req, path, fs_.getattr(path));
}

void FuseServer::do_mkdir(Request& req) {
  const auto& mi = req.arg<fuse_mkdir_in>();
  std::string path = join(path_of(req.in->nodeid), req.name());
  fs_.mkdir(path, mi.mode);
  reply_entry(req, path, fs_.getattr(path));
}

void FuseServer::do_unlink(Request& req, bool dir) {
  std::string path = join(path_of(req.in->nodeid), req.name());
  if (dir) {
    fs_.rmdir(path);
  } else {
    fs_.unlink(path);
  }
  detach(path);
  reply(*req.in, nullptr, 0);
}

void FuseServer::do_rename(Request& req, bool v2) {
  std::uint64_t newdir;
  unsigned flags = 0;
  if (v2) {
    const auto& ri = req.arg<fuse_rename2_in>();
    newdir = ri.newdir;
    flags = ri.flags;
  } else {
    newdir = req.arg<fuse_rename_in>().newdir;
  }
  std::string from = join(path_of(req.in->nodeid), req.name());
  std::string to = join(path_of(newdir), req.name());
  fs_.rename(from, to, flags);
  if (from != to) {
    detach(to);
    rekey(from, to);
  }
  reply(*req.in, nullptr, 0);
}

void FuseServer::do_open(Request& req) {
  const auto& oi = req.arg<fuse_open_in>();
  std::string path = path_of(req.in->nodeid);
  BranchFs::Fh fh = fs_.open(path, static_cast<int>(oi.flags));
  note_open(req.in->nodeid, fh);
  fuse_open_out out{};
  out.fh = fh;
  if (fs_.is_control(fh)) out.open_flags = FOPEN_DIRECT_IO;
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_create(Request& req) {
  const auto& ci = req.arg<fuse_create_in>();
  std::string path = join(path_of(req.in->nodeid), req.name());
  BranchFs::Fh fh = fs_.create(path, ci.mode, static_cast<int>(ci.flags));
  struct stat st {};
  try {
    st = fs_.getattr(path);
  } catch (...) {
    fs_.release(fh);
    throw;
  }
  fuse_entry_out e{};
  e.nodeid = remember(path, st.st_mode);
  fill_attr(e.attr, st, inode_number(path));
  note_open(e.nodeid, fh);
  fuse_open_out o{};
  o.fh = fh;
  reply2(*req.in, &e, sizeof(e), &o, sizeof(o));
}

void FuseServer::do_read(Request& req) {
  const auto& ri = req.arg<fuse_read_in>();
  thread_local std::vector<std::byte> buf;
  if (buf.size() < ri.size) buf.resize(ri.size);
  size_t n = fs_.read(ri.fh, ri.offset, std::span(buf.data(), ri.size));
  reply(*req.in, buf.data(), n);
}

void FuseServer::do_write(Request& req) {
  const auto& wi = req.arg<fuse_write_in>();
  auto data = req.rest(wi.size);
  size_t n = fs_.write(wi.fh, wi.offset, data);
  fuse_write_out out{};
  out.size = static_cast<std::uint32_t>(n);
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_release(Request& req) {
  const auto& ri = req.arg<fuse_release_in>();
  fs_.release(ri.fh);
  note_release(req.in->nodeid, ri.fh);
  reply(*req.in, nullptr, 0);
}

void FuseServer::do_opendir(Request& req) {
  std::string path = path_of(req.in->nodeid);
  DirHandle dh{fs_.readdir(path), path};
  std::uint64_t id;
  {
    std::lock_guard lk(dirs_mu_);
    id = next_dir_++;
    dirs_.emplace(id, std::move(dh));
  }
  fuse_open_out out{};
  out.fh = id;
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_readdir(Request& req) {
  const auto& ri = req.arg<fuse_read_in>();
  std::vector<char> out;
  out.reserve(ri.size);
  std::lock_guard lk(dirs_mu_);
  auto it = dirs_.find(ri.fh);
  if (it == dirs_.end()) throw BranchError(Errc::kIo, "bad dir handle", EBADF);
  const DirHandle& dh = it->second;
  // Offsets 0 and 1 are "." and ".."; entry i lives at offset i + 2.
  auto emit = [&](std::string_view name, std::uint64_t ino, unsigned type, std::uint64_t next) {
    size_t rec = FUSE_DIRENT_ALIGN(FUSE_NAME_OFFSET + name.size());
    if (out.size() + rec > ri.size) return false;
    size_t at = out.size();
    out.resize(at + rec, 0);
    auto* d = reinterpret_cast<fuse_dirent*>(out.data() + at);
    d->ino = ino;
    d->off = next;
    d->namelen = static_cast<std::uint32_t>(name.size());
    d->type = type;
    std::memcpy(d->name, name.data(), name.size());
    return true;
  };
  std::uint64_t off = ri.offset;
  auto slash = dh.path.rfind('/');
  std::string parent = slash == std::string::npos ? "" : dh.path.substr(0, slash);
  for (; off < dh.entries.size() + 2; ++off) {
    bool ok;
    if (off == 0) {
      ok = emit(".", inode_number(dh.path), DT_DIR, 1);
    } else if (off == 1) {
      ok = emit("..", inode_number(parent), DT_DIR, 2);
    } else {
      const DirEntry& e = dh.entries[off - 2];
      ok = emit(e.name, inode_number(join(dh.path, e.name)), dirent_type(e.kind), off + 1);
    }
    if (!ok) break;
  }
  reply(*req.in, out.data(), out.size());
}

void FuseServer::do_releasedir(Request& req) {
  const auto& ri = req.arg<fuse_release_in>();
  {
    std::lock_guard lk(dirs_mu_);
    dirs_.erase(ri.fh);
  }
  reply(*req.in, nullptr, 0);
}

void FuseServer::do_statfs(Request& req) {
  struct statvfs sv = fs_.statfs();
  fuse_statfs_out out{};
  out.st.blocks = sv.f_blocks;
  out.st.bfree = sv.f_bfree;
  out.st.bavail = sv.f_bavail;
  out.st.files = sv.f_files;
  out.st.ffree = sv.f_ffree;
  out.st.bsize = static_cast<std::uint32_t>(sv.f_bsize);
  out.st.namelen = static_cast<std::uint32_t>(sv.f_namemax);
  out.st.frsize = static_cast<std::uint32_t>(sv.f_frsize);
  reply(*req.in, &out, sizeof(out));
}

void FuseServer::do_ioctl(Request& req) {
  const auto& ii = req.arg<fuse_ioctl_in>();
  if (ii.flags & FUSE_IOCTL_UNRESTRICTED) throw BranchError(Errc::kIo, "unrestricted", ENOTTY);
  std::vector<std::byte> data(ii.out_size);
  int result = fs_.ioctl(path_of(req.in->nodeid), ii.cmd, data);
  fuse_ioctl_out out{};
  out.result = result;
  reply2(*req.in, &out, sizeof(out), data.data(), data.size());
}

}  // namespace branchfs::vfs
