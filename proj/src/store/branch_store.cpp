#include "branchfs/branch_store.hpp"

#include <dirent.h>
#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <set>

#include <nlohmann/json.hpp>

#include "branchfs/error.hpp"
#include "branchfs/posix.hpp"

namespace branchfs {

namespace fs = std::filesystem;
using posix::lstat_opt;
using posix::remove_tree;
using posix::UniqueFd;

namespace {

constexpr const char* kMetaFile = "meta";
constexpr const char* kCommitMarker = "commit-in-progress";

bool is_tomb_marker(const struct stat& st) {
  return S_ISREG(st.st_mode) || (S_ISDIR(st.st_mode) && (st.st_mode & S_ISVTX));
}

FileKind kind_of_dtype(unsigned char d_type, const fs::path& full) {
  switch (d_type) {
    case DT_REG: return FileKind::kRegular;
    case DT_DIR: return FileKind::kDirectory;
    case DT_LNK: return FileKind::kSymlink;
    case DT_UNKNOWN: {
      auto st = lstat_opt(full);
      return st ? kind_of_mode(st->st_mode) : FileKind::kSpecial;
    }
    default: return FileKind::kSpecial;
  }
}

/// Calls fn(name, d_type) for each entry of `dir` except "." and "..".
/// Missing or non-directory paths are treated as empty.
template <typename Fn>
void for_each_entry(const fs::path& dir, Fn&& fn) {
  DIR* d = ::opendir(dir.c_str());
  if (d == nullptr) {
    if (errno == ENOENT || errno == ENOTDIR) return;
    throw_errno("opendir " + dir.string());
  }
  struct Closer {
    DIR* d;
    ~Closer() { ::closedir(d); }
  } closer{d};
  while (struct dirent* e = ::readdir(d)) {
    if (std::strcmp(e->d_name, ".") == 0 || std::strcmp(e->d_name, "..") == 0) continue;
    fn(std::string_view(e->d_name), e->d_type);
  }
}

void make_dir(const fs::path& p, mode_t mode) {
  if (::mkdir(p.c_str(), 0700) != 0) throw_errno("mkdir " + p.string());
  if (::chmod(p.c_str(), mode & 07777) != 0) throw_errno("chmod " + p.string());
}

void set_path_times(const fs::path& p, const struct stat& st) {
  struct timespec times[2] = {st.st_atim, st.st_mtim};
  (void)::utimensat(AT_FDCWD, p.c_str(), times, AT_SYMLINK_NOFOLLOW);
}

void duplicate_symlink(const fs::path& src, const fs::path& dst) {
  std::string target(PATH_MAX, '\0');
  ssize_t n = ::readlink(src.c_str(), target.data(), target.size());
  if (n < 0) throw_errno("readlink " + src.string());
  target.resize(static_cast<size_t>(n));
  if (::symlink(target.c_str(), dst.c_str()) != 0) throw_errno("symlink " + dst.string());
}

void write_json_atomic(const fs::path& p, const nlohmann::json& doc) {
  fs::path tmp = p;
  tmp += ".tmp";
  posix::write_file(tmp, doc.dump(2) + "\n");
  if (::rename(tmp.c_str(), p.c_str()) != 0) throw_errno("rename " + p.string());
}

}  // namespace

struct BranchStore::Node {
  BranchMeta meta;
  fs::path dir;  // empty for root
  mutable std::mutex mutate_mu;
  mutable std::atomic<std::uint64_t> tmp_counter{0};

  bool is_root() const { return !meta.parent.has_value(); }
};

BranchStore::BranchStore(fs::path base_dir, fs::path store_dir)
    : base_dir_(std::move(base_dir)), store_dir_(std::move(store_dir)) {
  auto st = lstat_opt(base_dir_);
  if (!st || !S_ISDIR(st->st_mode)) {
    throw BranchError(Errc::kNotDirectory,
                      "base directory " + base_dir_.string() + " is not a directory");
  }
  base_dir_ = fs::canonical(base_dir_);
  fs::create_directories(store_dir_ / "branches");
  store_dir_ = fs::canonical(store_dir_);
  auto [base_end, _] = std::mismatch(base_dir_.begin(), base_dir_.end(),
                                     store_dir_.begin(), store_dir_.end());
  if (base_end == base_dir_.end()) {
    throw BranchError(Errc::kInvalidArgument, "store directory must not be inside the base");
  }
  load();
}

BranchStore::~BranchStore() = default;

void BranchStore::set_timing_hook(TimingHook hook) {
  std::unique_lock lk(mu_);
  timing_hook_ = std::move(hook);
}

void BranchStore::record(std::string_view op, std::chrono::steady_clock::time_point start) const {
  if (timing_hook_) timing_hook_(op, std::chrono::steady_clock::now() - start);
}

fs::path BranchStore::branch_dir(const BranchId& id) const {
  return store_dir_ / "branches" / id.str();
}

// ---------------------------------------------------------------------------
// Metadata helpers

const BranchStore::Node* BranchStore::find_live(const BranchId& id) const {
  auto it = live_.find(id);
  return it == live_.end() ? nullptr : it->second.get();
}

const BranchStore::Node& BranchStore::live_node(const BranchId& id) const {
  if (const Node* n = find_live(id)) return *n;
  if (auto it = retired_.find(id); it != retired_.end()) {
    throw BranchError(Errc::kTerminal, "branch '" + id.str() + "' is " +
                                           std::string(state_name(it->second.state)));
  }
  throw BranchError(Errc::kNotFound, "no branch named '" + id.str() + "'");
}

BranchStore::Node& BranchStore::live_node(const BranchId& id) {
  return const_cast<Node&>(std::as_const(*this).live_node(id));
}

bool BranchStore::is_stale(const Node& n) const {
  // A branch is stale when its parent's epoch moved since the fork, or when
  // any ancestor is stale: its chain then runs through a superseded view.
  const Node* cur = &n;
  while (cur->meta.parent) {
    const Node* p = find_live(*cur->meta.parent);
    if (p == nullptr || p->meta.epoch != cur->meta.parent_epoch_at_create) return true;
    cur = p;
  }
  return false;
}

BranchState BranchStore::effective_state(const Node& n) const {
  if (is_terminal(n.meta.state)) return n.meta.state;
  if (is_stale(n)) return BranchState::kStale;
  if (n.meta.children > 0) return BranchState::kFrozen;
  return BranchState::kActive;
}

void BranchStore::check_readable(const Node& n) const {
  if (is_stale(n)) {
    throw BranchError(Errc::kStale, "branch '" + n.meta.id.str() + "' is stale");
  }
}

void BranchStore::check_mutable(const Node& n) const {
  check_readable(n);
  if (n.meta.children > 0) {
    throw BranchError(Errc::kFrozen, "branch '" + n.meta.id.str() +
                                         "' is frozen while it has live children");
  }
}

BranchMeta BranchStore::snapshot(const Node& n) const {
  BranchMeta m = n.meta;
  m.state = effective_state(n);
  return m;
}

BranchStore::Layer BranchStore::layer_of(const Node& n) const {
  if (n.is_root()) return Layer{base_dir_, {}, &n};
  return Layer{n.dir / "data", n.dir / "tombstones", &n};
}

std::vector<BranchStore::Layer> BranchStore::chain(const Node& n) const {
  std::vector<Layer> out;
  const Node* cur = &n;
  for (;;) {
    out.push_back(layer_of(*cur));
    if (!cur->meta.parent) break;
    cur = &live_node(*cur->meta.parent);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Resolution

BranchStore::TombState BranchStore::tomb_state(const Layer& layer, const RelPath& path) {
  if (layer.is_root() || path.is_root()) return TombState::kNone;
  auto comps = path.components();
  fs::path cur = layer.tombs;
  for (size_t i = 0; i < comps.size(); ++i) {
    cur /= comps[i];
    auto st = lstat_opt(cur);
    if (!st) return TombState::kNone;
    if (is_tomb_marker(*st)) return i + 1 == comps.size() ? TombState::kSelf : TombState::kPrefix;
    if (!S_ISDIR(st->st_mode)) return TombState::kNone;
  }
  return TombState::kNone;
}

Resolution BranchStore::resolve_in(std::span<const Layer> layers, const RelPath& path) const {
  for (const Layer& layer : layers) {
    fs::path phys = path.under(layer.data);
    if (auto st = lstat_opt(phys)) {
      Resolution r;
      r.outcome = Resolution::Outcome::kFound;
      r.layer = layer.node->meta.id;
      r.physical = std::move(phys);
      r.kind = kind_of_mode(st->st_mode);
      return r;
    }
    if (layer.is_root()) break;
    if (tomb_state(layer, path) != TombState::kNone) {
      Resolution r;
      r.outcome = Resolution::Outcome::kTombstoned;
      r.layer = layer.node->meta.id;
      return r;
    }
  }
  return Resolution{};
}

bool BranchStore::visible_below(std::span<const Layer> layers, const RelPath& path) const {
  if (layers.size() < 2) return false;
  if (tomb_state(layers[0], path) == TombState::kPrefix) return false;
  return resolve_in(layers.subspan(1), path).found();
}

std::vector<DirEntry> BranchStore::list_in(std::span<const Layer> layers,
                                           const RelPath& dir) const {
  std::map<std::string, DirEntry> out;
  std::set<std::string, std::less<>> decided;
  for (const Layer& layer : layers) {
    fs::path data_dir = dir.under(layer.data);
    for_each_entry(data_dir, [&](std::string_view name, unsigned char d_type) {
      if (decided.insert(std::string(name)).second) {
        out.emplace(std::string(name),
                    DirEntry{std::string(name), kind_of_dtype(d_type, data_dir / name)});
      }
    });
    if (layer.is_root()) break;
    fs::path tomb_dir = dir.under(layer.tombs);
    for_each_entry(tomb_dir, [&](std::string_view name, unsigned char) {
      auto st = lstat_opt(tomb_dir / name);
      if (st && is_tomb_marker(*st)) decided.insert(std::string(name));
    });
    // A tombstone on the directory itself (or above it) makes this layer
    // opaque: nothing from farther layers shows through.
    if (tomb_state(layer, dir) != TombState::kNone) break;
  }
  std::vector<DirEntry> result;
  result.reserve(out.size());
  for (auto& [_, e] : out) result.push_back(std::move(e));
  return result;
}

Resolution BranchStore::resolve(const BranchId& branch, const RelPath& path) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_readable(n);
  return resolve_in(chain(n), path);
}

std::optional<struct stat> BranchStore::stat(const BranchId& branch, const RelPath& path) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_readable(n);
  auto r = resolve_in(chain(n), path);
  if (!r.found()) return std::nullopt;
  return lstat_opt(r.physical);
}

std::vector<DirEntry> BranchStore::list_dir(const BranchId& branch, const RelPath& dir) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_readable(n);
  auto layers = chain(n);
  auto r = resolve_in(layers, dir);
  if (!r.found()) throw BranchError(Errc::kNotFound, "no such directory '" + dir.str() + "'");
  if (r.kind != FileKind::kDirectory) {
    throw BranchError(Errc::kNotDirectory, "'" + dir.str() + "' is not a directory");
  }
  return list_in(layers, dir);
}

std::string BranchStore::read_file(const BranchId& branch, const RelPath& path,
                                   std::uint64_t offset, std::size_t size) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_readable(n);
  auto r = resolve_in(chain(n), path);
  if (!r.found()) throw BranchError(Errc::kNotFound, "no such file '" + path.str() + "'");
  if (r.kind == FileKind::kDirectory) {
    throw BranchError(Errc::kIsDirectory, "'" + path.str() + "' is a directory");
  }
  UniqueFd fd = posix::open_or_throw(r.physical, O_RDONLY);
  std::string out(size, '\0');
  size_t got = posix::pread_full(
      fd.get(), std::as_writable_bytes(std::span(out.data(), out.size())), offset);
  out.resize(got);
  return out;
}

std::string BranchStore::read_link(const BranchId& branch, const RelPath& path) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_readable(n);
  auto r = resolve_in(chain(n), path);
  if (!r.found()) throw BranchError(Errc::kNotFound, "no such file '" + path.str() + "'");
  if (r.kind != FileKind::kSymlink) {
    throw BranchError(Errc::kInvalidArgument, "'" + path.str() + "' is not a symlink");
  }
  std::string target(PATH_MAX, '\0');
  ssize_t len = ::readlink(r.physical.c_str(), target.data(), target.size());
  if (len < 0) throw_errno("readlink " + r.physical.string());
  target.resize(static_cast<size_t>(len));
  return target;
}

// ---------------------------------------------------------------------------
// Copy-up and mutations

void BranchStore::materialize_dirs(const Node& n, std::span<const Layer> layers,
                                   const RelPath& dir) {
  const Layer& own = layers[0];
  if (dir.is_root()) return;
  if (auto st = lstat_opt(dir.under(own.data)); st && S_ISDIR(st->st_mode)) return;
  RelPath prefix;
  for (auto comp : dir.components()) {
    prefix = prefix.join(comp);
    fs::path target = prefix.under(own.data);
    if (auto st = lstat_opt(target)) {
      if (!S_ISDIR(st->st_mode)) {
        throw BranchError(Errc::kNotDirectory, "'" + prefix.str() + "' is not a directory");
      }
      continue;
    }
    auto r = resolve_in(layers, prefix);
    if (!r.found()) throw BranchError(Errc::kNotFound, "no such directory '" + prefix.str() + "'");
    if (r.kind != FileKind::kDirectory) {
      throw BranchError(Errc::kNotDirectory, "'" + prefix.str() + "' is not a directory");
    }
    auto src = lstat_opt(r.physical);
    make_dir(target, src ? src->st_mode : 0755);
    if (src) set_path_times(target, *src);
  }
  (void)n;
}

fs::path BranchStore::copy_up_locked(const Node& n, std::span<const Layer> layers,
                                     const RelPath& path, CopyUpContent content) {
  auto r = resolve_in(layers, path);
  if (!r.found()) throw BranchError(Errc::kNotFound, "no such file '" + path.str() + "'");
  if (r.layer == n.meta.id) return r.physical;
  if (r.kind == FileKind::kSpecial) {
    throw BranchError(Errc::kUnsupported,
                      "special files cannot be copied into a branch: '" + path.str() + "'");
  }
  materialize_dirs(n, layers, path.parent());
  const fs::path dst = path.under(layers[0].data);
  auto src_st = lstat_opt(r.physical);
  if (!src_st) throw BranchError(Errc::kNotFound, "'" + path.str() + "' vanished");

  if (r.kind == FileKind::kDirectory) {
    make_dir(dst, src_st->st_mode);
    set_path_times(dst, *src_st);
    ++generation_;
    return dst;
  }

  const fs::path tmp = n.dir / "tmp" / std::to_string(n.tmp_counter.fetch_add(1));
  if (r.kind == FileKind::kSymlink) {
    duplicate_symlink(r.physical, tmp);
    set_path_times(tmp, *src_st);
  } else {
    UniqueFd out = posix::open_or_throw(tmp, O_WRONLY | O_CREAT | O_EXCL, 0600);
    if (content == CopyUpContent::kFull) {
      UniqueFd in = posix::open_or_throw(r.physical, O_RDONLY);
      posix::copy_contents(in.get(), out.get());
    }
    posix::copy_attrs(out.get(), *src_st);
  }
  if (::rename(tmp.c_str(), dst.c_str()) != 0) {
    int err = errno;
    ::unlink(tmp.c_str());
    throw_errno("rename into " + dst.string(), err);
  }
  ++generation_;
  return dst;
}

void BranchStore::deep_copy_up(const Node& n, std::span<const Layer> layers,
                               const RelPath& path) {
  auto phys = copy_up_locked(n, layers, path, CopyUpContent::kFull);
  auto st = lstat_opt(phys);
  if (!st || !S_ISDIR(st->st_mode)) return;
  for (const auto& e : list_in(layers, path)) deep_copy_up(n, layers, path.join(e.name));
}

void BranchStore::ensure_tomb_container(const Layer& layer, const RelPath& dir) {
  RelPath prefix;
  for (auto comp : dir.components()) {
    prefix = prefix.join(comp);
    fs::path p = prefix.under(layer.tombs);
    auto st = lstat_opt(p);
    if (st && S_ISDIR(st->st_mode)) continue;
    if (st) {
      // A sentinel file becomes a marker directory so it can hold children.
      if (::unlink(p.c_str()) != 0) throw_errno("unlink " + p.string());
      make_dir(p, 01755);
    } else {
      make_dir(p, 0755);
    }
  }
}

void BranchStore::place_tombstone(const Layer& layer, const RelPath& path) {
  ensure_tomb_container(layer, path.parent());
  UniqueFd fd = posix::open_or_throw(path.under(layer.tombs), O_WRONLY | O_CREAT, 0644);
}

void BranchStore::remove_locked(std::span<const Layer> layers, const RelPath& path) {
  const Layer& own = layers[0];
  remove_tree(path.under(own.data));
  if (own.is_root()) return;
  bool needed = visible_below(layers, path);
  remove_tree(path.under(own.tombs));
  if (needed) place_tombstone(own, path);
}

namespace {

void require_parent_dir(const Resolution& r, const RelPath& path) {
  if (!r.found()) {
    throw BranchError(Errc::kNotFound, "parent of '" + path.str() + "' does not exist");
  }
  if (r.kind != FileKind::kDirectory) {
    throw BranchError(Errc::kNotDirectory, "parent of '" + path.str() + "' is not a directory");
  }
}

void require_regular(const Resolution& r, const RelPath& path) {
  if (!r.found()) throw BranchError(Errc::kNotFound, "no such file '" + path.str() + "'");
  if (r.kind == FileKind::kDirectory) {
    throw BranchError(Errc::kIsDirectory, "'" + path.str() + "' is a directory");
  }
  if (r.kind != FileKind::kRegular) {
    throw BranchError(Errc::kInvalidArgument, "'" + path.str() + "' is not a regular file");
  }
}

}  // namespace

fs::path BranchStore::copy_up(const BranchId& branch, const RelPath& path,
                              CopyUpContent content) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  return copy_up_locked(n, chain(n), path, content);
}

std::size_t BranchStore::write_file(const BranchId& branch, const RelPath& path,
                                    std::uint64_t offset, std::span<const std::byte> bytes) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  auto layers = chain(n);
  require_regular(resolve_in(layers, path), path);
  auto phys = copy_up_locked(n, layers, path, CopyUpContent::kFull);
  UniqueFd fd = posix::open_or_throw(phys, O_WRONLY);
  posix::write_all(fd.get(), bytes, offset);
  return bytes.size();
}

fs::path BranchStore::create_file(const BranchId& branch, const RelPath& path, mode_t mode) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  if (path.is_root()) throw BranchError(Errc::kExists, "workspace root exists");
  auto layers = chain(n);
  require_parent_dir(resolve_in(layers, path.parent()), path);
  if (resolve_in(layers, path).found()) {
    throw BranchError(Errc::kExists, "'" + path.str() + "' exists");
  }
  materialize_dirs(n, layers, path.parent());
  fs::path dst = path.under(layers[0].data);
  UniqueFd fd = posix::open_or_throw(dst, O_WRONLY | O_CREAT | O_EXCL, 0600);
  if (::fchmod(fd.get(), mode & 07777) != 0) throw_errno("fchmod " + dst.string());
  ++generation_;
  return dst;
}

void BranchStore::mkdir(const BranchId& branch, const RelPath& path, mode_t mode) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  if (path.is_root()) throw BranchError(Errc::kExists, "workspace root exists");
  auto layers = chain(n);
  require_parent_dir(resolve_in(layers, path.parent()), path);
  if (resolve_in(layers, path).found()) {
    throw BranchError(Errc::kExists, "'" + path.str() + "' exists");
  }
  materialize_dirs(n, layers, path.parent());
  make_dir(path.under(layers[0].data), mode);
  ++generation_;
}

void BranchStore::symlink(const BranchId& branch, const std::string& target,
                          const RelPath& path) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  if (path.is_root()) throw BranchError(Errc::kExists, "workspace root exists");
  auto layers = chain(n);
  require_parent_dir(resolve_in(layers, path.parent()), path);
  if (resolve_in(layers, path).found()) {
    throw BranchError(Errc::kExists, "'" + path.str() + "' exists");
  }
  materialize_dirs(n, layers, path.parent());
  fs::path dst = path.under(layers[0].data);
  if (::symlink(target.c_str(), dst.c_str()) != 0) throw_errno("symlink " + dst.string());
  ++generation_;
}

void BranchStore::truncate(const BranchId& branch, const RelPath& path, std::uint64_t length) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  auto layers = chain(n);
  require_regular(resolve_in(layers, path), path);
  auto phys = copy_up_locked(n, layers, path,
                             length == 0 ? CopyUpContent::kEmpty : CopyUpContent::kFull);
  if (::truncate(phys.c_str(), static_cast<off_t>(length)) != 0) {
    throw_errno("truncate " + phys.string());
  }
}

void BranchStore::set_mode(const BranchId& branch, const RelPath& path, mode_t mode) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  auto phys = copy_up_locked(n, chain(n), path, CopyUpContent::kFull);
  auto st = lstat_opt(phys);
  if (st && S_ISLNK(st->st_mode)) return;  // symlink modes are meaningless on Linux
  if (::chmod(phys.c_str(), mode & 07777) != 0) throw_errno("chmod " + phys.string());
}

void BranchStore::set_times(const BranchId& branch, const RelPath& path,
                            std::optional<struct timespec> atime,
                            std::optional<struct timespec> mtime) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  auto phys = copy_up_locked(n, chain(n), path, CopyUpContent::kFull);
  struct timespec times[2];
  times[0] = atime.value_or(timespec{0, UTIME_OMIT});
  times[1] = mtime.value_or(timespec{0, UTIME_OMIT});
  if (::utimensat(AT_FDCWD, phys.c_str(), times, AT_SYMLINK_NOFOLLOW) != 0) {
    throw_errno("utimensat " + phys.string());
  }
}

void BranchStore::remove(const BranchId& branch, const RelPath& path) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  if (path.is_root()) throw BranchError(Errc::kInvalidArgument, "cannot delete the workspace root");
  auto layers = chain(n);
  if (!resolve_in(layers, path).found()) {
    throw BranchError(Errc::kNotFound, "no such file '" + path.str() + "'");
  }
  remove_locked(layers, path);
  ++generation_;
}

void BranchStore::rename(const BranchId& branch, const RelPath& src, const RelPath& dst) {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  check_mutable(n);
  std::lock_guard ml(n.mutate_mu);
  if (src.is_root() || dst.is_root()) {
    throw BranchError(Errc::kInvalidArgument, "cannot rename the workspace root");
  }
  auto layers = chain(n);
  auto rs = resolve_in(layers, src);
  if (!rs.found()) throw BranchError(Errc::kNotFound, "no such file '" + src.str() + "'");
  if (src == dst) return;
  if (src.is_ancestor_of(dst)) {
    throw BranchError(Errc::kInvalidArgument, "cannot move '" + src.str() + "' into itself");
  }
  require_parent_dir(resolve_in(layers, dst.parent()), dst);
  auto rd = resolve_in(layers, dst);
  if (rd.found()) {
    if (rs.is_dir() && !rd.is_dir()) {
      throw BranchError(Errc::kNotDirectory, "'" + dst.str() + "' is not a directory");
    }
    if (!rs.is_dir() && rd.is_dir()) {
      throw BranchError(Errc::kIsDirectory, "'" + dst.str() + "' is a directory");
    }
    if (rd.is_dir() && !list_in(layers, dst).empty()) {
      throw BranchError(Errc::kNotEmpty, "'" + dst.str() + "' is not empty");
    }
  }

  const Layer& own = layers[0];
  if (own.is_root()) {
    if (rd.is_dir()) remove_tree(dst.under(own.data));
    fs::path from = src.under(own.data), to = dst.under(own.data);
    if (::rename(from.c_str(), to.c_str()) != 0) throw_errno("rename " + from.string());
    ++generation_;
    return;
  }

  if (rs.is_dir()) {
    deep_copy_up(n, layers, src);
  } else {
    copy_up_locked(n, layers, src, CopyUpContent::kFull);
  }
  if (rd.found()) remove_locked(layers, dst);
  materialize_dirs(n, layers, dst.parent());
  fs::path from = src.under(own.data), to = dst.under(own.data);
  if (::rename(from.c_str(), to.c_str()) != 0) throw_errno("rename " + from.string());
  bool needed = visible_below(layers, src);
  remove_tree(src.under(own.tombs));
  if (needed) place_tombstone(own, src);
  ++generation_;
}

BranchStore::IoGuard BranchStore::guard_io(const BranchId& branch, Access access) const {
  std::shared_lock lk(mu_);
  const Node& n = live_node(branch);
  if (access == Access::kWrite) {
    check_mutable(n);
  } else {
    check_readable(n);
  }
  return IoGuard(std::move(lk));
}

// ---------------------------------------------------------------------------
// Branch lifecycle

void BranchStore::persist(const Node& n) const {
  nlohmann::json doc;
  doc["name"] = n.meta.id.str();
  doc["parent"] = n.meta.parent ? nlohmann::json(n.meta.parent->str()) : nlohmann::json();
  doc["state"] = std::string(state_name(effective_state(n)));
  doc["epoch"] = n.meta.epoch;
  doc["parent_epoch_at_create"] = n.meta.parent_epoch_at_create;
  doc["group_id"] = n.meta.group ? nlohmann::json(*n.meta.group) : nlohmann::json();
  fs::path dir = n.is_root() ? branch_dir(BranchId::root()) : n.dir;
  write_json_atomic(dir / kMetaFile, doc);
}

BranchId BranchStore::create_branch(const BranchId& parent, std::string_view name) {
  auto t0 = std::chrono::steady_clock::now();
  std::unique_lock lk(mu_);
  BranchId id = BranchId::make(name);
  if (find_live(id)) throw BranchError(Errc::kExists, "branch '" + id.str() + "' exists");
  Node& p = live_node(parent);
  if (is_stale(p)) throw BranchError(Errc::kStale, "parent '" + parent.str() + "' is stale");

  auto node = std::make_unique<Node>();
  node->meta.id = id;
  node->meta.parent = p.meta.id;
  node->meta.parent_epoch_at_create = p.meta.epoch;
  node->dir = branch_dir(id);
  remove_tree(node->dir);
  make_dir(node->dir, 0755);
  make_dir(node->dir / "data", 0755);
  make_dir(node->dir / "tombstones", 0755);
  make_dir(node->dir / "tmp", 0700);
  persist(*node);
  ++p.meta.children;
  retired_.erase(id);
  live_.emplace(id, std::move(node));
  ++generation_;
  record("create", t0);
  return id;
}

std::vector<BranchId> BranchStore::create_branch_group(const BranchId& parent,
                                                       std::span<const std::string> names) {
  auto t0 = std::chrono::steady_clock::now();
  std::unique_lock lk(mu_);
  if (names.empty()) throw BranchError(Errc::kInvalidArgument, "empty branch group");
  std::vector<BranchId> ids;
  std::set<BranchId> seen;
  for (const auto& name : names) {
    BranchId id = BranchId::make(name);
    if (!seen.insert(id).second) {
      throw BranchError(Errc::kExists, "duplicate branch name '" + name + "' in group");
    }
    if (find_live(id)) throw BranchError(Errc::kExists, "branch '" + name + "' exists");
    ids.push_back(std::move(id));
  }
  Node& p = live_node(parent);
  if (is_stale(p)) throw BranchError(Errc::kStale, "parent '" + parent.str() + "' is stale");

  GroupId gid = next_group_++;
  std::vector<BranchId> created;
  try {
    for (const auto& id : ids) {
      auto node = std::make_unique<Node>();
      node->meta.id = id;
      node->meta.parent = p.meta.id;
      node->meta.parent_epoch_at_create = p.meta.epoch;
      node->meta.group = gid;
      node->dir = branch_dir(id);
      remove_tree(node->dir);
      make_dir(node->dir, 0755);
      make_dir(node->dir / "data", 0755);
      make_dir(node->dir / "tombstones", 0755);
      make_dir(node->dir / "tmp", 0700);
      persist(*node);
      ++p.meta.children;
      retired_.erase(id);
      live_.emplace(id, std::move(node));
      created.push_back(id);
    }
  } catch (...) {
    for (const auto& id : created) {
      abort_locked(live_node(id));
      retired_.erase(id);
    }
    throw;
  }
  groups_[gid] = ExclusiveGroup{gid, ids, std::nullopt};
  ++generation_;
  record("create_group", t0);
  return ids;
}

CommitReport BranchStore::apply_delta(const Node& child, Node& parent) {
  const Layer src = layer_of(child);
  const auto parent_layers = chain(parent);
  const Layer& dst = parent_layers[0];
  CommitReport report;
  report.branch = child.meta.id;
  std::set<fs::path> dirs_to_sync;

  // Deletions first.
  auto apply_tombs = [&](auto& self, const RelPath& dir) -> void {
    fs::path tdir = dir.under(src.tombs);
    std::vector<std::string> names;
    for_each_entry(tdir, [&](std::string_view name, unsigned char) { names.emplace_back(name); });
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      RelPath p = dir.join(name);
      auto st = lstat_opt(tdir / name);
      if (!st) continue;
      if (is_tomb_marker(*st)) {
        fs::path target = p.under(dst.data);
        remove_tree(target);
        if (!dst.is_root()) {
          bool needed = visible_below(parent_layers, p);
          remove_tree(p.under(dst.tombs));
          if (needed) place_tombstone(dst, p);
        }
        dirs_to_sync.insert(target.parent_path());
        if (!lstat_opt(p.under(src.data))) ++report.tombstones_applied;
      }
      if (S_ISDIR(st->st_mode)) self(self, p);
    }
  };
  apply_tombs(apply_tombs, RelPath());

  // Then data, parents before children.
  auto apply_data = [&](auto& self, const RelPath& dir) -> void {
    fs::path sdir = dir.under(src.data);
    std::vector<std::string> names;
    for_each_entry(sdir, [&](std::string_view name, unsigned char) { names.emplace_back(name); });
    std::sort(names.begin(), names.end());
    for (const auto& name : names) {
      RelPath p = dir.join(name);
      fs::path from = sdir / name;
      fs::path to = p.under(dst.data);
      auto st = lstat_opt(from);
      if (!st) continue;
      auto existing = lstat_opt(to);
      ++report.files_applied;
      dirs_to_sync.insert(to.parent_path());
      if (S_ISDIR(st->st_mode)) {
        if (existing && !S_ISDIR(existing->st_mode)) {
          remove_tree(to);
          existing.reset();
        }
        if (!existing) make_dir(to, st->st_mode);
        else if (::chmod(to.c_str(), st->st_mode & 07777) != 0) throw_errno("chmod " + to.string());
        self(self, p);
        set_path_times(to, *st);
        continue;
      }
      if (existing) remove_tree(to);
      if (S_ISLNK(st->st_mode)) {
        duplicate_symlink(from, to);
        set_path_times(to, *st);
      } else if (S_ISREG(st->st_mode)) {
        UniqueFd in = posix::open_or_throw(from, O_RDONLY);
        UniqueFd out = posix::open_or_throw(to, O_WRONLY | O_CREAT | O_EXCL, 0600);
        report.bytes_copied += posix::copy_contents(in.get(), out.get());
        posix::copy_attrs(out.get(), *st);
        if (::fsync(out.get()) != 0) throw_errno("fsync " + to.string());
      } else {
        throw BranchError(Errc::kUnsupported, "special file in delta: '" + p.str() + "'");
      }
    }
  };
  apply_data(apply_data, RelPath());

  for (const auto& d : dirs_to_sync) {
    if (lstat_opt(d)) posix::fsync_path(d);
  }
  return report;
}

void BranchStore::finish_commit(Node& child, Node& parent) {
  child.meta.state = BranchState::kCommitted;
  persist(child);
  ::unlink((child.dir / kCommitMarker).c_str());
  --parent.meta.children;
  persist(parent);
  BranchMeta retired = snapshot(child);
  BranchId id = child.meta.id;
  fs::path dir = child.dir;
  live_.erase(id);
  retired_[id] = retired;
  remove_tree(dir);
  ++generation_;
}

CommitReport BranchStore::commit_branch(const BranchId& branch) {
  auto t0 = std::chrono::steady_clock::now();
  std::unique_lock lk(mu_);
  Node& c = live_node(branch);
  if (c.is_root()) throw BranchError(Errc::kInvalidArgument, "the root branch has no parent");
  if (is_stale(c)) throw BranchError(Errc::kStale, "branch '" + branch.str() + "' is stale");
  if (c.meta.children > 0) {
    throw BranchError(Errc::kFrozen, "branch '" + branch.str() + "' has live children");
  }
  Node& p = live_node(*c.meta.parent);

  ExclusiveGroup* group = nullptr;
  if (c.meta.group) {
    group = &groups_.at(*c.meta.group);
    if (group->winner && *group->winner != branch) {
      throw BranchError(Errc::kStale, "branch '" + branch.str() + "' lost the commit race to '" +
                                          group->winner->str() + "'");
    }
  }

  std::uint64_t parent_epoch = p.meta.epoch;
  nlohmann::json marker{{"parent", p.meta.id.str()}, {"parent_epoch", parent_epoch}};
  write_json_atomic(c.dir / kCommitMarker, marker);
  if (group) group->winner = branch;

  CommitReport report = apply_delta(c, p);
  for (const auto& [id, node] : live_) {
    if (node.get() != &c && node->meta.parent == p.meta.id && !is_stale(*node)) {
      ++report.siblings_invalidated;
    }
  }
  p.meta.epoch = parent_epoch + 1;
  persist(p);
  finish_commit(c, p);
  record("commit", t0);
  return report;
}

void BranchStore::abort_locked(Node& n) {
  std::vector<BranchId> kids;
  for (const auto& [id, node] : live_) {
    if (node->meta.parent == n.meta.id) kids.push_back(id);
  }
  for (const auto& k : kids) abort_locked(live_node(k));

  BranchId id = n.meta.id;
  Node& p = live_node(*n.meta.parent);
  // Move the branch aside atomically, then delete it.
  fs::path trash = store_dir_ / "trash" / (id.str() + "." + std::to_string(generation_.load()));
  if (::rename(n.dir.c_str(), trash.c_str()) != 0) throw_errno("rename " + n.dir.string());
  n.meta.state = BranchState::kAborted;
  n.meta.children = 0;
  --p.meta.children;
  retired_[id] = snapshot(n);
  live_.erase(id);
  ++generation_;
  remove_tree(trash);
}

void BranchStore::abort_branch(const BranchId& branch) {
  auto t0 = std::chrono::steady_clock::now();
  std::unique_lock lk(mu_);
  Node& n = live_node(branch);
  if (n.is_root()) throw BranchError(Errc::kInvalidArgument, "the root branch cannot be aborted");
  abort_locked(n);
  record("abort", t0);
}

BranchMeta BranchStore::branch_status(const BranchId& branch) const {
  std::shared_lock lk(mu_);
  if (const Node* n = find_live(branch)) return snapshot(*n);
  if (auto it = retired_.find(branch); it != retired_.end()) return it->second;
  throw BranchError(Errc::kNotFound, "no branch named '" + branch.str() + "'");
}

bool BranchStore::is_live(const BranchId& branch) const {
  std::shared_lock lk(mu_);
  return find_live(branch) != nullptr;
}

std::optional<ExclusiveGroup> BranchStore::group(GroupId id) const {
  std::shared_lock lk(mu_);
  auto it = groups_.find(id);
  if (it == groups_.end()) return std::nullopt;
  return it->second;
}

std::vector<BranchMeta> BranchStore::list_branches() const {
  std::shared_lock lk(mu_);
  std::map<BranchId, BranchMeta> all;
  for (const auto& [id, meta] : retired_) all[id] = meta;
  for (const auto& [id, node] : live_) all[id] = snapshot(*node);

  std::map<BranchId, std::vector<BranchId>> kids;
  for (const auto& [id, meta] : all) {
    if (meta.parent) kids[*meta.parent].push_back(id);
  }
  std::vector<BranchMeta> out;
  std::set<BranchId> emitted;
  auto visit = [&](auto& self, const BranchId& id) -> void {
    if (!emitted.insert(id).second) return;
    out.push_back(all.at(id));
    for (const auto& k : kids[id]) self(self, k);
  };
  visit(visit, BranchId::root());
  for (const auto& [id, meta] : all) {
    if (!emitted.count(id)) out.push_back(meta);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loading and crash recovery

void BranchStore::load() {
  fs::create_directories(store_dir_ / "branches" / BranchId::root().str());
  remove_tree(store_dir_ / "trash");
  fs::create_directories(store_dir_ / "trash");

  auto root = std::make_unique<Node>();
  root->meta.id = BranchId::root();
  fs::path root_meta = branch_dir(BranchId::root()) / kMetaFile;
  if (lstat_opt(root_meta)) {
    auto doc = nlohmann::json::parse(posix::read_file(root_meta));
    root->meta.epoch = doc.at("epoch").get<std::uint64_t>();
  }
  live_.emplace(BranchId::root(), std::move(root));

  for (const auto& entry : fs::directory_iterator(store_dir_ / "branches")) {
    std::string name = entry.path().filename().string();
    if (name == BranchId::kRootName) continue;
    fs::path meta_path = entry.path() / kMetaFile;
    if (!BranchId::valid_name(name) || !lstat_opt(meta_path)) {
      remove_tree(entry.path());  // interrupted create
      continue;
    }
    auto doc = nlohmann::json::parse(posix::read_file(meta_path));
    auto state = parse_state(doc.at("state").get<std::string>());
    if (!state || is_terminal(*state)) {
      remove_tree(entry.path());  // interrupted commit/abort cleanup
      continue;
    }
    auto node = std::make_unique<Node>();
    node->meta.id = BranchId::make(name);
    node->meta.parent = BranchId::parse(doc.at("parent").get<std::string>());
    node->meta.epoch = doc.at("epoch").get<std::uint64_t>();
    node->meta.parent_epoch_at_create = doc.at("parent_epoch_at_create").get<std::uint64_t>();
    if (!doc.at("group_id").is_null()) {
      node->meta.group = doc.at("group_id").get<GroupId>();
      next_group_ = std::max(next_group_, *node->meta.group + 1);
    }
    node->dir = entry.path();
    remove_tree(node->dir / "tmp");
    make_dir(node->dir / "tmp", 0700);
    live_.emplace(node->meta.id, std::move(node));
  }

  // Drop branches whose parent vanished.
  for (bool changed = true; changed;) {
    changed = false;
    for (auto it = live_.begin(); it != live_.end(); ++it) {
      const auto& meta = it->second->meta;
      if (meta.parent && !live_.count(*meta.parent)) {
        remove_tree(it->second->dir);
        live_.erase(it);
        changed = true;
        break;
      }
    }
  }
  for (auto& [id, node] : live_) {
    if (node->meta.parent) ++live_.at(*node->meta.parent)->meta.children;
    if (node->meta.group) {
      auto& g = groups_[*node->meta.group];
      g.id = *node->meta.group;
      g.members.push_back(id);
    }
  }

  // Replay interrupted commits; every step of apply_delta is idempotent.
  std::vector<BranchId> pending;
  for (const auto& [id, node] : live_) {
    if (!node->is_root() && lstat_opt(node->dir / kCommitMarker)) pending.push_back(id);
  }
  for (const auto& id : pending) {
    Node& c = live_node(id);
    auto marker = nlohmann::json::parse(posix::read_file(c.dir / kCommitMarker));
    Node& p = live_node(*c.meta.parent);
    if (c.meta.group) groups_[*c.meta.group].winner = id;
    apply_delta(c, p);
    p.meta.epoch = marker.at("parent_epoch").get<std::uint64_t>() + 1;
    persist(p);
    finish_commit(c, p);
  }
}

}  // namespace branchfs
