#include "support/helpers.hpp"

#include <sys/stat.h>
#include <unistd.h>

#include <cstdlib>

#include "branchfs/posix.hpp"

namespace branchfs::testing {

namespace fs = std::filesystem;

TempDir::TempDir(const std::string& tag) {
  std::string tmpl = (fs::temp_directory_path() / (tag + "-XXXXXX")).string();
  if (::mkdtemp(tmpl.data()) == nullptr) throw_errno("mkdtemp");
  path_ = tmpl;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

namespace {

void walk_view(const BranchStore& store, const BranchId& branch, const RelPath& dir,
               TreeSnapshot& out) {
  for (const auto& e : store.list_dir(branch, dir)) {
    RelPath p = dir.join(e.name);
    auto st = store.stat(branch, p);
    if (!st) throw BranchError(Errc::kNotFound, "listed entry vanished: " + p.str());
    TreeEntry te;
    te.kind = kind_of_mode(st->st_mode);
    te.mode = st->st_mode & 07777;
    if (te.kind == FileKind::kRegular) {
      te.content = store.read_file(branch, p, 0, static_cast<size_t>(st->st_size) + 1);
    } else if (te.kind == FileKind::kSymlink) {
      te.content = store.read_link(branch, p);
      te.mode = 0;
    }
    bool is_dir = te.kind == FileKind::kDirectory;
    out.emplace(p.str(), std::move(te));
    if (is_dir) walk_view(store, branch, p, out);
  }
}

}  // namespace

TreeSnapshot snapshot_view(const BranchStore& store, const BranchId& branch) {
  TreeSnapshot out;
  walk_view(store, branch, RelPath(), out);
  return out;
}

std::optional<Errc> error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const BranchError& e) {
    return e.code();
  }
  return std::nullopt;
}

void write_text(const fs::path& p, const std::string& text, unsigned mode) {
  posix::write_file(p, text, mode);
  ::chmod(p.c_str(), mode);
}

std::string read_text(const fs::path& p) { return posix::read_file(p); }

void write_random_tree(const fs::path& root, std::mt19937_64& rng, int files) {
  static const char* kNames[] = {"a", "b", "c", "src", "lib", "docs"};
  static const unsigned kModes[] = {0644, 0600, 0755};
  std::uniform_int_distribution<int> pick(0, 5), depth(0, 2), len(0, 300), mode(0, 2);
  for (int i = 0; i < files; ++i) {
    fs::path dir = root;
    for (int d = depth(rng); d > 0; --d) {
      dir /= std::string("d") + kNames[pick(rng)];
      fs::create_directories(dir);
    }
    std::string content(static_cast<size_t>(len(rng)), '\0');
    for (auto& c : content) c = static_cast<char>('a' + rng() % 26);
    write_text(dir / (std::string(kNames[pick(rng)]) + std::to_string(i) + ".txt"), content,
               kModes[mode(rng)]);
  }
  std::error_code ec;
  fs::create_symlink("a0.txt", root / "link", ec);
}

}  // namespace branchfs::testing
