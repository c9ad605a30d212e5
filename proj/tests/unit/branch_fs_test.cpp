#include "branchfs/vfs/branch_fs.hpp"

#include <fcntl.h>
#include <gtest/gtest.h>

#include <cstring>
#include <random>

#include "branchfs/control.hpp"
#include "branchfs/error.hpp"
#include "branchfs/ioctl.h"
#include "support/helpers.hpp"

namespace branchfs::vfs {
namespace {

namespace fs = std::filesystem;
using testing::read_text;
using testing::TempDir;
using testing::write_text;

int errno_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const BranchError& e) {
    return e.to_errno();
  }
  return 0;
}

std::span<const std::byte> bytes(std::string_view s) { return std::as_bytes(std::span(s)); }

class BranchFsTest : public ::testing::Test {
 protected:
  void SetUp() override {
    fs::create_directories(tmp_ / "base/src");
    write_text(tmp_ / "base/a.txt", "alpha\n");
    write_text(tmp_ / "base/src/main.c", "int main(){}\n");
    store_ = std::make_unique<BranchStore>(tmp_ / "base", tmp_ / "store");
    fsys_ = make(256);
  }

  std::unique_ptr<BranchFs> make(std::size_t cache) {
    MountConfig cfg;
    cfg.base_dir = tmp_ / "base";
    cfg.mountpoint = tmp_ / "mnt";
    cfg.store_dir = tmp_ / "store";
    cfg.fd_cache_capacity = cache;
    return std::make_unique<BranchFs>(*store_, cfg);
  }

  void ctl(BranchFs& f, const std::string& text) {
    auto fh = f.open(".branchfs_ctl", O_WRONLY);
    f.write(fh, 0, bytes(text));
    f.release(fh);
  }

  std::string read_all(BranchFs& f, const std::string& path) {
    auto fh = f.open(path, O_RDONLY);
    std::string out;
    std::vector<std::byte> buf(7);  // odd size exercises offsets
    for (std::uint64_t off = 0;;) {
      size_t n = f.read(fh, off, buf);
      if (n == 0) break;
      out.append(reinterpret_cast<const char*>(buf.data()), n);
      off += n;
    }
    f.release(fh);
    return out;
  }

  void put(BranchFs& f, const std::string& path, std::string_view text) {
    auto fh = f.create(path, 0644, O_WRONLY | O_TRUNC);
    f.write(fh, 0, bytes(text));
    f.release(fh);
  }

  TempDir tmp_;
  std::unique_ptr<BranchStore> store_;
  std::unique_ptr<BranchFs> fsys_;
};

bool has(const std::vector<DirEntry>& v, const std::string& name) {
  return std::any_of(v.begin(), v.end(), [&](const DirEntry& e) { return e.name == name; });
}

TEST_F(BranchFsTest, RootListsDefaultEntriesBranchesAndControl) {
  ctl(*fsys_, "create . b1\n");
  auto entries = fsys_->readdir("");
  EXPECT_TRUE(has(entries, "a.txt"));
  EXPECT_TRUE(has(entries, "src"));
  EXPECT_TRUE(has(entries, "@root"));
  EXPECT_TRUE(has(entries, "@b1"));
  EXPECT_TRUE(has(entries, ".branchfs_ctl"));
  ctl(*fsys_, "abort b1\n");
  EXPECT_FALSE(has(fsys_->readdir(""), "@b1"));
}

TEST_F(BranchFsTest, BaseEntriesWithReservedNamesAreHidden) {
  write_text(tmp_ / "base/@sneaky", "x");
  write_text(tmp_ / "base/.branchfs_ctl", "x");
  auto entries = fsys_->readdir("");
  EXPECT_FALSE(has(entries, "@sneaky"));
  EXPECT_EQ(std::count_if(entries.begin(), entries.end(),
                          [](const DirEntry& e) { return e.name == ".branchfs_ctl"; }),
            1);
}

TEST_F(BranchFsTest, ControlReadMatchesStoreListing) {
  ctl(*fsys_, "create . x y\n");
  auto fh = fsys_->open(".branchfs_ctl", O_RDONLY);
  std::vector<std::byte> buf(4096);
  size_t n = fsys_->read(fh, 0, buf);
  fsys_->release(fh);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(buf.data()), n),
            control::format_listing(store_->list_branches()));
  EXPECT_TRUE(S_ISREG(fsys_->getattr(".branchfs_ctl").st_mode));
}

TEST_F(BranchFsTest, ControlErrorsCarryErrno) {
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "bogus\n"); }), EINVAL);
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "create . nonl"); }), EINVAL);
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "commit ghost\n"); }), ENOENT);
  ctl(*fsys_, "create . a b\n");
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "create . a\n"); }), EEXIST);
  ctl(*fsys_, "create a a1\n");
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "commit a\n"); }), EROFS);
  ctl(*fsys_, "commit b\n");
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "commit a1\n"); }), ESTALE);
  EXPECT_EQ(errno_of([&] { ctl(*fsys_, "commit b\n"); }), EINVAL);
}

TEST_F(BranchFsTest, WritesInBranchLeaveBaseUntouched) {
  ctl(*fsys_, "create . b1\n");
  auto fh = fsys_->open("@b1/a.txt", O_WRONLY | O_TRUNC);
  fsys_->write(fh, 0, bytes("changed\n"));
  fsys_->release(fh);
  put(*fsys_, "@b1/src/new.c", "new\n");
  EXPECT_EQ(read_all(*fsys_, "@b1/a.txt"), "changed\n");
  EXPECT_EQ(read_all(*fsys_, "a.txt"), "alpha\n");
  EXPECT_EQ(read_text(tmp_ / "base/a.txt"), "alpha\n");
  EXPECT_FALSE(fs::exists(tmp_ / "base/src/new.c"));
  ctl(*fsys_, "commit b1\n");
  EXPECT_EQ(read_text(tmp_ / "base/a.txt"), "changed\n");
  EXPECT_EQ(read_text(tmp_ / "base/src/new.c"), "new\n");
}

TEST_F(BranchFsTest, NamespaceErrors) {
  ctl(*fsys_, "create . b1\n");
  EXPECT_EQ(errno_of([&] { fsys_->rename("@b1/a.txt", "@root/z.txt"); }), EXDEV);
  EXPECT_EQ(errno_of([&] { fsys_->unlink(".branchfs_ctl"); }), EPERM);
  EXPECT_EQ(errno_of([&] { fsys_->rmdir("@b1"); }), EPERM);
  EXPECT_EQ(errno_of([&] { fsys_->mkdir("@b1", 0755); }), EEXIST);
  EXPECT_EQ(errno_of([&] { fsys_->mkdir("@new", 0755); }), EPERM);
  EXPECT_EQ(errno_of([&] { fsys_->unlink("@b1/src"); }), EISDIR);
  EXPECT_EQ(errno_of([&] { fsys_->rmdir("@b1/a.txt"); }), ENOTDIR);
  EXPECT_EQ(errno_of([&] { fsys_->rmdir("@b1/src"); }), ENOTEMPTY);
  EXPECT_EQ(errno_of([&] { fsys_->mknod("@b1/fifo", S_IFIFO | 0644); }), EOPNOTSUPP);
  EXPECT_EQ(errno_of([&] { fsys_->rename("@b1/a.txt", "@b1/src/main.c", RENAME_NOREPLACE); }),
            EEXIST);
  EXPECT_EQ(errno_of([&] { fsys_->getattr("@ghost"); }), ENOENT);
  BranchFs::SetAttr chown;
  chown.uid = ::getuid() + 1;
  EXPECT_EQ(errno_of([&] { fsys_->setattr("@b1/a.txt", chown, std::nullopt); }), EPERM);
}

TEST_F(BranchFsTest, RenameMovesOpenHandles) {
  ctl(*fsys_, "create . b1\n");
  auto fh = fsys_->open("@b1/a.txt", O_RDWR);
  fsys_->rename("@b1/a.txt", "@b1/moved.txt");
  fsys_->write(fh, 0, bytes("ALPHA"));
  fsys_->release(fh);
  EXPECT_EQ(read_all(*fsys_, "@b1/moved.txt"), "ALPHA\n");
  EXPECT_EQ(errno_of([&] { fsys_->getattr("@b1/a.txt"); }), ENOENT);
}

TEST_F(BranchFsTest, ReadHandleSeesCopyUpAfterWrite) {
  ctl(*fsys_, "create . b1\n");
  auto rd = fsys_->open("@b1/a.txt", O_RDONLY);
  auto wr = fsys_->open("@b1/a.txt", O_WRONLY);
  fsys_->write(wr, 0, bytes("omega\n"));
  fsys_->release(wr);
  std::vector<std::byte> buf(64);
  size_t n = fsys_->read(rd, 0, buf);
  fsys_->release(rd);
  EXPECT_EQ(std::string(reinterpret_cast<const char*>(buf.data()), n), "omega\n");
}

TEST_F(BranchFsTest, FdCacheOnAndOffReturnIdenticalBytes) {
  std::mt19937_64 rng(11);
  ctl(*fsys_, "create . b1\n");
  for (int i = 0; i < 40; ++i) {
    std::string body(static_cast<size_t>(rng() % 5000), 'x');
    for (auto& c : body) c = static_cast<char>('a' + rng() % 26);
    put(*fsys_, "@b1/f" + std::to_string(i), body);
  }
  auto cached = make(4);
  auto uncached = make(0);
  std::vector<BranchFs::Fh> a, b;
  for (int i = 0; i < 40; ++i) {
    a.push_back(cached->open("@b1/f" + std::to_string(i), O_RDONLY));
    b.push_back(uncached->open("@b1/f" + std::to_string(i), O_RDONLY));
  }
  EXPECT_LE(cached->cached_fds(), 4u);
  EXPECT_EQ(uncached->cached_fds(), 0u);
  for (int round = 0; round < 3; ++round) {
    for (int i = 0; i < 40; ++i) {
      std::vector<std::byte> x(6000), y(6000);
      std::uint64_t off = rng() % 100;
      size_t nx = cached->read(a[static_cast<size_t>(i)], off, x);
      size_t ny = uncached->read(b[static_cast<size_t>(i)], off, y);
      ASSERT_EQ(nx, ny);
      ASSERT_EQ(0, std::memcmp(x.data(), y.data(), nx));
    }
  }
  for (auto fh : a) cached->release(fh);
  for (auto fh : b) uncached->release(fh);
  EXPECT_EQ(cached->cached_fds(), 0u);
}

TEST_F(BranchFsTest, OpenHandleOfLosingSiblingGetsStale) {
  ctl(*fsys_, "create . w l\n");
  auto fh = fsys_->open("@l/a.txt", O_RDONLY);
  auto wfh = fsys_->open("@l/src/main.c", O_WRONLY);
  ctl(*fsys_, "commit w\n");
  std::vector<std::byte> buf(16);
  EXPECT_EQ(errno_of([&] { fsys_->read(fh, 0, buf); }), ESTALE);
  EXPECT_EQ(errno_of([&] { fsys_->write(wfh, 0, bytes("x")); }), ESTALE);
  EXPECT_EQ(errno_of([&] { fsys_->open("@l/a.txt", O_RDONLY); }), ESTALE);
  fsys_->release(fh);
  fsys_->release(wfh);
}

TEST_F(BranchFsTest, IoctlCreateCommitAbort) {
  std::vector<std::byte> none;
  int n = fsys_->ioctl("a.txt", FS_IOC_BRANCH_CREATE, none);
  ASSERT_GT(n, 0);
  std::string name = "ioc-" + std::to_string(n);
  EXPECT_TRUE(store_->is_live(BranchId::make(name)));

  branchfs_ioc_name out{};
  auto span = std::as_writable_bytes(std::span(&out, 1));
  int m = fsys_->ioctl("@" + name, FS_IOC_BRANCH_CREATE_NAMED, span);
  EXPECT_EQ(std::string(out.name), "ioc-" + std::to_string(m));
  EXPECT_EQ(*store_->branch_status(BranchId::make(out.name)).parent, BranchId::make(name));

  EXPECT_EQ(errno_of([&] { fsys_->ioctl("@" + name, FS_IOC_BRANCH_COMMIT, none); }), EROFS);
  EXPECT_EQ(fsys_->ioctl("@" + std::string(out.name), FS_IOC_BRANCH_ABORT, none), 0);
  put(*fsys_, "@" + name + "/via-ioctl", "1");
  EXPECT_EQ(fsys_->ioctl("@" + name + "/via-ioctl", FS_IOC_BRANCH_COMMIT, none), 0);
  EXPECT_TRUE(fs::exists(tmp_ / "base/via-ioctl"));

  EXPECT_EQ(errno_of([&] { fsys_->ioctl("a.txt", _IO('x', 0), none); }), ENOTTY);
  EXPECT_EQ(errno_of([&] { fsys_->ioctl("a.txt", _IO('b', 9), none); }), EOPNOTSUPP);
  EXPECT_EQ(errno_of([&] { fsys_->ioctl("a.txt", FS_IOC_BRANCH_COMMIT, none); }), EINVAL);
}

TEST_F(BranchFsTest, DefaultBranchIsShownAtMountRoot) {
  ctl(*fsys_, "create . feature\n");
  put(*fsys_, "@feature/only-here", "f");
  MountConfig cfg = fsys_->config();
  cfg.default_branch = BranchId::make("feature");
  BranchFs alt(*store_, cfg);
  EXPECT_TRUE(has(alt.readdir(""), "only-here"));
  EXPECT_FALSE(has(fsys_->readdir(""), "only-here"));
  // "." in the control protocol is the mount's default branch.
  auto fh = alt.open(".branchfs_ctl", O_WRONLY);
  alt.write(fh, 0, bytes("create . sub\n"));
  alt.release(fh);
  EXPECT_EQ(*store_->branch_status(BranchId::make("sub")).parent, BranchId::make("feature"));
}

}  // namespace
}  // namespace branchfs::vfs
