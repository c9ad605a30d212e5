#include <dirent.h>
#include <fcntl.h>
#include <gtest/gtest.h>
#include <sys/ioctl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <cstring>
#include <fstream>
#include <random>
#include <set>

#include "branchfs/ioctl.h"
#include "branchfs/posix.hpp"
#include "branchfs/tree_snapshot.hpp"
#include "support/helpers.hpp"
#include "support/mount.hpp"

namespace branchfs {
namespace {

namespace fs = std::filesystem;
using testing::read_text;
using testing::ScopedMount;
using testing::TempDir;
using testing::write_text;

class MountTest : public ::testing::TestWithParam<std::size_t> {
 protected:
  void SetUp() override {
    fs::create_directories(tmp_ / "base/src/lib");
    write_text(tmp_ / "base/a.txt", "alpha\n");
    write_text(tmp_ / "base/src/main.c", "int main(void) { return 0; }\n", 0755);
    write_text(tmp_ / "base/src/lib/util.c", "int util;\n");
    fs::create_symlink("src/main.c", tmp_ / "base/link");
    m_ = std::make_unique<ScopedMount>(tmp_.path(), GetParam());
    if (!m_->ok()) GTEST_SKIP() << "cannot mount: " << m_->why();
  }
  void TearDown() override { m_.reset(); }

  fs::path mnt() const { return m_->mnt(); }

  TempDir tmp_;
  std::unique_ptr<ScopedMount> m_;
};

TEST_P(MountTest, RootShowsBaseBranchesAndControl) {
  ASSERT_EQ(m_->control("create . b1\n"), 0);
  std::set<std::string> names;
  for (const auto& e : fs::directory_iterator(mnt())) names.insert(e.path().filename());
  EXPECT_EQ(names, (std::set<std::string>{".branchfs_ctl", "@b1", "@root", "a.txt", "link", "src"}));
  EXPECT_EQ(read_text(mnt() / "@b1/src/main.c"), "int main(void) { return 0; }\n");
  EXPECT_EQ(fs::read_symlink(mnt() / "@b1/link"), "src/main.c");
  EXPECT_EQ(fs::status(mnt() / "@b1/src/main.c").permissions() & fs::perms::owner_exec,
            fs::perms::owner_exec);
}

TEST_P(MountTest, ControlWriteErrorsReachTheCaller) {
  EXPECT_EQ(m_->control("commit ghost\n"), ENOENT);
  EXPECT_EQ(m_->control("frobnicate\n"), EINVAL);
  EXPECT_EQ(m_->control("create . nonl"), EINVAL);
  ASSERT_EQ(m_->control("create . w l\n"), 0);
  EXPECT_EQ(m_->control("create . w\n"), EEXIST);
  ASSERT_EQ(m_->control("commit w\n"), 0);
  EXPECT_EQ(m_->control("commit l\n"), ESTALE);
  EXPECT_EQ(read_text(m_->ctl()), "root - Frozen 1\nl root Stale 0\nw root Committed 0\n");
}

TEST_P(MountTest, ShellStyleEditsStayInBranchUntilCommit) {
  ASSERT_EQ(m_->control("create . b1\n"), 0);
  fs::path v = mnt() / "@b1";
  { std::ofstream(v / "a.txt", std::ios::app) << "appended\n"; }
  fs::create_directories(v / "build/obj");
  fs::copy(v / "src", v / "build/src-copy", fs::copy_options::recursive);
  fs::rename(v / "src/lib", v / "src/library");
  fs::remove(v / "link");
  EXPECT_EQ(read_text(tmp_ / "base/a.txt"), "alpha\n");
  EXPECT_TRUE(fs::exists(tmp_ / "base/src/lib/util.c"));
  EXPECT_EQ(read_text(mnt() / "a.txt"), "alpha\n");

  auto before = snapshot_directory(v);
  ASSERT_EQ(m_->control("commit b1\n"), 0);
  EXPECT_EQ(diff_snapshots(before, snapshot_directory(tmp_ / "base")), "");
  EXPECT_FALSE(fs::exists(mnt() / "@b1"));
}

TEST_P(MountTest, InodeNumbersAgreeBetweenStatAndReaddir) {
  ASSERT_EQ(m_->control("create . b1\n"), 0);
  fs::path dir = mnt() / "@b1/src";
  DIR* d = ::opendir(dir.c_str());
  ASSERT_NE(d, nullptr);
  int checked = 0;
  while (auto* e = ::readdir(d)) {
    std::string name = e->d_name;
    if (name == "." || name == "..") continue;
    struct stat st {};
    ASSERT_EQ(::lstat((dir / name).c_str(), &st), 0);
    EXPECT_EQ(st.st_ino, e->d_ino) << name;
    ++checked;
  }
  ::closedir(d);
  EXPECT_EQ(checked, 2);
  struct stat a {}, b {};
  ::stat((mnt() / "@b1/a.txt").c_str(), &a);
  { std::ofstream(mnt() / "@b1/a.txt", std::ios::app) << "x"; }
  ::stat((mnt() / "@b1/a.txt").c_str(), &b);
  EXPECT_EQ(a.st_ino, b.st_ino);
}

TEST_P(MountTest, UnlinkedOpenFileStaysReadable) {
  ASSERT_EQ(m_->control("create . b1\n"), 0);
  fs::path p = mnt() / "@b1/a.txt";
  int fd = ::open(p.c_str(), O_RDONLY);
  ASSERT_GE(fd, 0);
  ASSERT_EQ(::unlink(p.c_str()), 0);
  struct stat st {};
  EXPECT_EQ(::fstat(fd, &st), 0);
  char buf[16] = {};
  EXPECT_EQ(::pread(fd, buf, sizeof buf, 0), 6);
  EXPECT_STREQ(buf, "alpha\n");
  ::close(fd);
  EXPECT_FALSE(fs::exists(p));
  EXPECT_TRUE(fs::exists(mnt() / "a.txt"));
}

TEST_P(MountTest, LargeFileRoundTrip) {
  ASSERT_EQ(m_->control("create . b1\n"), 0);
  std::string data(3 * 1024 * 1024 + 17, '\0');
  std::mt19937_64 rng(3);
  for (auto& c : data) c = static_cast<char>(rng());
  write_text(mnt() / "@b1/big.bin", data);
  EXPECT_EQ(read_text(mnt() / "@b1/big.bin"), data);
  EXPECT_EQ(fs::file_size(mnt() / "@b1/big.bin"), data.size());
  fs::resize_file(mnt() / "@b1/big.bin", 100);
  EXPECT_EQ(read_text(mnt() / "@b1/big.bin"), data.substr(0, 100));
}

TEST_P(MountTest, LosingSiblingOpenFileGetsStale) {
  ASSERT_EQ(m_->control("create . w l\n"), 0);
  int fd = ::open((mnt() / "@l/a.txt").c_str(), O_RDWR);
  ASSERT_GE(fd, 0);
  ASSERT_EQ(m_->control("commit w\n"), 0);
  char c;
  EXPECT_EQ(::pread(fd, &c, 1, 0), -1);
  EXPECT_EQ(errno, ESTALE);
  EXPECT_EQ(::pwrite(fd, "x", 1, 0), -1);
  EXPECT_EQ(errno, ESTALE);
  ::close(fd);
  EXPECT_EQ(::open((mnt() / "@l/new").c_str(), O_CREAT | O_WRONLY, 0644), -1);
  EXPECT_EQ(errno, ESTALE);
}

TEST_P(MountTest, FrozenParentRejectsWritesButServesReads) {
  ASSERT_EQ(m_->control("create . p\n"), 0);
  ASSERT_EQ(m_->control("create p c\n"), 0);
  EXPECT_EQ(read_text(mnt() / "@p/a.txt"), "alpha\n");
  EXPECT_EQ(::open((mnt() / "@p/a.txt").c_str(), O_WRONLY), -1);
  EXPECT_EQ(errno, EROFS);
  EXPECT_EQ(::mkdir((mnt() / "@p/d").c_str(), 0755), -1);
  EXPECT_EQ(errno, EROFS);
}

TEST_P(MountTest, IoctlsThroughRealDescriptors) {
  int fd = ::open((mnt() / "a.txt").c_str(), O_RDONLY);
  ASSERT_GE(fd, 0);
  int n = ::ioctl(fd, FS_IOC_BRANCH_CREATE);
  ASSERT_GT(n, 0);
  std::string name = "ioc-" + std::to_string(n);
  EXPECT_TRUE(fs::is_directory(mnt() / ("@" + name)));

  branchfs_ioc_name out{};
  int m = ::ioctl(fd, FS_IOC_BRANCH_CREATE_NAMED, &out);
  EXPECT_EQ(std::string(out.name), "ioc-" + std::to_string(m));

  EXPECT_EQ(::ioctl(fd, _IO('x', 1)), -1);
  EXPECT_EQ(errno, ENOTTY);
  EXPECT_EQ(::ioctl(fd, _IO('b', 7)), -1);
  EXPECT_EQ(errno, EOPNOTSUPP);
  ::close(fd);

  int dfd = ::open((mnt() / ("@" + name)).c_str(), O_RDONLY | O_DIRECTORY);
  ASSERT_GE(dfd, 0);
  write_text(mnt() / ("@" + name) / "from-ioctl", "1");
  EXPECT_EQ(::ioctl(dfd, FS_IOC_BRANCH_COMMIT), 0);
  ::close(dfd);
  EXPECT_EQ(read_text(tmp_ / "base/from-ioctl"), "1");

  // The other child of root was forked before that commit.
  int sfd = ::open((mnt() / ("@" + std::string(out.name))).c_str(), O_RDONLY | O_DIRECTORY);
  if (sfd >= 0) {
    EXPECT_EQ(::ioctl(sfd, FS_IOC_BRANCH_COMMIT), -1);
    EXPECT_EQ(errno, ESTALE);
    EXPECT_EQ(::ioctl(sfd, FS_IOC_BRANCH_ABORT), 0);
    ::close(sfd);
  } else {
    EXPECT_EQ(errno, ESTALE);
  }
}

INSTANTIATE_TEST_SUITE_P(FdCache, MountTest, ::testing::Values(256u, 0u),
                         [](const auto& info) {
                           return info.param ? std::string("Cached") : std::string("Uncached");
                         });

}  // namespace
}  // namespace branchfs
