#include "branchfs/control.hpp"

#include <gtest/gtest.h>

#include "branchfs/error.hpp"
#include "branchfs/vfs/router.hpp"
#include "support/helpers.hpp"

namespace branchfs {
namespace {

using control::Command;
using control::Verb;
using testing::error_of;

TEST(ControlParse, AcceptsEveryVerb) {
  EXPECT_EQ(control::parse_line("create root b1"), (Command{Verb::kCreate, {"root", "b1"}}));
  EXPECT_EQ(control::parse_line("create . a b c\n"),
            (Command{Verb::kCreate, {".", "a", "b", "c"}}));
  EXPECT_EQ(control::parse_line("commit b1\n"), (Command{Verb::kCommit, {"b1"}}));
  EXPECT_EQ(control::parse_line("abort b1"), (Command{Verb::kAbort, {"b1"}}));
  EXPECT_EQ(control::parse_line("list\n"), (Command{Verb::kList, {}}));
}

TEST(ControlParse, RejectsMalformedLines) {
  for (const char* bad : {"", "\n", "fork root b1", "create root", "commit", "commit a b",
                          "abort", "list extra", "create root b\x01", "commit b\tc"}) {
    EXPECT_EQ(error_of([&] { control::parse_line(bad); }), Errc::kInvalidArgument) << bad;
  }
}

TEST(ControlParse, FormatRoundTrips) {
  for (const Command& c : {Command{Verb::kCreate, {".", "x"}}, Command{Verb::kCreate, {"p", "a", "b"}},
                           Command{Verb::kCommit, {"x"}}, Command{Verb::kAbort, {"y"}},
                           Command{Verb::kList, {}}}) {
    std::string line = control::format_line(c);
    ASSERT_TRUE(line.ends_with('\n'));
    EXPECT_EQ(control::parse_line(line), c);
  }
}

TEST(ControlParse, BufferNeedsTrailingNewline) {
  auto cmds = control::parse_buffer("create . a\ncommit a\n");
  ASSERT_EQ(cmds.size(), 2u);
  EXPECT_EQ(cmds[1], (Command{Verb::kCommit, {"a"}}));
  EXPECT_EQ(error_of([] { control::parse_buffer("commit a"); }), Errc::kInvalidArgument);
  EXPECT_EQ(error_of([] { control::parse_buffer("create . a\ncommit a"); }), Errc::kInvalidArgument);
}

TEST(ControlListing, FormatsRootWithDashParent) {
  BranchMeta root;
  BranchMeta child;
  child.id = BranchId::make("b1");
  child.parent = BranchId::root();
  child.state = BranchState::kStale;
  root.state = BranchState::kFrozen;
  root.epoch = 3;
  std::string text = control::format_listing({root, child});
  EXPECT_EQ(text, "root - Frozen 3\nb1 root Stale 0\n");
  auto rows = control::parse_listing(text);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0], (control::ListingRow{"root", "-", "Frozen", 3}));
  EXPECT_EQ(rows[1], (control::ListingRow{"b1", "root", "Stale", 0}));
  EXPECT_EQ(error_of([] { control::parse_listing("root -\n"); }), Errc::kInvalidArgument);
}

class ControlExecuteTest : public ::testing::Test {
 protected:
  void SetUp() override {
    std::filesystem::create_directories(tmp_ / "base");
    store_ = std::make_unique<BranchStore>(tmp_ / "base", tmp_ / "store");
  }
  void run(const std::string& line, const BranchId& def = BranchId::root()) {
    control::execute(*store_, control::parse_line(line), def);
  }
  testing::TempDir tmp_;
  std::unique_ptr<BranchStore> store_;
};

TEST_F(ControlExecuteTest, DotMeansDefaultBranch) {
  run("create . b1");
  run("create . b2", BranchId::make("b1"));
  EXPECT_EQ(*store_->branch_status(BranchId::make("b2")).parent, BranchId::make("b1"));
}

TEST_F(ControlExecuteTest, MultiNameCreateIsExclusiveGroup) {
  run("create root a b c");
  auto g = store_->branch_status(BranchId::make("a")).group;
  ASSERT_TRUE(g);
  EXPECT_EQ(store_->group(*g)->members.size(), 3u);
  run("commit b");
  EXPECT_EQ(error_of([&] { run("commit a"); }), Errc::kStale);
}

TEST_F(ControlExecuteTest, SingleNameCreateHasNoGroup) {
  run("create root solo");
  EXPECT_FALSE(store_->branch_status(BranchId::make("solo")).group);
  run("list");
  EXPECT_EQ(store_->list_branches().size(), 2u);
}

TEST(Router, RoutesMountRootControlAndBranches) {
  BranchId def = BranchId::make("main");
  auto r = vfs::route("", def, true);
  EXPECT_EQ(r.kind, vfs::RoutedPath::Kind::kMountRoot);
  r = vfs::route("/.branchfs_ctl", def, true);
  EXPECT_EQ(r.kind, vfs::RoutedPath::Kind::kControl);
  r = vfs::route(".branchfs_ctl", def, false);
  EXPECT_EQ(r.kind, vfs::RoutedPath::Kind::kBranch);
  EXPECT_EQ(r.branch, def);
  r = vfs::route("@b1", def, true);
  EXPECT_EQ(r.branch, BranchId::make("b1"));
  EXPECT_TRUE(r.via_at);
  EXPECT_TRUE(r.rel.is_root());
  r = vfs::route("/@b1/src/x.c", def, true);
  EXPECT_FALSE(r.via_at);
  EXPECT_EQ(r.rel.str(), "src/x.c");
  r = vfs::route("src/x.c", def, true);
  EXPECT_EQ(r.branch, def);
  EXPECT_EQ(vfs::route("@root/a", def, true).branch, BranchId::root());
  EXPECT_EQ(error_of([&] { vfs::route("@bad name", def, true); }), Errc::kNotFound);
}

TEST(Router, ReservedNames) {
  EXPECT_TRUE(vfs::reserved_at_root("@x", true));
  EXPECT_TRUE(vfs::reserved_at_root(".branchfs_ctl", true));
  EXPECT_FALSE(vfs::reserved_at_root(".branchfs_ctl", false));
  EXPECT_FALSE(vfs::reserved_at_root("x@", true));
}

}  // namespace
}  // namespace branchfs
