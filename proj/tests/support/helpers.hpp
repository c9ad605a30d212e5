#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>

#include "branchfs/branch_store.hpp"
#include "branchfs/error.hpp"
#include "branchfs/tree_snapshot.hpp"

namespace branchfs::testing {

/// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "branchfs-test");
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

/// Walks a branch's visible tree through the public store API.
TreeSnapshot snapshot_view(const BranchStore& store, const BranchId& branch);

/// Runs fn and returns the BranchError code it threw, if any.
std::optional<Errc> error_of(const std::function<void()>& fn);

/// Writes a small random tree (dirs, files, a symlink) under root.
void write_random_tree(const std::filesystem::path& root, std::mt19937_64& rng,
                       int files = 20);

void write_text(const std::filesystem::path& p, const std::string& text, unsigned mode = 0644);
std::string read_text(const std::filesystem::path& p);

}  // namespace branchfs::testing
