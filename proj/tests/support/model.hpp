#pragma once

// Reference model for the branch store: every branch owns a full deep copy
// of its visible tree. Fork copies the parent's map, commit replaces the
// parent's map and marks siblings stale, abort drops the map. It shares no
// code with the store beyond the TreeSnapshot value type.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "branchfs/error.hpp"
#include "branchfs/tree_snapshot.hpp"

namespace branchfs::testing {

using MaybeErr = std::optional<Errc>;

/// Visible tree of one branch with POSIX-ish operations.
class ModelTree {
 public:
  TreeSnapshot entries;  // "" (the root directory) is implicit

  bool exists(const std::string& p) const { return p.empty() || entries.count(p) > 0; }
  bool is_dir(const std::string& p) const;
  std::vector<std::string> children(const std::string& dir) const;

  MaybeErr create_file(const std::string& p, unsigned mode);
  MaybeErr mkdir(const std::string& p, unsigned mode);
  MaybeErr write(const std::string& p, std::uint64_t offset, const std::string& data);
  MaybeErr truncate(const std::string& p, std::uint64_t len);
  MaybeErr set_mode(const std::string& p, unsigned mode);
  MaybeErr remove(const std::string& p);
  MaybeErr rename(const std::string& src, const std::string& dst);

 private:
  MaybeErr check_new_entry(const std::string& p) const;
  void erase_subtree(const std::string& p);
};

class ReferenceModel {
 public:
  struct Branch {
    std::string parent;  // empty for root
    ModelTree tree;
    bool live = true;
    bool stale = false;  // directly invalidated by a sibling's commit
    int children = 0;
    std::optional<int> group;
  };

  explicit ReferenceModel(TreeSnapshot base);

  MaybeErr fork(const std::string& parent, const std::string& name);
  MaybeErr fork_group(const std::string& parent, const std::vector<std::string>& names);
  MaybeErr commit(const std::string& name);
  MaybeErr abort(const std::string& name);

  /// Checks that `name` may be mutated; returns the tree on success.
  MaybeErr writable(const std::string& name, ModelTree** tree);
  MaybeErr readable(const std::string& name) const;

  bool is_stale(const std::string& name) const;
  bool is_live(const std::string& name) const;
  int depth(const std::string& name) const;
  std::vector<std::string> live_branches() const;
  const Branch& branch(const std::string& name) const { return branches_.at(name); }

 private:
  MaybeErr lookup(const std::string& name) const;
  void abort_rec(const std::string& name);

  std::map<std::string, Branch> branches_;
  std::map<int, std::optional<std::string>> winners_;
  int next_group_ = 1;
};

}  // namespace branchfs::testing
