#include "support/model.hpp"

#include <algorithm>

namespace branchfs::testing {

namespace {

std::string parent_of(const std::string& p) {
  auto slash = p.rfind('/');
  return slash == std::string::npos ? std::string() : p.substr(0, slash);
}

bool under(const std::string& ancestor, const std::string& p) {
  if (ancestor.empty()) return !p.empty();
  return p.size() > ancestor.size() && p.compare(0, ancestor.size(), ancestor) == 0 &&
         p[ancestor.size()] == '/';
}

}  // namespace

bool ModelTree::is_dir(const std::string& p) const {
  if (p.empty()) return true;
  auto it = entries.find(p);
  return it != entries.end() && it->second.kind == FileKind::kDirectory;
}

std::vector<std::string> ModelTree::children(const std::string& dir) const {
  std::vector<std::string> out;
  for (const auto& [path, _] : entries) {
    if (under(dir, path) && parent_of(path) == dir) out.push_back(path);
  }
  return out;
}

MaybeErr ModelTree::check_new_entry(const std::string& p) const {
  if (p.empty()) return Errc::kExists;
  std::string parent = parent_of(p);
  if (!exists(parent)) return Errc::kNotFound;
  if (!is_dir(parent)) return Errc::kNotDirectory;
  if (exists(p)) return Errc::kExists;
  return std::nullopt;
}

MaybeErr ModelTree::create_file(const std::string& p, unsigned mode) {
  if (auto e = check_new_entry(p)) return e;
  entries[p] = TreeEntry{FileKind::kRegular, mode & 07777, ""};
  return std::nullopt;
}

MaybeErr ModelTree::mkdir(const std::string& p, unsigned mode) {
  if (auto e = check_new_entry(p)) return e;
  entries[p] = TreeEntry{FileKind::kDirectory, mode & 07777, ""};
  return std::nullopt;
}

MaybeErr ModelTree::write(const std::string& p, std::uint64_t offset, const std::string& data) {
  if (is_dir(p)) return Errc::kIsDirectory;
  auto it = entries.find(p);
  if (it == entries.end()) return Errc::kNotFound;
  if (it->second.kind != FileKind::kRegular) return Errc::kInvalidArgument;
  auto& c = it->second.content;
  if (c.size() < offset + data.size()) c.resize(offset + data.size(), '\0');
  std::copy(data.begin(), data.end(), c.begin() + static_cast<std::ptrdiff_t>(offset));
  return std::nullopt;
}

MaybeErr ModelTree::truncate(const std::string& p, std::uint64_t len) {
  if (is_dir(p)) return Errc::kIsDirectory;
  auto it = entries.find(p);
  if (it == entries.end()) return Errc::kNotFound;
  if (it->second.kind != FileKind::kRegular) return Errc::kInvalidArgument;
  it->second.content.resize(len, '\0');
  return std::nullopt;
}

MaybeErr ModelTree::set_mode(const std::string& p, unsigned mode) {
  if (p.empty()) return Errc::kInvalidArgument;
  auto it = entries.find(p);
  if (it == entries.end()) return Errc::kNotFound;
  if (it->second.kind != FileKind::kSymlink) it->second.mode = mode & 07777;
  return std::nullopt;
}

void ModelTree::erase_subtree(const std::string& p) {
  for (auto it = entries.begin(); it != entries.end();) {
    if (it->first == p || under(p, it->first)) {
      it = entries.erase(it);
    } else {
      ++it;
    }
  }
}

MaybeErr ModelTree::remove(const std::string& p) {
  if (p.empty()) return Errc::kInvalidArgument;
  if (!exists(p)) return Errc::kNotFound;
  erase_subtree(p);
  return std::nullopt;
}

MaybeErr ModelTree::rename(const std::string& src, const std::string& dst) {
  if (src.empty() || dst.empty()) return Errc::kInvalidArgument;
  if (!exists(src)) return Errc::kNotFound;
  if (src == dst) return std::nullopt;
  if (under(src, dst)) return Errc::kInvalidArgument;
  std::string dparent = parent_of(dst);
  if (!exists(dparent)) return Errc::kNotFound;
  if (!is_dir(dparent)) return Errc::kNotDirectory;
  bool src_dir = is_dir(src);
  if (exists(dst)) {
    bool dst_dir = is_dir(dst);
    if (src_dir && !dst_dir) return Errc::kNotDirectory;
    if (!src_dir && dst_dir) return Errc::kIsDirectory;
    if (dst_dir && !children(dst).empty()) return Errc::kNotEmpty;
    erase_subtree(dst);
  }
  TreeSnapshot moved;
  for (auto it = entries.begin(); it != entries.end();) {
    if (it->first == src || under(src, it->first)) {
      moved.emplace(dst + it->first.substr(src.size()), std::move(it->second));
      it = entries.erase(it);
    } else {
      ++it;
    }
  }
  entries.merge(moved);
  return std::nullopt;
}

// ---------------------------------------------------------------------------

ReferenceModel::ReferenceModel(TreeSnapshot base) {
  Branch root;
  root.tree.entries = std::move(base);
  branches_.emplace("root", std::move(root));
}

MaybeErr ReferenceModel::lookup(const std::string& name) const {
  auto it = branches_.find(name);
  if (it == branches_.end()) return Errc::kNotFound;
  if (!it->second.live) return Errc::kTerminal;
  return std::nullopt;
}

bool ReferenceModel::is_live(const std::string& name) const {
  auto it = branches_.find(name);
  return it != branches_.end() && it->second.live;
}

bool ReferenceModel::is_stale(const std::string& name) const {
  for (std::string cur = name; !cur.empty(); cur = branches_.at(cur).parent) {
    if (branches_.at(cur).stale) return true;
  }
  return false;
}

int ReferenceModel::depth(const std::string& name) const {
  int d = 0;
  for (std::string cur = branches_.at(name).parent; !cur.empty(); cur = branches_.at(cur).parent) {
    ++d;
  }
  return d;
}

std::vector<std::string> ReferenceModel::live_branches() const {
  std::vector<std::string> out;
  for (const auto& [name, b] : branches_) {
    if (b.live) out.push_back(name);
  }
  return out;
}

MaybeErr ReferenceModel::readable(const std::string& name) const {
  if (auto e = lookup(name)) return e;
  if (is_stale(name)) return Errc::kStale;
  return std::nullopt;
}

MaybeErr ReferenceModel::writable(const std::string& name, ModelTree** tree) {
  if (auto e = readable(name)) return e;
  if (branches_.at(name).children > 0) return Errc::kFrozen;
  *tree = &branches_.at(name).tree;
  return std::nullopt;
}

MaybeErr ReferenceModel::fork(const std::string& parent, const std::string& name) {
  if (is_live(name) || name == "root") return Errc::kExists;
  if (auto e = lookup(parent)) return e;
  if (is_stale(parent)) return Errc::kStale;
  Branch b;
  b.parent = parent;
  b.tree = branches_.at(parent).tree;
  branches_[name] = std::move(b);
  ++branches_.at(parent).children;
  return std::nullopt;
}

MaybeErr ReferenceModel::fork_group(const std::string& parent,
                                    const std::vector<std::string>& names) {
  if (names.empty()) return Errc::kInvalidArgument;
  for (size_t i = 0; i < names.size(); ++i) {
    if (std::find(names.begin(), names.begin() + static_cast<std::ptrdiff_t>(i), names[i]) !=
        names.begin() + static_cast<std::ptrdiff_t>(i)) {
      return Errc::kExists;
    }
    if (is_live(names[i]) || names[i] == "root") return Errc::kExists;
  }
  if (auto e = lookup(parent)) return e;
  if (is_stale(parent)) return Errc::kStale;
  int gid = next_group_++;
  winners_[gid] = std::nullopt;
  for (const auto& n : names) {
    fork(parent, n);
    branches_.at(n).group = gid;
  }
  return std::nullopt;
}

MaybeErr ReferenceModel::commit(const std::string& name) {
  if (auto e = lookup(name)) return e;
  if (name == "root") return Errc::kInvalidArgument;
  if (is_stale(name)) return Errc::kStale;
  Branch& b = branches_.at(name);
  if (b.children > 0) return Errc::kFrozen;
  if (b.group) {
    auto& w = winners_.at(*b.group);
    if (w && *w != name) return Errc::kStale;
    w = name;
  }
  Branch& p = branches_.at(b.parent);
  p.tree = b.tree;
  for (auto& [other, ob] : branches_) {
    if (other != name && ob.live && ob.parent == b.parent) ob.stale = true;
  }
  b.live = false;
  --p.children;
  return std::nullopt;
}

void ReferenceModel::abort_rec(const std::string& name) {
  std::vector<std::string> kids;
  for (const auto& [other, ob] : branches_) {
    if (ob.live && ob.parent == name) kids.push_back(other);
  }
  for (const auto& k : kids) abort_rec(k);
  Branch& b = branches_.at(name);
  b.live = false;
  --branches_.at(b.parent).children;
}

MaybeErr ReferenceModel::abort(const std::string& name) {
  if (auto e = lookup(name)) return e;
  if (name == "root") return Errc::kInvalidArgument;
  abort_rec(name);
  return std::nullopt;
}

}  // namespace branchfs::testing
