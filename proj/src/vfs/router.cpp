#include "branchfs/vfs/router.hpp"

#include "branchfs/error.hpp"

namespace branchfs::vfs {

RoutedPath route(std::string_view path, const BranchId& default_branch, bool control_enabled) {
  RelPath rel = RelPath::parse(path);
  RoutedPath out;
  if (rel.is_root()) {
    out.kind = RoutedPath::Kind::kMountRoot;
    out.branch = default_branch;
    return out;
  }
  auto comps = rel.components();
  std::string_view first = comps.front();
  if (control_enabled && first == kControlName) {
    if (comps.size() > 1) throw BranchError(Errc::kNotDirectory, "control file is not a directory");
    out.kind = RoutedPath::Kind::kControl;
    out.branch = default_branch;
    return out;
  }
  if (first.starts_with('@')) {
    std::string_view name = first.substr(1);
    if (name != BranchId::kRootName && !BranchId::valid_name(name)) {
      throw BranchError(Errc::kNotFound, "no branch '" + std::string(name) + "'");
    }
    out.branch = BranchId::parse(name);
    out.via_at = comps.size() == 1;
    std::string_view rest = rel.str();
    rest.remove_prefix(first.size());
    out.rel = RelPath::parse(rest);
    return out;
  }
  out.branch = default_branch;
  out.rel = std::move(rel);
  return out;
}

bool reserved_at_root(std::string_view name, bool control_enabled) {
  return name.starts_with('@') || (control_enabled && name == kControlName);
}

}  // namespace branchfs::vfs
