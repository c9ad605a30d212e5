#include "branchfs/rel_path.hpp"

#include "branchfs/error.hpp"

namespace branchfs {

bool RelPath::valid_component(std::string_view name) {
  return !name.empty() && name != "." && name != ".." &&
         name.find('/') == std::string_view::npos &&
         name.find('\0') == std::string_view::npos;
}

RelPath RelPath::parse(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  size_t i = 0;
  while (i < raw.size()) {
    while (i < raw.size() && raw[i] == '/') ++i;
    if (i == raw.size()) break;
    size_t end = raw.find('/', i);
    if (end == std::string_view::npos) end = raw.size();
    std::string_view comp = raw.substr(i, end - i);
    if (!valid_component(comp)) {
      throw BranchError(Errc::kInvalidArgument,
                        "invalid path component in '" + std::string(raw) + "'");
    }
    if (!out.empty()) out.push_back('/');
    out.append(comp);
    i = end;
  }
  return RelPath(std::move(out));
}

std::string_view RelPath::name() const {
  auto slash = path_.rfind('/');
  if (slash == std::string::npos) return path_;
  return std::string_view(path_).substr(slash + 1);
}

RelPath RelPath::parent() const {
  auto slash = path_.rfind('/');
  if (slash == std::string::npos) return RelPath();
  return RelPath(path_.substr(0, slash));
}

RelPath RelPath::join(std::string_view component) const {
  if (!valid_component(component)) {
    throw BranchError(Errc::kInvalidArgument,
                      "invalid path component '" + std::string(component) + "'");
  }
  if (path_.empty()) return RelPath(std::string(component));
  return RelPath(path_ + "/" + std::string(component));
}

std::vector<std::string_view> RelPath::components() const {
  std::vector<std::string_view> out;
  std::string_view rest = path_;
  while (!rest.empty()) {
    auto slash = rest.find('/');
    if (slash == std::string_view::npos) {
      out.push_back(rest);
      break;
    }
    out.push_back(rest.substr(0, slash));
    rest.remove_prefix(slash + 1);
  }
  return out;
}

bool RelPath::is_ancestor_of(const RelPath& other) const {
  if (path_.empty()) return !other.path_.empty();
  return other.path_.size() > path_.size() &&
         other.path_.compare(0, path_.size(), path_) == 0 &&
         other.path_[path_.size()] == '/';
}

bool RelPath::is_same_or_ancestor_of(const RelPath& other) const {
  return *this == other || is_ancestor_of(other);
}

RelPath RelPath::rebase(const RelPath& other, const RelPath& to) const {
  if (*this == other) return to;
  std::string_view tail = std::string_view(other.path_).substr(
      path_.empty() ? 0 : path_.size() + 1);
  if (to.path_.empty()) return RelPath(std::string(tail));
  return RelPath(to.path_ + "/" + std::string(tail));
}

std::filesystem::path RelPath::under(const std::filesystem::path& root) const {
  if (path_.empty()) return root;
  return root / path_;
}

}  // namespace branchfs
