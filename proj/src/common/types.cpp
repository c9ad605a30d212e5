#include "branchfs/types.hpp"

#include <sys/stat.h>

#include "branchfs/error.hpp"

namespace branchfs {

bool BranchId::valid_name(std::string_view name) {
  if (name.empty() || name.size() > 200) return false;
  if (name.front() == '@' || name == "." || name == "..") return false;
  if (name == kRootName) return false;
  for (char c : name) {
    auto u = static_cast<unsigned char>(c);
    // Names travel in space-separated control lines.
    if (c == '/' || u <= 0x20 || u == 0x7f) return false;
  }
  return true;
}

BranchId BranchId::make(std::string_view name) {
  if (!valid_name(name)) {
    throw BranchError(Errc::kInvalidArgument,
                      "invalid branch name '" + std::string(name) + "'");
  }
  return BranchId(std::string(name));
}

BranchId BranchId::parse(std::string_view name) {
  if (name == kRootName) return root();
  return make(name);
}

std::string_view state_name(BranchState s) {
  switch (s) {
    case BranchState::kActive: return "Active";
    case BranchState::kFrozen: return "Frozen";
    case BranchState::kStale: return "Stale";
    case BranchState::kCommitted: return "Committed";
    case BranchState::kAborted: return "Aborted";
  }
  return "?";
}

std::optional<BranchState> parse_state(std::string_view s) {
  for (auto st : {BranchState::kActive, BranchState::kFrozen, BranchState::kStale,
                  BranchState::kCommitted, BranchState::kAborted}) {
    if (state_name(st) == s) return st;
  }
  return std::nullopt;
}

FileKind kind_of_mode(unsigned mode) {
  if (S_ISREG(mode)) return FileKind::kRegular;
  if (S_ISDIR(mode)) return FileKind::kDirectory;
  if (S_ISLNK(mode)) return FileKind::kSymlink;
  return FileKind::kSpecial;
}

}  // namespace branchfs
