#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "branchfs/branch_store.hpp"

namespace branchfs::control {

// Line protocol spoken through <mount>/.branchfs_ctl. Every command is one
// ASCII line terminated by '\n':
//
//   create <parent> <name>            fork one branch
//   create <parent> <name> <name>...  fork an exclusive group (2+ names)
//   commit <name>
//   abort <name>
//   list                              no-op; read the file for the listing
//
// <parent> may be "." for the mount's default branch. Reading the file
// returns one line per branch, "<name> <parent> <state> <epoch>\n", with
// "-" as the root's parent.

enum class Verb { kCreate, kCommit, kAbort, kList };

struct Command {
  Verb verb = Verb::kList;
  std::vector<std::string> args;

  bool operator==(const Command&) const = default;
};

/// Parses one line (with or without its trailing '\n'). Throws
/// kInvalidArgument on unknown verbs or wrong arity.
Command parse_line(std::string_view line);

/// Renders a command back to its canonical line, newline included.
std::string format_line(const Command& cmd);

/// Splits a control-file write into commands. Every line must end in '\n'.
std::vector<Command> parse_buffer(std::string_view buffer);

/// Applies `cmd` to `store`; store errors propagate unchanged.
void execute(BranchStore& store, const Command& cmd, const BranchId& default_branch);

struct ListingRow {
  std::string name;
  std::string parent;  // "-" for root
  std::string state;
  std::uint64_t epoch = 0;

  bool operator==(const ListingRow&) const = default;
};

std::string format_listing(const std::vector<BranchMeta>& branches);
/// Inverse of format_listing; throws kInvalidArgument on malformed rows.
std::vector<ListingRow> parse_listing(std::string_view text);

}  // namespace branchfs::control
