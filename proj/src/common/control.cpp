#include "branchfs/control.hpp"

#include <charconv>

#include "branchfs/error.hpp"

namespace branchfs::control {

namespace {

std::vector<std::string> split_words(std::string_view line) {
  std::vector<std::string> words;
  size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && line[i] == ' ') ++i;
    size_t start = i;
    while (i < line.size() && line[i] != ' ') ++i;
    if (i > start) words.emplace_back(line.substr(start, i - start));
  }
  return words;
}

[[noreturn]] void bad(const std::string& msg) { throw BranchError(Errc::kInvalidArgument, msg); }

BranchId parent_arg(const std::string& token, const BranchId& default_branch) {
  return token == "." ? default_branch : BranchId::parse(token);
}

}  // namespace

Command parse_line(std::string_view line) {
  if (line.ends_with('\n')) line.remove_suffix(1);
  for (char c : line) {
    if (static_cast<unsigned char>(c) < 0x20 || static_cast<unsigned char>(c) > 0x7e) {
      bad("control line contains non-printable bytes");
    }
  }
  auto words = split_words(line);
  if (words.empty()) bad("empty control line");
  Command cmd;
  const std::string& verb = words.front();
  cmd.args.assign(words.begin() + 1, words.end());
  size_t n = cmd.args.size();
  if (verb == "create") {
    cmd.verb = Verb::kCreate;
    if (n < 2) bad("usage: create <parent> <name> [<name>...]");
  } else if (verb == "commit") {
    cmd.verb = Verb::kCommit;
    if (n != 1) bad("usage: commit <name>");
  } else if (verb == "abort") {
    cmd.verb = Verb::kAbort;
    if (n != 1) bad("usage: abort <name>");
  } else if (verb == "list") {
    cmd.verb = Verb::kList;
    if (n != 0) bad("usage: list");
  } else {
    bad("unknown control verb '" + verb + "'");
  }
  return cmd;
}

std::string format_line(const Command& cmd) {
  std::string out;
  switch (cmd.verb) {
    case Verb::kCreate: out = "create"; break;
    case Verb::kCommit: out = "commit"; break;
    case Verb::kAbort: out = "abort"; break;
    case Verb::kList: out = "list"; break;
  }
  for (const auto& a : cmd.args) out += " " + a;
  out += '\n';
  return out;
}

std::vector<Command> parse_buffer(std::string_view buffer) {
  if (buffer.empty() || !buffer.ends_with('\n')) bad("control writes must end with a newline");
  std::vector<Command> out;
  while (!buffer.empty()) {
    size_t nl = buffer.find('\n');
    out.push_back(parse_line(buffer.substr(0, nl)));
    buffer.remove_prefix(nl + 1);
  }
  return out;
}

void execute(BranchStore& store, const Command& cmd, const BranchId& default_branch) {
  switch (cmd.verb) {
    case Verb::kCreate: {
      BranchId parent = parent_arg(cmd.args[0], default_branch);
      if (cmd.args.size() == 2) {
        store.create_branch(parent, cmd.args[1]);
      } else {
        std::vector<std::string> names(cmd.args.begin() + 1, cmd.args.end());
        store.create_branch_group(parent, names);
      }
      return;
    }
    case Verb::kCommit: store.commit_branch(BranchId::parse(cmd.args[0])); return;
    case Verb::kAbort: store.abort_branch(BranchId::parse(cmd.args[0])); return;
    case Verb::kList: return;
  }
}

std::string format_listing(const std::vector<BranchMeta>& branches) {
  std::string out;
  for (const auto& b : branches) {
    out += b.id.str();
    out += ' ';
    out += b.parent ? b.parent->str() : "-";
    out += ' ';
    out += state_name(b.state);
    out += ' ';
    out += std::to_string(b.epoch);
    out += '\n';
  }
  return out;
}

std::vector<ListingRow> parse_listing(std::string_view text) {
  std::vector<ListingRow> rows;
  while (!text.empty()) {
    size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text.remove_prefix(nl == std::string_view::npos ? text.size() : nl + 1);
    if (line.empty()) continue;
    auto words = split_words(line);
    if (words.size() != 4) bad("malformed listing row '" + std::string(line) + "'");
    ListingRow row{words[0], words[1], words[2], 0};
    auto [p, ec] = std::from_chars(words[3].data(), words[3].data() + words[3].size(), row.epoch);
    if (ec != std::errc() || p != words[3].data() + words[3].size()) bad("bad epoch in listing");
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace branchfs::control
