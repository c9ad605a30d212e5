#include "branchfs/tree_snapshot.hpp"

#include <openssl/evp.h>
#include <sys/stat.h>

#include <memory>
#include <sstream>

#include "branchfs/error.hpp"
#include "branchfs/posix.hpp"

namespace branchfs {

namespace fs = std::filesystem;

namespace {

void walk(const fs::path& root, const fs::path& dir, const std::string& prefix,
          TreeSnapshot& out) {
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string name = entry.path().filename().string();
    std::string rel = prefix.empty() ? name : prefix + "/" + name;
    auto st = posix::lstat_opt(entry.path());
    if (!st) continue;
    TreeEntry e;
    e.kind = kind_of_mode(st->st_mode);
    e.mode = st->st_mode & 07777;
    if (e.kind == FileKind::kRegular) {
      e.content = posix::read_file(entry.path());
    } else if (e.kind == FileKind::kSymlink) {
      e.content = fs::read_symlink(entry.path()).string();
      e.mode = 0;
    }
    out.emplace(rel, std::move(e));
    if (S_ISDIR(st->st_mode)) walk(root, entry.path(), rel, out);
  }
}

std::string_view kind_tag(FileKind k) {
  switch (k) {
    case FileKind::kRegular: return "f";
    case FileKind::kDirectory: return "d";
    case FileKind::kSymlink: return "l";
    case FileKind::kSpecial: return "s";
  }
  return "?";
}

}  // namespace

TreeSnapshot snapshot_directory(const fs::path& root) {
  TreeSnapshot out;
  walk(root, root, "", out);
  return out;
}

std::string tree_hash(const TreeSnapshot& snap) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(),
                                                             &EVP_MD_CTX_free);
  EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr);
  auto feed = [&](std::string_view s) {
    std::uint64_t len = s.size();
    EVP_DigestUpdate(ctx.get(), &len, sizeof len);
    EVP_DigestUpdate(ctx.get(), s.data(), s.size());
  };
  for (const auto& [path, e] : snap) {
    feed(path);
    feed(kind_tag(e.kind));
    feed(std::to_string(e.mode));
    feed(e.content);
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), md, &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  for (unsigned i = 0; i < len; ++i) {
    hex.push_back(kHex[md[i] >> 4]);
    hex.push_back(kHex[md[i] & 0xf]);
  }
  return hex;
}

std::string hash_directory(const fs::path& root) { return tree_hash(snapshot_directory(root)); }

std::string diff_snapshots(const TreeSnapshot& expected, const TreeSnapshot& actual,
                           std::size_t max_lines) {
  std::ostringstream out;
  std::size_t lines = 0;
  auto note = [&](const std::string& s) {
    if (lines++ < max_lines) out << s << "\n";
  };
  for (const auto& [path, e] : expected) {
    auto it = actual.find(path);
    if (it == actual.end()) {
      note("missing: " + path);
    } else if (it->second.kind != e.kind) {
      note("kind differs: " + path);
    } else if (it->second.mode != e.mode) {
      std::ostringstream m;
      m << "mode differs: " << path << " expected " << std::oct << e.mode << " got "
        << it->second.mode;
      note(m.str());
    } else if (it->second.content != e.content) {
      note("content differs: " + path + " (" + std::to_string(e.content.size()) + " vs " +
           std::to_string(it->second.content.size()) + " bytes)");
    }
  }
  for (const auto& [path, e] : actual) {
    if (!expected.count(path)) note("unexpected: " + path);
  }
  if (lines > max_lines) out << "... " << (lines - max_lines) << " more\n";
  return out.str();
}

}  // namespace branchfs
