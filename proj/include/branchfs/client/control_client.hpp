#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "branchfs/control.hpp"

namespace branchfs::client {

/// Raised when the control file cannot be found or opened at all, as
/// opposed to a command the daemon rejected.
class Unreachable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Finds the control file: $BRANCHFS_CTL, then <mount>/.branchfs_ctl for an
/// explicit mount or $BRANCHFS_MOUNT, then the nearest ancestor of the
/// working directory that contains one.
std::filesystem::path locate_control(const std::optional<std::filesystem::path>& mount);

class ControlClient {
 public:
  explicit ControlClient(std::filesystem::path ctl) : ctl_(std::move(ctl)) {}

  const std::filesystem::path& path() const noexcept { return ctl_; }

  /// Writes one raw line (a trailing '\n' is added when missing). Returns 0
  /// or the errno the daemon failed the write with.
  int send_line(std::string line) const;
  int send(const control::Command& cmd) const { return send_line(control::format_line(cmd)); }

  std::string read_listing() const;
  std::vector<control::ListingRow> list() const;

 private:
  std::filesystem::path ctl_;
};

}  // namespace branchfs::client
