#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace branchfs::bench {

struct Sample {
  std::string scenario;
  std::string param;
  int trial = 0;
  double value = 0;  // microseconds or MB/s, per the point's unit
};

struct Point {
  std::string scenario;
  std::string param;
  std::string unit;  // "us" or "MB/s"
  std::vector<double> samples;
  double median = 0;
  double min = 0;
  double max = 0;
};

struct Check {
  std::string name;
  bool passed = false;
  std::string detail;
  /// Reported but not part of the pass/fail verdict.
  bool informational = false;
};

struct Report {
  std::string scenario;
  std::vector<Point> points;
  std::vector<Check> checks;
  std::map<std::string, std::string> environment;

  const Point* find(const std::string& scenario, const std::string& param) const;
  bool passed() const;
};

double median(std::vector<double> v);
Point make_point(std::string scenario, std::string param, std::string unit,
                 std::vector<double> samples);

/// Deterministic base tree: `count` files of `file_size` random bytes laid
/// out in base-`fanout` digit directories (at most `fanout` entries per
/// directory). Requires `dest` to be absent or empty.
void gen_tree(const std::filesystem::path& dest, std::size_t count,
              std::size_t file_size = 1024, std::size_t fanout = 100,
              std::uint64_t seed = 0x5eed);

struct Options {
  /// Scratch space; every scenario works in its own subdirectory.
  std::filesystem::path workdir;
  int trials = 10;
  /// Drive branch operations through a FUSE mount of the store (falls back
  /// to direct store calls when mounting is not possible).
  bool use_mount = true;
};

/// Branch creation latency over generated bases of each size.
Report bench_creation(const Options& opt, const std::vector<std::size_t>& base_sizes = {100, 1000, 10000});

/// Commit and abort latency for a delta of one new file of each size.
Report bench_commit_abort(const Options& opt,
                          const std::vector<std::size_t>& mod_sizes = {1024, 100 * 1024,
                                                                       1024 * 1024});

/// Sequential read/write MB/s, native directory vs mounted branch, with the
/// mount's fsync either ignored (default) or honored.
Report bench_throughput(const Options& opt, std::size_t file_size = 50u * 1000 * 1000,
                        std::size_t block = 64 * 1024);

std::map<std::string, std::string> environment_fingerprint(const std::filesystem::path& workdir);

/// Columns: scenario,param,trial,value_us_or_mbs (one row per raw sample).
std::string to_csv(const std::vector<Report>& reports);
std::string to_markdown(const std::vector<Report>& reports);

}  // namespace branchfs::bench
