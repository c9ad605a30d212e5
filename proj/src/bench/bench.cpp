#include "branchfs/bench/bench.hpp"

#include <fcntl.h>
#include <linux/magic.h>
#include <sys/statfs.h>
#include <sys/utsname.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "branchfs/branch_store.hpp"
#include "branchfs/client/control_client.hpp"
#include "branchfs/control.hpp"
#include "branchfs/error.hpp"
#include "branchfs/posix.hpp"
#include "branchfs/vfs/branch_fs.hpp"
#include "branchfs/vfs/fuse_server.hpp"

namespace branchfs::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

const Point* Report::find(const std::string& sc, const std::string& param) const {
  for (const auto& p : points) {
    if (p.scenario == sc && p.param == param) return &p;
  }
  return nullptr;
}

bool Report::passed() const {
  return std::all_of(checks.begin(), checks.end(),
                     [](const Check& c) { return c.informational || c.passed; });
}

double median(std::vector<double> v) {
  if (v.empty()) return 0;
  std::sort(v.begin(), v.end());
  size_t n = v.size();
  return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2;
}

Point make_point(std::string scenario, std::string param, std::string unit,
                 std::vector<double> samples) {
  Point p{std::move(scenario), std::move(param), std::move(unit), std::move(samples)};
  p.median = median(p.samples);
  if (!p.samples.empty()) {
    auto [lo, hi] = std::minmax_element(p.samples.begin(), p.samples.end());
    p.min = *lo;
    p.max = *hi;
  }
  return p;
}

void gen_tree(const fs::path& dest, std::size_t count, std::size_t file_size, std::size_t fanout,
              std::uint64_t seed) {
  if (fanout < 2) throw std::invalid_argument("fanout must be at least 2");
  fs::create_directories(dest);
  if (!fs::is_empty(dest)) throw std::invalid_argument(dest.string() + " is not empty");

  std::size_t levels = 1;
  for (std::size_t cap = fanout; cap < count; cap *= fanout) ++levels;
  int width = static_cast<int>(std::to_string(fanout - 1).size());

  std::mt19937_64 rng(seed);
  std::string buf(file_size, '\0');
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<std::size_t> digits(levels);
    std::size_t v = i;
    for (std::size_t l = levels; l-- > 0;) {
      digits[l] = v % fanout;
      v /= fanout;
    }
    fs::path p = dest;
    for (std::size_t l = 0; l + 1 < levels; ++l) p /= fmt::format("d{:0{}}", digits[l], width);
    if (levels > 1 && digits.back() == 0) fs::create_directories(p);
    p /= fmt::format("f{:0{}}.dat", digits.back(), width);
    for (std::size_t off = 0; off < file_size; off += 8) {
      std::uint64_t r = rng();
      std::memcpy(buf.data() + off, &r, std::min<std::size_t>(8, file_size - off));
    }
    std::ofstream(p, std::ios::binary).write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

namespace {

double micros(Clock::duration d) {
  return std::chrono::duration<double, std::micro>(d).count();
}

// A store over a scratch base, optionally mounted, whose branch operations
// report the store's own timing for the operation.
class Harness {
 public:
  Harness(fs::path root, bool use_mount, bool honor_fsync = false) : root_(std::move(root)) {
    fs::create_directories(base());
    fs::create_directories(root_ / "mnt");
    store_ = std::make_unique<BranchStore>(base(), root_ / "store");
    store_->set_timing_hook([this](std::string_view op, std::chrono::nanoseconds ns) {
      std::lock_guard lk(mu_);
      last_[std::string(op)] = std::chrono::duration<double, std::micro>(ns).count();
    });
    if (!use_mount) {
      transport_ = "direct";
      return;
    }
    vfs::MountConfig cfg;
    cfg.base_dir = base();
    cfg.mountpoint = root_ / "mnt";
    cfg.store_dir = root_ / "store";
    cfg.honor_fsync = honor_fsync;
    try {
      fsys_ = std::make_unique<vfs::BranchFs>(*store_, cfg);
      server_ = std::make_unique<vfs::FuseServer>(*fsys_, cfg.mountpoint);
      server_->start();
      transport_ = "fuse";
    } catch (const std::exception& e) {
      spdlog::warn("bench: mount failed ({}); timing direct store calls", e.what());
      server_.reset();
      fsys_.reset();
      transport_ = "direct";
    }
  }

  ~Harness() {
    if (server_) server_->stop();
  }

  fs::path base() const { return root_ / "base"; }
  fs::path mountpoint() const { return root_ / "mnt"; }
  bool mounted() const { return server_ != nullptr; }
  const std::string& transport() const { return transport_; }
  BranchStore& store() { return *store_; }

  struct Timing {
    double internal_us;
    double end_to_end_us;
  };

  // Runs one control line; returns the store-internal time of `op`.
  Timing run(const std::string& line, const std::string& op) {
    auto t0 = Clock::now();
    if (server_) {
      client::ControlClient c(mountpoint() / vfs::kControlName);
      if (int err = c.send_line(line); err != 0) {
        throw BranchError(Errc::kIo, "control line failed: " + line, err);
      }
    } else {
      control::execute(*store_, control::parse_line(line), BranchId::root());
    }
    double e2e = micros(Clock::now() - t0);
    std::lock_guard lk(mu_);
    return {last_.at(op), e2e};
  }

 private:
  fs::path root_;
  std::unique_ptr<BranchStore> store_;
  std::unique_ptr<vfs::BranchFs> fsys_;
  std::unique_ptr<vfs::FuseServer> server_;
  std::string transport_;
  std::mutex mu_;
  std::map<std::string, double> last_;
};

fs::path fresh_dir(const fs::path& p) {
  posix::remove_tree(p);
  fs::create_directories(p);
  return p;
}

std::string size_label(std::size_t bytes) {
  if (bytes >= 1024 * 1024 && bytes % (1024 * 1024) == 0) return fmt::format("{}MB", bytes >> 20);
  if (bytes >= 1024 && bytes % 1024 == 0) return fmt::format("{}KB", bytes >> 10);
  return fmt::format("{}B", bytes);
}

Check check(std::string name, bool ok, std::string detail, bool informational = false) {
  return {std::move(name), ok, std::move(detail), informational};
}

}  // namespace

Report bench_creation(const Options& opt, const std::vector<std::size_t>& base_sizes) {
  Report r;
  r.scenario = "creation";
  r.environment = environment_fingerprint(opt.workdir);
  r.environment["writeback"] = "sync() after tree generation, before timing";
  r.environment["order"] = "trials interleaved across base sizes";
  std::vector<fs::path> roots;
  std::vector<std::unique_ptr<Harness>> hs;
  for (std::size_t n : base_sizes) {
    fs::path root = fresh_dir(opt.workdir / fmt::format("creation-{}", n));
    fs::create_directories(root / "base");
    gen_tree(root / "base", n);
    roots.push_back(root);
  }
  // Writeback of the fresh trees would otherwise overlap the timed trials.
  ::sync();
  for (const auto& root : roots) {
    hs.push_back(std::make_unique<Harness>(root, opt.use_mount));
    r.environment["transport"] = hs.back()->transport();
    hs.back()->run("create . warmup", "create");
    hs.back()->run("abort warmup", "abort");
  }
  // Round-robin so that drift in filesystem latency lands on every size alike.
  std::vector<std::vector<double>> internal(hs.size()), e2e(hs.size());
  for (int t = 0; t < opt.trials; ++t) {
    std::string name = fmt::format("c{}", t);
    for (std::size_t i = 0; i < hs.size(); ++i) {
      auto tm = hs[i]->run("create . " + name, "create");
      internal[i].push_back(tm.internal_us);
      e2e[i].push_back(tm.end_to_end_us);
      hs[i]->run("abort " + name, "abort");
    }
  }
  hs.clear();
  for (const auto& root : roots) posix::remove_tree(root);
  std::vector<double> medians;
  for (std::size_t i = 0; i < base_sizes.size(); ++i) {
    std::string n = std::to_string(base_sizes[i]);
    r.points.push_back(make_point("creation", n, "us", internal[i]));
    r.points.push_back(make_point("creation_e2e", n, "us", e2e[i]));
    medians.push_back(r.points[r.points.size() - 2].median);
  }
  auto [lo, hi] = std::minmax_element(medians.begin(), medians.end());
  double ratio = *lo > 0 ? *hi / *lo : INFINITY;
  r.checks.push_back(check("creation flat across base sizes (max/min median < 2)", ratio < 2.0,
                           fmt::format("ratio {:.2f}", ratio)));
  r.checks.push_back(check("every creation median < 5 ms", *hi < 5000.0,
                           fmt::format("max median {:.0f} us", *hi)));
  return r;
}

Report bench_commit_abort(const Options& opt, const std::vector<std::size_t>& mod_sizes) {
  Report r;
  r.scenario = "commit_abort";
  r.environment = environment_fingerprint(opt.workdir);
  fs::path root = fresh_dir(opt.workdir / "commit-abort");
  gen_tree(root / "base", 100);
  ::sync();
  r.environment["writeback"] = "sync() after tree generation, before timing";
  std::vector<double> commit_medians, abort_medians;
  {
    Harness h(root, opt.use_mount);
    r.environment["transport"] = h.transport();
    std::mt19937_64 rng(42);
    auto mutate = [&](const std::string& branch, std::size_t size, const std::string& file) {
      std::vector<std::byte> data(size);
      for (auto& b : data) b = static_cast<std::byte>(rng());
      BranchId id = BranchId::make(branch);
      RelPath p = RelPath::parse(file);
      h.store().create_file(id, p, 0644);
      h.store().write_file(id, p, 0, data);
    };
    for (std::size_t size : mod_sizes) {
      std::vector<double> commits, aborts, commits_e2e, aborts_e2e;
      for (int t = 0; t < opt.trials; ++t) {
        std::string c = fmt::format("cm{}x{}", size, t);
        h.run("create . " + c, "create");
        mutate(c, size, fmt::format("mod-{}-{}.dat", size, t));
        auto tc = h.run("commit " + c, "commit");
        commits.push_back(tc.internal_us);
        commits_e2e.push_back(tc.end_to_end_us);

        std::string a = fmt::format("ab{}x{}", size, t);
        h.run("create . " + a, "create");
        mutate(a, size, fmt::format("mod-{}-{}.dat", size, t + opt.trials));
        auto ta = h.run("abort " + a, "abort");
        aborts.push_back(ta.internal_us);
        aborts_e2e.push_back(ta.end_to_end_us);
      }
      std::string label = size_label(size);
      r.points.push_back(make_point("commit", label, "us", commits));
      commit_medians.push_back(r.points.back().median);
      r.points.push_back(make_point("abort", label, "us", aborts));
      abort_medians.push_back(r.points.back().median);
      r.points.push_back(make_point("commit_e2e", label, "us", commits_e2e));
      r.points.push_back(make_point("abort_e2e", label, "us", aborts_e2e));
    }
  }
  posix::remove_tree(root);

  bool monotone = std::is_sorted(commit_medians.begin(), commit_medians.end());
  std::string series;
  for (double m : commit_medians) series += fmt::format("{}{:.0f}", series.empty() ? "" : " / ", m);
  r.checks.push_back(check("commit medians nondecreasing in delta size", monotone, series + " us"));
  if (!commit_medians.empty()) {
    r.checks.push_back(check("commit of the smallest delta < 5 ms", commit_medians.front() < 5000.0,
                             fmt::format("{:.0f} us", commit_medians.front())));
  }
  for (std::size_t i = 0; i < mod_sizes.size(); ++i) {
    if (mod_sizes[i] < 100 * 1024) continue;
    r.checks.push_back(check(
        fmt::format("abort({}) <= commit({})", size_label(mod_sizes[i]), size_label(mod_sizes[i])),
        abort_medians[i] <= commit_medians[i],
        fmt::format("{:.0f} vs {:.0f} us", abort_medians[i], commit_medians[i])));
  }
  return r;
}

namespace {

double write_mbs(const fs::path& p, std::size_t size, std::size_t block, const std::string& pattern) {
  auto t0 = Clock::now();
  posix::UniqueFd fd = posix::open_or_throw(p, O_WRONLY | O_CREAT | O_TRUNC, 0644);
  for (std::size_t off = 0; off < size; off += block) {
    std::size_t n = std::min(block, size - off);
    if (::write(fd.get(), pattern.data(), n) != static_cast<ssize_t>(n)) throw_errno("write " + p.string());
  }
  if (::fsync(fd.get()) != 0) throw_errno("fsync " + p.string());
  fd.reset();
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return static_cast<double>(size) / 1e6 / secs;
}

double read_mbs(const fs::path& p, std::size_t block) {
  std::vector<char> buf(block);
  auto t0 = Clock::now();
  posix::UniqueFd fd = posix::open_or_throw(p, O_RDONLY);
  std::size_t total = 0;
  for (;;) {
    ssize_t n = ::read(fd.get(), buf.data(), buf.size());
    if (n < 0) throw_errno("read " + p.string());
    if (n == 0) break;
    total += static_cast<std::size_t>(n);
  }
  fd.reset();
  double secs = std::chrono::duration<double>(Clock::now() - t0).count();
  return static_cast<double>(total) / 1e6 / secs;
}

struct RwSeries {
  std::vector<double> read, write;
};

RwSeries measure(const fs::path& file, const Options& opt, std::size_t size, std::size_t block,
                 const std::string& pattern) {
  RwSeries s;
  for (int t = 0; t < opt.trials; ++t) s.write.push_back(write_mbs(file, size, block, pattern));
  read_mbs(file, block);  // warm the page cache once; timed reads are all warm
  for (int t = 0; t < opt.trials; ++t) s.read.push_back(read_mbs(file, block));
  return s;
}

}  // namespace

Report bench_throughput(const Options& opt, std::size_t file_size, std::size_t block) {
  Report r;
  r.scenario = "throughput";
  r.environment = environment_fingerprint(opt.workdir);
  r.environment["page_cache"] = "warm: one untimed read before the timed reads";
  r.environment["write_sync"] = "fsync before close on every timed write";

  std::string pattern(block, '\0');
  std::mt19937_64 rng(7);
  for (auto& c : pattern) c = static_cast<char>(rng());

  fs::path root = fresh_dir(opt.workdir / "throughput");
  fs::create_directories(root / "native");
  RwSeries native = measure(root / "native" / "tp.dat", opt, file_size, block, pattern);
  r.points.push_back(make_point("throughput", "native-read", "MB/s", native.read));
  r.points.push_back(make_point("throughput", "native-write", "MB/s", native.write));
  posix::remove_tree(root / "native");

  auto mounted_run = [&](bool honor_fsync, const std::string& tag) -> bool {
    fs::path sub = root / tag;
    Harness h(sub, opt.use_mount, honor_fsync);
    r.environment["transport"] = h.transport();
    if (!h.mounted()) return false;
    h.run("create . tp", "create");
    RwSeries m = measure(h.mountpoint() / "@tp" / "tp.dat", opt, file_size, block, pattern);
    r.points.push_back(make_point("throughput", tag + "-read", "MB/s", m.read));
    r.points.push_back(make_point("throughput", tag + "-write", "MB/s", m.write));
    return true;
  };
  bool ok = mounted_run(false, "mounted") && mounted_run(true, "mounted-fsync");
  posix::remove_tree(root);
  if (!ok) {
    r.checks.push_back(check("mounted throughput measured", false, "FUSE mount unavailable"));
    return r;
  }

  double ratio = r.find("throughput", "mounted-read")->median /
                 r.find("throughput", "native-read")->median;
  r.checks.push_back(check("mounted read >= 10% of native", ratio >= 0.10,
                           fmt::format("ratio {:.3f}", ratio), true));
  double fsync_w = r.find("throughput", "mounted-fsync-write")->median;
  double native_w = r.find("throughput", "native-write")->median;
  r.checks.push_back(check("with fsync honored, mounted write <= native write", fsync_w <= native_w,
                           fmt::format("{:.0f} vs {:.0f} MB/s", fsync_w, native_w), true));
  return r;
}

std::map<std::string, std::string> environment_fingerprint(const fs::path& workdir) {
  std::map<std::string, std::string> env;
  std::ifstream cpuinfo("/proc/cpuinfo");
  for (std::string line; std::getline(cpuinfo, line);) {
    if (line.starts_with("model name")) {
      env["cpu"] = line.substr(line.find(':') + 2);
      break;
    }
  }
  env["cpus"] = std::to_string(std::thread::hardware_concurrency());
  struct utsname u {};
  if (::uname(&u) == 0) env["kernel"] = fmt::format("{} {} {}", u.sysname, u.release, u.machine);
  struct statfs sf {};
  if (::statfs(workdir.c_str(), &sf) == 0) {
    switch (static_cast<unsigned long>(sf.f_type)) {
      case EXT4_SUPER_MAGIC: env["storage"] = "ext4"; break;
      case TMPFS_MAGIC: env["storage"] = "tmpfs"; break;
      case OVERLAYFS_SUPER_MAGIC: env["storage"] = "overlayfs"; break;
      case XFS_SUPER_MAGIC: env["storage"] = "xfs"; break;
      case BTRFS_SUPER_MAGIC: env["storage"] = "btrfs"; break;
      default: env["storage"] = fmt::format("fs magic 0x{:x}", static_cast<unsigned long>(sf.f_type));
    }
  }
  env["workdir"] = workdir.string();
  return env;
}

std::string to_csv(const std::vector<Report>& reports) {
  std::string out = "scenario,param,trial,value_us_or_mbs\n";
  for (const auto& r : reports) {
    for (const auto& p : r.points) {
      for (std::size_t i = 0; i < p.samples.size(); ++i) {
        out += fmt::format("{},{},{},{:.3f}\n", p.scenario, p.param, i + 1, p.samples[i]);
      }
    }
  }
  return out;
}

namespace {

std::string cell(const Report& r, const std::string& sc, const std::string& param) {
  const Point* p = r.find(sc, param);
  return p ? fmt::format("{:.0f}", p->median) : "-";
}

std::vector<std::string> params_of(const Report& r, const std::string& sc) {
  std::vector<std::string> out;
  for (const auto& p : r.points) {
    if (p.scenario == sc) out.push_back(p.param);
  }
  return out;
}

}  // namespace

std::string to_markdown(const std::vector<Report>& reports) {
  std::ostringstream md;
  md << "# branchfs benchmark report\n\n";
  if (!reports.empty()) {
    md << "| Environment | |\n|---|---|\n";
    for (const auto& [k, v] : reports.front().environment) md << "| " << k << " | " << v << " |\n";
    md << "\n";
  }
  for (const auto& r : reports) {
    if (r.scenario == "creation") {
      md << "## Branch creation latency vs base size\n\n"
         << "| Base files | Creation median (us) | End-to-end median (us) |\n|---:|---:|---:|\n";
      for (const auto& p : params_of(r, "creation")) {
        md << "| " << p << " | " << cell(r, "creation", p) << " | " << cell(r, "creation_e2e", p)
           << " |\n";
      }
    } else if (r.scenario == "commit_abort") {
      md << "## Commit and abort latency vs modification size\n\n"
         << "| Modification | Commit (us) | Abort (us) | Commit e2e (us) | Abort e2e (us) |\n"
         << "|---:|---:|---:|---:|---:|\n";
      for (const auto& p : params_of(r, "commit")) {
        md << "| " << p << " | " << cell(r, "commit", p) << " | " << cell(r, "abort", p) << " | "
           << cell(r, "commit_e2e", p) << " | " << cell(r, "abort_e2e", p) << " |\n";
      }
    } else if (r.scenario == "throughput") {
      md << "## Sequential throughput\n\n| Mode | Read (MB/s) | Write (MB/s) |\n|---|---:|---:|\n";
      for (const char* mode : {"native", "mounted", "mounted-fsync"}) {
        std::string m = mode;
        if (!r.find("throughput", m + "-read")) continue;
        md << "| " << m << " | " << cell(r, "throughput", m + "-read") << " | "
           << cell(r, "throughput", m + "-write") << " |\n";
      }
    }
    md << "\n";
    for (const auto& c : r.checks) {
      md << "- " << (c.passed ? "PASS" : "FAIL") << (c.informational ? " (informational)" : "")
         << ": " << c.name << " (" << c.detail << ")\n";
    }
    md << "\n";
  }
  return md.str();
}

}  // namespace branchfs::bench
