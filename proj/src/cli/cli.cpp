#include "branchfs/cli/cli.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/mount.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <thread>

#include <CLI11.hpp>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/spdlog.h>

#include "branchfs/bench/bench.hpp"
#include "branchfs/branch_store.hpp"
#include "branchfs/client/control_client.hpp"
#include "branchfs/control.hpp"
#include "branchfs/error.hpp"
#include "branchfs/vfs/branch_fs.hpp"
#include "branchfs/vfs/fuse_server.hpp"

namespace branchfs::cli {

namespace fs = std::filesystem;

int exit_code_for_errno(int err) {
  switch (err) {
    case 0: return kOk;
    case ENOENT: return kNotFound;
    case EEXIST: return kExists;
    case ESTALE: return kStale;
    case EROFS: return kFrozen;
    case EINVAL: return kInvalid;
    default: return kFailure;
  }
}

namespace {

struct MountArgs {
  fs::path base;
  fs::path mountpoint;
  fs::path store;
  std::string default_branch = "root";
  bool no_control = false;
  std::size_t fd_cache = 256;
  bool honor_fsync = false;
  std::string log_level = "info";
  fs::path log_file;
  bool foreground = false;
};

fs::path default_store_for(const fs::path& base) {
  fs::path b = fs::absolute(base).lexically_normal();
  if (b.filename().empty()) b = b.parent_path();
  return b.parent_path() / ("." + b.filename().string() + ".branchfs");
}

void warn_shadowed(const fs::path& base, bool control) {
  std::error_code ec;
  for (const auto& e : fs::directory_iterator(base, ec)) {
    std::string name = e.path().filename().string();
    if (vfs::reserved_at_root(name, control)) {
      std::fprintf(stderr, "branchfs: warning: base entry '%s' is hidden by the mount\n",
                   name.c_str());
    }
  }
}

// Serves until unmounted from outside or signalled. Returns the exit code.
int serve(const MountArgs& a, int ready_fd) {
  auto report = [&](char c) {
    if (ready_fd >= 0) {
      [[maybe_unused]] auto n = ::write(ready_fd, &c, 1);
      ::close(ready_fd);
      ready_fd = -1;
    }
  };
  sigset_t set;
  sigemptyset(&set);
  for (int s : {SIGINT, SIGTERM, SIGHUP, SIGUSR1}) sigaddset(&set, s);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  std::unique_ptr<BranchStore> store;
  std::unique_ptr<vfs::BranchFs> bfs;
  std::unique_ptr<vfs::FuseServer> server;
  try {
    store = std::make_unique<BranchStore>(a.base, a.store);
    vfs::MountConfig cfg;
    cfg.base_dir = a.base;
    cfg.mountpoint = a.mountpoint;
    cfg.store_dir = a.store;
    cfg.default_branch = BranchId::parse(a.default_branch);
    cfg.allow_control = !a.no_control;
    cfg.fd_cache_capacity = a.fd_cache;
    cfg.honor_fsync = a.honor_fsync;
    if (!store->is_live(cfg.default_branch)) {
      throw BranchError(Errc::kNotFound, "default branch " + a.default_branch + " is not live");
    }
    bfs = std::make_unique<vfs::BranchFs>(*store, cfg);
    server = std::make_unique<vfs::FuseServer>(*bfs, a.mountpoint);
    server->start();
  } catch (const std::exception& e) {
    spdlog::error("mount failed: {}", e.what());
    std::fprintf(stderr, "branchfs: mount failed: %s\n", e.what());
    report('1');
    return kFailure;
  }
  report('0');

  std::thread signals([&] {
    int sig = 0;
    sigwait(&set, &sig);
    if (sig != SIGUSR1) {
      spdlog::info("signal {}; unmounting", sig);
      server->stop();
    }
  });
  server->wait();
  ::kill(::getpid(), SIGUSR1);
  signals.join();
  server->stop();
  return kOk;
}

int do_mount(MountArgs a) {
  std::error_code ec;
  if (!fs::is_directory(a.base, ec)) {
    std::fprintf(stderr, "branchfs: base %s is not a directory\n", a.base.c_str());
    return kUsage;
  }
  if (!fs::is_directory(a.mountpoint, ec)) {
    std::fprintf(stderr, "branchfs: mountpoint %s is not a directory\n", a.mountpoint.c_str());
    return kUsage;
  }
  a.base = fs::canonical(a.base);
  a.mountpoint = fs::canonical(a.mountpoint);
  if (a.store.empty()) a.store = default_store_for(a.base);
  a.store = fs::absolute(a.store);
  warn_shadowed(a.base, !a.no_control);

  auto level = spdlog::level::from_str(a.log_level);
  spdlog::set_level(level);
  if (!a.log_file.empty()) {
    spdlog::set_default_logger(spdlog::basic_logger_mt("branchfs", a.log_file.string()));
    spdlog::set_level(level);
    spdlog::flush_on(spdlog::level::info);
  }
  if (a.foreground) return serve(a, -1);

  int pipefd[2];
  if (::pipe2(pipefd, O_CLOEXEC) != 0) {
    std::perror("branchfs: pipe");
    return kFailure;
  }
  pid_t pid = ::fork();
  if (pid < 0) {
    std::perror("branchfs: fork");
    return kFailure;
  }
  if (pid == 0) {
    ::close(pipefd[0]);
    ::setsid();
    if (::chdir("/") != 0) ::_exit(kFailure);
    int devnull = ::open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      ::dup2(devnull, 0);
      ::dup2(devnull, 1);
      // Startup failures are reported through the pipe; keep stderr until then.
      ::close(devnull);
    }
    int rc = serve(a, pipefd[1]);
    ::_exit(rc);
  }
  ::close(pipefd[1]);
  char c = '1';
  ssize_t n;
  do {
    n = ::read(pipefd[0], &c, 1);
  } while (n < 0 && errno == EINTR);
  ::close(pipefd[0]);
  if (n != 1 || c != '0') return kFailure;
  std::printf("%d\n", pid);
  return kOk;
}

int do_umount(const fs::path& mountpoint, bool lazy) {
  if (::umount2(mountpoint.c_str(), lazy ? MNT_DETACH : 0) != 0) {
    std::fprintf(stderr, "branchfs: umount %s: %s\n", mountpoint.c_str(), std::strerror(errno));
    return errno == EINVAL || errno == ENOENT ? kUsage : kFailure;
  }
  return kOk;
}

client::ControlClient connect(const std::optional<fs::path>& mount) {
  return client::ControlClient(client::locate_control(mount));
}

int send(const std::optional<fs::path>& mount, const control::Command& cmd) {
  auto c = connect(mount);
  int err = c.send(cmd);
  if (err != 0) {
    std::string line = control::format_line(cmd);
    line.pop_back();
    std::fprintf(stderr, "branchfs: %s: %s\n", line.c_str(), std::strerror(err));
  }
  return exit_code_for_errno(err);
}

int do_list(const std::optional<fs::path>& mount, bool porcelain) {
  auto rows = connect(mount).list();
  if (porcelain) {
    for (const auto& r : rows) {
      std::printf("%s\t%s\t%s\t%llu\n", r.name.c_str(), r.parent.c_str(), r.state.c_str(),
                  static_cast<unsigned long long>(r.epoch));
    }
    return kOk;
  }
  std::size_t w = 6, pw = 6;
  for (const auto& r : rows) {
    w = std::max(w, r.name.size());
    pw = std::max(pw, r.parent.size());
  }
  std::printf("%-*s  %-*s  %-9s  %s\n", static_cast<int>(w), "BRANCH", static_cast<int>(pw),
              "PARENT", "STATE", "EPOCH");
  for (const auto& r : rows) {
    std::printf("%-*s  %-*s  %-9s  %llu\n", static_cast<int>(w), r.name.c_str(),
                static_cast<int>(pw), r.parent.c_str(), r.state.c_str(),
                static_cast<unsigned long long>(r.epoch));
  }
  return kOk;
}

int do_status(const std::optional<fs::path>& mount, bool live_only) {
  auto rows = connect(mount).list();
  std::multimap<std::string, const control::ListingRow*> children;
  const control::ListingRow* root = nullptr;
  for (const auto& r : rows) {
    if (r.parent == "-") {
      root = &r;
    } else {
      children.emplace(r.parent, &r);
    }
  }
  if (!root) return kFailure;
  auto terminal = [](const std::string& s) { return s == "Committed" || s == "Aborted"; };
  std::function<void(const control::ListingRow&, const std::string&, bool, bool)> print =
      [&](const control::ListingRow& r, const std::string& prefix, bool last, bool top) {
        std::printf("%s%s%s (%s, epoch %llu)\n", prefix.c_str(),
                    top ? "" : (last ? "`-- " : "|-- "), r.name.c_str(), r.state.c_str(),
                    static_cast<unsigned long long>(r.epoch));
        std::vector<const control::ListingRow*> kids;
        auto [lo, hi] = children.equal_range(r.name);
        for (auto it = lo; it != hi; ++it) {
          if (!live_only || !terminal(it->second->state)) kids.push_back(it->second);
        }
        std::string next = top ? "" : prefix + (last ? "    " : "|   ");
        for (std::size_t i = 0; i < kids.size(); ++i) {
          print(*kids[i], next, i + 1 == kids.size(), false);
        }
      };
  print(*root, "", true, true);
  return kOk;
}

struct BenchArgs {
  std::string scenario;
  fs::path workdir;
  fs::path out;
  int trials = 10;
  std::vector<std::size_t> sizes;
  std::size_t file_mb = 50;
  std::size_t block_kib = 64;
  bool direct = false;
};

int do_bench(const BenchArgs& a) {
  bench::Options opt;
  opt.workdir = a.workdir.empty() ? fs::temp_directory_path() / "branchfs-bench" : a.workdir;
  opt.trials = a.trials;
  opt.use_mount = !a.direct;
  fs::create_directories(opt.workdir);

  std::vector<bench::Report> reports;
  auto want = [&](const char* s) { return a.scenario == "all" || a.scenario == s; };
  if (want("creation")) {
    reports.push_back(a.sizes.empty() ? bench::bench_creation(opt)
                                      : bench::bench_creation(opt, a.sizes));
  }
  if (want("commit_abort")) {
    reports.push_back(a.sizes.empty() ? bench::bench_commit_abort(opt)
                                      : bench::bench_commit_abort(opt, a.sizes));
  }
  if (want("throughput")) {
    reports.push_back(bench::bench_throughput(opt, a.file_mb * 1000 * 1000, a.block_kib * 1024));
  }

  std::string md = bench::to_markdown(reports);
  if (a.out.empty()) {
    std::fputs(md.c_str(), stdout);
  } else {
    fs::path stem = a.out;
    if (stem.extension() == ".csv" || stem.extension() == ".md") stem.replace_extension();
    std::ofstream(fs::path(stem).concat(".csv")) << bench::to_csv(reports);
    std::ofstream(fs::path(stem).concat(".md")) << md;
    std::printf("wrote %s.csv and %s.md\n", stem.c_str(), stem.c_str());
  }
  bool ok = std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed(); });
  return ok ? kOk : kFailure;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"branchfs: copy-on-write branches of a directory"};
  app.require_subcommand(1);

  MountArgs ma;
  auto* mount = app.add_subcommand("mount", "mount a base directory with branch views");
  mount->add_option("--base", ma.base, "directory to branch")->required();
  mount->add_option("--mountpoint", ma.mountpoint, "where to mount")->required();
  mount->add_option("--store", ma.store, "delta storage (default: .<base>.branchfs beside base)");
  mount->add_option("--default-branch", ma.default_branch, "branch shown at the mount root");
  mount->add_flag("--no-control", ma.no_control, "do not expose the control file");
  mount->add_option("--fd-cache", ma.fd_cache, "cached read descriptors (0 disables)");
  mount->add_flag("--honor-fsync", ma.honor_fsync, "pass fsync through instead of ignoring it");
  mount->add_option("--log-level", ma.log_level, "trace|debug|info|warn|error|off");
  mount->add_option("--log-file", ma.log_file, "log destination when daemonized");
  mount->add_flag("-f,--foreground", ma.foreground, "stay in the foreground");

  fs::path um_point;
  bool um_lazy = false;
  auto* umount = app.add_subcommand("umount", "unmount");
  umount->add_option("mountpoint", um_point)->required();
  umount->add_flag("--lazy", um_lazy, "detach even if busy");

  std::optional<fs::path> target;
  auto add_mount_opt = [&](CLI::App* sub) {
    sub->add_option("-m,--mount", target, "mountpoint (default: $BRANCHFS_CTL, $BRANCHFS_MOUNT, or cwd)");
  };

  std::string parent = ".";
  std::vector<std::string> names;
  auto* create = app.add_subcommand("create", "create a branch, or an exclusive group of several");
  create->add_option("-p,--parent", parent, "parent branch (default: the mount's default)");
  create->add_option("names", names, "branch names")->required();
  add_mount_opt(create);

  std::string one;
  auto* commit = app.add_subcommand("commit", "commit a branch into its parent");
  commit->add_option("name", one, "branch (default: $BRANCH_NAME)");
  add_mount_opt(commit);
  auto* abort = app.add_subcommand("abort", "discard a branch and its descendants");
  abort->add_option("name", one, "branch (default: $BRANCH_NAME)");
  add_mount_opt(abort);

  bool porcelain = false;
  auto* list = app.add_subcommand("list", "list branches");
  list->add_flag("--porcelain", porcelain, "tab-separated name, parent, state, epoch");
  add_mount_opt(list);

  bool live_only = false;
  auto* status = app.add_subcommand("status", "show the branch tree");
  status->add_flag("--live", live_only, "hide committed and aborted branches");
  add_mount_opt(status);

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "run benchmarks");
  bench->add_option("scenario", ba.scenario, "creation|commit_abort|throughput|all")
      ->required()
      ->check(CLI::IsMember({"creation", "commit_abort", "throughput", "all"}));
  bench->add_option("--workdir", ba.workdir, "scratch directory");
  bench->add_option("--out", ba.out, "report path; writes <stem>.csv and <stem>.md");
  bench->add_option("--trials", ba.trials, "trials per point")->check(CLI::Range(3, 1000));
  bench->add_option("--sizes", ba.sizes, "base file counts or modification sizes in bytes");
  bench->add_option("--file-mb", ba.file_mb, "throughput file size (MB)");
  bench->add_option("--block-kib", ba.block_kib, "throughput block size (KiB)");
  bench->add_flag("--direct", ba.direct, "call the store directly instead of through a mount");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  auto branch_arg = [&]() -> std::optional<std::string> {
    if (!one.empty()) return one;
    if (const char* env = std::getenv("BRANCH_NAME"); env && *env) return std::string(env);
    std::fprintf(stderr, "branchfs: no branch given and BRANCH_NAME is not set\n");
    return std::nullopt;
  };

  try {
    if (*mount) return do_mount(ma);
    if (*umount) return do_umount(um_point, um_lazy);
    if (*bench) return do_bench(ba);
    if (*create) {
      control::Command cmd{control::Verb::kCreate, {parent}};
      cmd.args.insert(cmd.args.end(), names.begin(), names.end());
      return send(target, cmd);
    }
    if (*commit || *abort) {
      auto name = branch_arg();
      if (!name) return kUsage;
      return send(target, {*commit ? control::Verb::kCommit : control::Verb::kAbort, {*name}});
    }
    if (*list) return do_list(target, porcelain);
    if (*status) return do_status(target, live_only);
  } catch (const client::Unreachable& e) {
    std::fprintf(stderr, "branchfs: %s\n", e.what());
    return kUnreachable;
  } catch (const BranchError& e) {
    std::fprintf(stderr, "branchfs: %s\n", e.what());
    return exit_code_for_errno(e.to_errno());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "branchfs: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}

}  // namespace branchfs::cli
