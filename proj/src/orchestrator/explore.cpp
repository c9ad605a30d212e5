#include "branchfs/orchestrator/explore.hpp"

#include <fcntl.h>
#include <sched.h>
#include <signal.h>
#include <sys/mount.h>
#include <sys/prctl.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <thread>

#include "branchfs/client/control_client.hpp"
#include "branchfs/vfs/router.hpp"

extern char** environ;

namespace branchfs::orchestrator {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct ProcInfo {
  pid_t pid;
  pid_t ppid;
  pid_t pgrp;
};

std::vector<ProcInfo> scan_processes() {
  std::vector<ProcInfo> out;
  std::error_code ec;
  for (const auto& e : fs::directory_iterator("/proc", ec)) {
    const std::string name = e.path().filename().string();
    if (name.empty() || name.find_first_not_of("0123456789") != std::string::npos) continue;
    std::ifstream in(e.path() / "stat");
    std::string line;
    if (!std::getline(in, line)) continue;
    // The command name may contain spaces and parentheses; fields resume
    // after the last ')'.
    auto close = line.rfind(')');
    if (close == std::string::npos) continue;
    char state;
    int ppid, pgrp;
    if (std::sscanf(line.c_str() + close + 1, " %c %d %d", &state, &ppid, &pgrp) != 3) continue;
    if (state == 'Z') continue;
    out.push_back({static_cast<pid_t>(std::stoi(name)), ppid, pgrp});
  }
  return out;
}

std::set<pid_t> current_children() {
  std::set<pid_t> out;
  pid_t self = ::getpid();
  for (const auto& p : scan_processes()) {
    if (p.ppid == self) out.insert(p.pid);
  }
  return out;
}

std::string default_prefix() {
  auto ns = Clock::now().time_since_epoch().count();
  return "run" + std::to_string(::getpid()) + "-" + std::to_string(ns % 1000000);
}

std::vector<std::string> child_env(const ChildResult& c, const fs::path& ws, const std::string& ctl) {
  std::vector<std::string> env;
  for (char** e = environ; *e; ++e) {
    std::string_view kv(*e);
    if (kv.starts_with("BRANCH_INDEX=") || kv.starts_with("BRANCH_NAME=") ||
        kv.starts_with("BRANCHFS_CTL=") || kv.starts_with("BRANCHFS_MOUNT=")) {
      continue;
    }
    env.emplace_back(kv);
  }
  env.push_back("BRANCH_INDEX=" + std::to_string(c.index));
  env.push_back("BRANCH_NAME=" + c.branch);
  env.push_back("BRANCHFS_CTL=" + ctl);
  env.push_back("BRANCHFS_MOUNT=" + ws.string());
  return env;
}

void close_inherited(int keep) {
  if (keep < 0) {
    if (::close_range(3, ~0u, 0) == 0) return;
  }
  long max = ::sysconf(_SC_OPEN_MAX);
  for (int fd = 3; fd < (max > 0 ? max : 1024); ++fd) {
    if (fd != keep) ::close(fd);
  }
}

class Explorer {
 public:
  explicit Explorer(const ExploreSpec& spec) : spec_(spec) {}

  ExploreOutcome run() {
    if (spec_.n_branches < 1) throw std::invalid_argument("n_branches must be at least 1");
    if (spec_.command.empty()) throw std::invalid_argument("command must not be empty");
    ws_ = fs::absolute(spec_.workspace);
    ctl_path_ = ws_ / vfs::kControlName;
    std::error_code ec;
    if (!fs::exists(ctl_path_, ec)) {
      throw WorkspaceError(ws_.string() + " is not a branchfs mount (no control file)");
    }
    client_.emplace(ctl_path_);
    ::prctl(PR_SET_CHILD_SUBREAPER, 1);
    preexisting_ = current_children();

    std::string prefix = spec_.name_prefix.empty() ? default_prefix() : spec_.name_prefix;
    control::Command create{control::Verb::kCreate, {spec_.parent}};
    for (int i = 1; i <= spec_.n_branches; ++i) {
      ChildResult c;
      c.index = i;
      c.branch = prefix + "-" + std::to_string(i);
      create.args.push_back(c.branch);
      out_.children.push_back(std::move(c));
    }
    if (int err = send(create); err != 0) {
      throw WorkspaceError("creating branches failed: " + std::string(std::strerror(err)));
    }

    for (auto& c : out_.children) spawn(c);
    supervise();
    terminate_all();
    reap_escapees();
    finish_branches();
    return std::move(out_);
  }

 private:
  int send(const control::Command& cmd) { return client_->send(cmd); }

  void spawn(ChildResult& c) {
    auto env = child_env(c, ws_, ctl_path_.string());
    int ctl_fd = -1;
    if (spec_.bind_namespace) {
      ctl_fd = ::open(ctl_path_.c_str(), O_RDWR);
      if (ctl_fd >= 0) env.back() = "BRANCHFS_CTL=/proc/self/fd/" + std::to_string(ctl_fd);
    }
    std::vector<char*> argv, envp;
    for (auto& a : spec_.command) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    for (auto& e : env) envp.push_back(e.data());
    envp.push_back(nullptr);
    fs::path view = ws_ / ("@" + c.branch);
    std::string view_s = view.string(), ws_s = ws_.string();

    c.duration = {};
    auto started = Clock::now();
    pid_t pid = ::fork();
    if (pid == 0) {
      ::setpgid(0, 0);
      ::signal(SIGTERM, SIG_DFL);
      ::signal(SIGINT, SIG_DFL);
      const char* dir = view_s.c_str();
      if (spec_.bind_namespace) {
        if (::unshare(CLONE_NEWNS) == 0 &&
            ::mount(nullptr, "/", nullptr, MS_REC | MS_PRIVATE, nullptr) == 0 &&
            ::mount(view_s.c_str(), ws_s.c_str(), nullptr, MS_BIND, nullptr) == 0) {
          dir = ws_s.c_str();
        }
      }
      if (::chdir(dir) != 0) ::_exit(126);
      if (spec_.close_fds) close_inherited(ctl_fd);
      ::execvpe(argv[0], argv.data(), envp.data());
      ::_exit(127);
    }
    if (ctl_fd >= 0) ::close(ctl_fd);
    if (pid < 0) {
      send({control::Verb::kAbort, {c.branch}});
      return;
    }
    ::setpgid(pid, pid);  // also done in the child; whichever runs first wins
    c.pid = pid;
    c.spawned = true;
    starts_[c.index] = started;
  }

  bool any_running() const {
    for (const auto& c : out_.children) {
      if (c.spawned && !c.exited) return true;
    }
    return false;
  }

  // Returns true when this exit produced the winner.
  bool on_exit(ChildResult& c) {
    if (out_.winner) return false;
    bool success = WIFEXITED(c.wait_status) && WEXITSTATUS(c.wait_status) == 0;
    if (spec_.self_commit) {
      for (const auto& row : client_->list()) {
        if (row.name == c.branch && row.state == "Committed") {
          out_.winner = c.index;
          return true;
        }
      }
      return false;
    }
    if (!success) return false;
    if (send({control::Verb::kCommit, {c.branch}}) == 0) {
      out_.winner = c.index;
      return true;
    }
    return false;
  }

  bool poll_children() {
    for (auto& c : out_.children) {
      if (!c.spawned || c.exited) continue;
      int status = 0;
      pid_t r = ::waitpid(c.pid, &status, WNOHANG);
      if (r == c.pid) {
        c.exited = true;
        c.wait_status = status;
        c.duration = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() -
                                                                           starts_[c.index]);
        if (on_exit(c)) return true;
      }
    }
    return false;
  }

  void supervise() {
    while (any_running()) {
      if (poll_children()) return;
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
  }

  void signal_groups(int sig) {
    for (const auto& c : out_.children) {
      if (c.spawned) ::killpg(c.pid, sig);
    }
  }

  void terminate_all() {
    for (auto& c : out_.children) {
      if (c.spawned && !c.exited) c.terminated = true;
    }
    // Process groups may outlive their leader, so every group is signalled.
    signal_groups(SIGTERM);
    auto deadline = Clock::now() + spec_.grace;
    while (any_running() && Clock::now() < deadline) {
      poll_children();
      std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    signal_groups(SIGKILL);
    for (auto& c : out_.children) {
      if (!c.spawned || c.exited) continue;
      int status = 0;
      ::waitpid(c.pid, &status, 0);
      c.exited = true;
      c.wait_status = status;
      c.duration =
          std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - starts_[c.index]);
    }
  }

  void reap_escapees() {
    std::set<pid_t> groups;
    for (const auto& c : out_.children) {
      if (c.spawned) groups.insert(c.pid);
    }
    pid_t self = ::getpid();
    for (int round = 0; round < 50; ++round) {
      std::vector<pid_t> found;
      for (const auto& p : scan_processes()) {
        bool in_group = groups.count(p.pgrp) > 0;
        bool adopted = p.ppid == self && !preexisting_.count(p.pid);
        if (in_group || adopted) found.push_back(p.pid);
      }
      if (found.empty()) return;
      for (pid_t pid : found) {
        ::kill(pid, SIGKILL);
        if (std::find(out_.escaped.begin(), out_.escaped.end(), pid) == out_.escaped.end()) {
          out_.escaped.push_back(pid);
        }
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
      for (pid_t pid : found) ::waitpid(pid, nullptr, WNOHANG);
    }
  }

  void finish_branches() {
    for (const auto& c : out_.children) {
      if (out_.winner && *out_.winner == c.index) continue;
      send({control::Verb::kAbort, {c.branch}});
    }
    if (!out_.winner) return;
    const std::string& name = out_.children[static_cast<size_t>(*out_.winner - 1)].branch;
    auto rows = client_->list();
    CommitSummary s;
    s.branch = name;
    for (const auto& r : rows) {
      if (r.name == name) s.parent = r.parent;
    }
    for (const auto& r : rows) {
      if (r.name == s.parent) s.parent_epoch = r.epoch;
    }
    out_.commit = s;
  }

  const ExploreSpec& spec_;
  fs::path ws_;
  fs::path ctl_path_;
  std::optional<client::ControlClient> client_;
  std::set<pid_t> preexisting_;
  std::map<int, Clock::time_point> starts_;
  ExploreOutcome out_;
};

int child_op(control::Verb verb) {
  const char* name = std::getenv("BRANCH_NAME");
  if (!name || !*name) throw std::runtime_error("BRANCH_NAME is not set");
  client::ControlClient c(client::locate_control(std::nullopt));
  int err = c.send({verb, {name}});
  return -err;
}

}  // namespace

ExploreOutcome explore(const ExploreSpec& spec) { return Explorer(spec).run(); }

int child_commit() { return child_op(control::Verb::kCommit); }
int child_abort() { return child_op(control::Verb::kAbort); }

}  // namespace branchfs::orchestrator
