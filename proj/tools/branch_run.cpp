// branch-run: run one command per branch of an exclusive group and keep the
// first success.
//
// Exit status: 0 a branch committed, 1 every worker failed, 2 usage error,
// 3 the workspace is not a usable branchfs mount.

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "branchfs/client/control_client.hpp"
#include "branchfs/orchestrator/explore.hpp"

namespace orch = branchfs::orchestrator;

namespace {

std::string describe(const orch::ChildResult& c) {
  if (!c.spawned) return "not started";
  if (WIFEXITED(c.wait_status)) return "exit " + std::to_string(WEXITSTATUS(c.wait_status));
  if (WIFSIGNALED(c.wait_status)) return "signal " + std::to_string(WTERMSIG(c.wait_status));
  return "status " + std::to_string(c.wait_status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run a command in N competing branches; the first to succeed is committed"};
  orch::ExploreSpec spec;
  double grace_s = 2.0;
  bool quiet = false;
  app.add_option("--workspace,-w", spec.workspace, "branchfs mountpoint")->required();
  app.add_option("-n,--branches", spec.n_branches, "number of branches")
      ->check(CLI::PositiveNumber);
  app.add_option("--parent", spec.parent, "parent branch (default: the mount's default)");
  app.add_option("--prefix", spec.name_prefix, "branch name prefix");
  app.add_flag("--self-commit", spec.self_commit,
               "workers commit themselves through the control file");
  app.add_option("--grace", grace_s, "seconds between SIGTERM and SIGKILL for losers")
      ->check(CLI::NonNegativeNumber);
  app.add_flag("--close-fds", spec.close_fds, "close inherited descriptors above stderr");
  app.add_flag("--bind-namespace", spec.bind_namespace,
               "bind each branch view over the workspace in a private mount namespace");
  app.add_flag("-q,--quiet", quiet, "no summary on stderr");
  app.add_option("command", spec.command, "command to run (after --)")->required();
  app.positionals_at_end();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  spec.grace = std::chrono::milliseconds(std::llround(grace_s * 1000));

  orch::ExploreOutcome out;
  try {
    out = orch::explore(spec);
  } catch (const orch::WorkspaceError& e) {
    std::cerr << "branch-run: " << e.what() << "\n";
    return 3;
  } catch (const branchfs::client::Unreachable& e) {
    std::cerr << "branch-run: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "branch-run: " << e.what() << "\n";
    return 2;
  }

  if (!quiet) {
    for (const auto& c : out.children) {
      bool won = out.winner && *out.winner == c.index;
      std::fprintf(stderr, "branch-run: %d %s %s %lldms%s%s\n", c.index, c.branch.c_str(),
                   describe(c).c_str(), static_cast<long long>(c.duration.count()),
                   c.terminated ? " terminated" : "", won ? " winner" : "");
    }
    for (pid_t pid : out.escaped) std::fprintf(stderr, "branch-run: killed stray pid %d\n", pid);
    if (out.commit) {
      std::fprintf(stderr, "branch-run: committed %s into %s (epoch %llu)\n",
                   out.commit->branch.c_str(), out.commit->parent.c_str(),
                   static_cast<unsigned long long>(out.commit->parent_epoch));
    } else {
      std::fprintf(stderr, "branch-run: no branch succeeded\n");
    }
  }
  if (out.winner) {
    std::printf("%s\n", out.children[static_cast<size_t>(*out.winner - 1)].branch.c_str());
    return 0;
  }
  return 1;
}
