/* Branch ioctls accepted on any file or directory descriptor inside a
 * branchfs mount. The descriptor's path decides which branch is meant:
 * "<mnt>/@name/..." is branch `name`, any other path is the mount's default
 * branch.
 *
 *   FS_IOC_BRANCH_CREATE   forks a child of the descriptor's branch. The
 *                          return value is a positive serial n; the child is
 *                          named "ioc-<n>" and appears as <mnt>/@ioc-<n>.
 *   FS_IOC_BRANCH_COMMIT   commits the descriptor's branch into its parent.
 *   FS_IOC_BRANCH_ABORT    aborts the descriptor's branch and its subtree.
 *
 * FS_IOC_BRANCH_CREATE_NAMED is CREATE with an output buffer: same return
 * value, and the NUL-terminated child name is copied into the struct.
 *
 * Errors come back through errno: ESTALE (group already resolved or parent
 * moved on), EROFS (branch has live children), EINVAL (root branch,
 * finished branch), ENOENT (unknown branch), EOPNOTSUPP (other 'b' codes).
 */
#ifndef BRANCHFS_IOCTL_H
#define BRANCHFS_IOCTL_H

#include <linux/ioctl.h>

#define BRANCHFS_IOC_MAGIC 'b'
#define BRANCHFS_NAME_MAX 256

struct branchfs_ioc_name {
  char name[BRANCHFS_NAME_MAX];
};

#define FS_IOC_BRANCH_CREATE _IO(BRANCHFS_IOC_MAGIC, 0)
#define FS_IOC_BRANCH_COMMIT _IO(BRANCHFS_IOC_MAGIC, 1)
#define FS_IOC_BRANCH_ABORT _IO(BRANCHFS_IOC_MAGIC, 2)
#define FS_IOC_BRANCH_CREATE_NAMED _IOR(BRANCHFS_IOC_MAGIC, 0, struct branchfs_ioc_name)

#endif
