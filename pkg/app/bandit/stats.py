"""Per-user sufficient statistics A_i, B_i of the linear reward model."""
import numpy as np

from app.bandit.exceptions import InvalidInputError


class SufficientStats:
    """A_i = sum phi phi^T, B_i = sum phi * reward, plus counts and sum of squares.

    Rewards added here are the engineered rewards. Single writer; use
    ``copy()`` to hand a frozen cut to another thread.
    """

    def __init__(self, A, B, n, sum_sq):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float)
        self.n = np.asarray(n, dtype=np.int64)
        self.sum_sq = np.asarray(sum_sq, dtype=float)
        m, p = self.B.shape
        if self.A.shape != (m, p, p) or self.n.shape != (m,) or self.sum_sq.shape != (m,):
            raise InvalidInputError("inconsistent sufficient statistic shapes")

    @classmethod
    def empty(cls, m, dim):
        if m < 1:
            raise InvalidInputError(f"need at least one user, got m={m}")
        return cls(np.zeros((m, dim, dim)), np.zeros((m, dim)), np.zeros(m, dtype=np.int64), np.zeros(m))

    @classmethod
    def from_observations(cls, m, dim, observations):
        """Build from an iterable of (user, phi, reward)."""
        stats = cls.empty(m, dim)
        for user, phi, reward in observations:
            stats.add(user, phi, reward)
        return stats

    @property
    def m(self):
        return self.B.shape[0]

    @property
    def dim(self):
        return self.B.shape[1]

    @property
    def total_count(self):
        return int(self.n.sum())

    @property
    def total_sum_sq(self):
        return float(self.sum_sq.sum())

    def add(self, user, phi, reward):
        if not 0 <= user < self.m:
            raise InvalidInputError(f"user index {user} out of range for m={self.m}")
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (self.dim,):
            raise InvalidInputError(f"design vector must have {self.dim} entries, got {phi.shape}")
        reward = float(reward)
        self.A[user] += np.outer(phi, phi)
        self.B[user] += phi * reward
        self.n[user] += 1
        self.sum_sq[user] += reward * reward

    def add_user(self):
        """Append one empty user and return its index."""
        p = self.dim
        self.A = np.concatenate([self.A, np.zeros((1, p, p))])
        self.B = np.concatenate([self.B, np.zeros((1, p))])
        self.n = np.concatenate([self.n, np.zeros(1, dtype=np.int64)])
        self.sum_sq = np.concatenate([self.sum_sq, np.zeros(1)])
        return self.m - 1

    def with_users(self, m):
        """Copy padded with empty users up to m."""
        extra = m - self.m
        if extra < 0:
            raise InvalidInputError(f"cannot shrink statistics from {self.m} to {m} users")
        p = self.dim
        return SufficientStats(
            np.concatenate([self.A, np.zeros((extra, p, p))]),
            np.concatenate([self.B, np.zeros((extra, p))]),
            np.concatenate([self.n, np.zeros(extra, dtype=np.int64)]),
            np.concatenate([self.sum_sq, np.zeros(extra)]),
        )

    def pooled(self):
        """(sum A_i, sum B_i, total count, total sum of squares)."""
        return self.A.sum(axis=0), self.B.sum(axis=0), self.total_count, self.total_sum_sq

    def block_A(self):
        """blockdiag(A_1, ..., A_m) as a dense (mp, mp) matrix."""
        m, p = self.m, self.dim
        out = np.zeros((m * p, m * p))
        for i in range(m):
            out[i * p:(i + 1) * p, i * p:(i + 1) * p] = self.A[i]
        return out

    def stacked_B(self):
        return self.B.reshape(-1)

    def copy(self):
        return SufficientStats(self.A.copy(), self.B.copy(), self.n.copy(), self.sum_sq.copy())
