"""Episodic replay buffer with within-episode window sampling.

Observations are stored as uint8 to keep the footprint small; sampling
converts back to float32 in [0, 1]. Windows never cross episode
boundaries, so a done flag can only appear at the final index of a window.
"""

from __future__ import annotations

import numpy as np


def _to_u8(obs):
    return np.clip(np.rint(obs * 255.0), 0, 255).astype(np.uint8)


def _to_f32(obs_u8):
    return obs_u8.astype(np.float32) / 255.0


class _Episode:
    __slots__ = ("obs", "action", "reward", "discount", "done", "length", "finished")

    def __init__(self):
        self.obs = []
        self.action = []
        self.reward = []
        self.discount = []
        self.done = []
        self.length = 0
        self.finished = False

    def freeze(self):
        self.obs = np.stack(self.obs)
        self.action = np.asarray(self.action, dtype=np.int64)
        self.reward = np.asarray(self.reward, dtype=np.float32)
        self.discount = np.asarray(self.discount, dtype=np.float32)
        self.done = np.asarray(self.done, dtype=bool)
        self.finished = True

    def slice(self, start, length):
        sl = slice(start, start + length)
        if self.finished:
            return (self.obs[sl], self.action[sl], self.reward[sl],
                    self.discount[sl], self.done[sl])
        return (np.stack(self.obs[sl]),
                np.asarray(self.action[sl], dtype=np.int64),
                np.asarray(self.reward[sl], dtype=np.float32),
                np.asarray(self.discount[sl], dtype=np.float32),
                np.asarray(self.done[sl], dtype=bool))

    def prev_reward(self, start, length):
        out = np.zeros(length, dtype=np.float32)
        rewards = self.reward
        for j in range(length):
            k = start + j - 1
            if k >= 0:
                out[j] = rewards[k]
        return out


class ReplayBuffer:
    """Ring of episodes with a step-count capacity."""

    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.episodes = []
        self.total_steps = 0
        self._current = None

    # -- writing ------------------------------------------------------------

    def append(self, obs, action, reward, discount, done):
        """Record one step: the pre-action observation and its outcome."""
        if self._current is None:
            self._current = _Episode()
            self.episodes.append(self._current)
        ep = self._current
        ep.obs.append(_to_u8(obs))
        ep.action.append(int(action))
        ep.reward.append(float(reward))
        ep.discount.append(float(discount))
        ep.done.append(bool(done))
        ep.length += 1
        self.total_steps += 1
        if done:
            ep.freeze()
            self._current = None
        self._evict()

    def _evict(self):
        while self.total_steps > self.capacity and len(self.episodes) > 1:
            old = self.episodes[0]
            if not old.finished:
                break
            self.episodes.pop(0)
            self.total_steps -= old.length

    # -- reading ------------------------------------------------------------

    def num_steps(self):
        return self.total_steps

    def valid_starts(self, length):
        """(episode_index, start) pairs for every in-episode window."""
        out = []
        for i, ep in enumerate(self.episodes):
            n = ep.length - length + 1
            for s in range(max(0, n)):
                out.append((i, s))
        return out

    def num_windows(self, length):
        return sum(max(0, ep.length - length + 1) for ep in self.episodes)

    def sample_sequences(self, batch, length, rng):
        """Sample ``batch`` windows of ``length`` steps, uniform over starts."""
        counts = np.array([max(0, ep.length - length + 1) for ep in self.episodes])
        total = counts.sum()
        if total == 0:
            raise ValueError(
                f"replay holds no window of length {length} "
                f"({self.total_steps} steps in {len(self.episodes)} episodes)")
        cum = np.cumsum(counts)
        draws = rng.integers(0, total, size=batch)
        out = {k: [] for k in ("obs", "action", "reward", "discount", "done", "prev_reward")}
        for d in draws:
            ei = int(np.searchsorted(cum, d, side="right"))
            start = int(d - (cum[ei - 1] if ei else 0))
            ep = self.episodes[ei]
            obs, action, reward, discount, done = ep.slice(start, length)
            out["obs"].append(_to_f32(obs))
            out["action"].append(action)
            out["reward"].append(reward)
            out["discount"].append(discount)
            out["done"].append(done)
            out["prev_reward"].append(ep.prev_reward(start, length))
        return {k: np.stack(v) for k, v in out.items()}

    def sample_states(self, batch, rng):
        """Uniform single steps: (obs float32 (B,3,H,W), prev_reward (B,))."""
        counts = np.array([ep.length for ep in self.episodes])
        total = counts.sum()
        if total == 0:
            raise ValueError("replay buffer is empty")
        cum = np.cumsum(counts)
        draws = rng.integers(0, total, size=batch)
        obs, prev = [], []
        for d in draws:
            ei = int(np.searchsorted(cum, d, side="right"))
            start = int(d - (cum[ei - 1] if ei else 0))
            ep = self.episodes[ei]
            o, _, _, _, _ = ep.slice(start, 1)
            obs.append(_to_f32(o[0]))
            prev.append(ep.prev_reward(start, 1)[0])
        return np.stack(obs), np.asarray(prev, dtype=np.float32)

    # -- checkpoint support ---------------------------------------------------

    def state_arrays(self):
        """Serialize finished episodes as flat arrays (in-progress is dropped)."""
        eps = [ep for ep in self.episodes if ep.finished]
        if not eps:
            zero = {"obs": np.zeros((0, 3, 1, 1), dtype=np.uint8),
                    "action": np.zeros(0, dtype=np.int64),
                    "reward": np.zeros(0, dtype=np.float32),
                    "discount": np.zeros(0, dtype=np.float32),
                    "done": np.zeros(0, dtype=np.uint8),
                    "lengths": np.zeros(0, dtype=np.int64)}
            return zero
        return {
            "obs": np.concatenate([ep.obs for ep in eps]),
            "action": np.concatenate([ep.action for ep in eps]),
            "reward": np.concatenate([ep.reward for ep in eps]),
            "discount": np.concatenate([ep.discount for ep in eps]),
            "done": np.concatenate([ep.done for ep in eps]).astype(np.uint8),
            "lengths": np.asarray([ep.length for ep in eps], dtype=np.int64),
        }

    def load_state_arrays(self, arrays):
        self.episodes = []
        self.total_steps = 0
        self._current = None
        offset = 0
        for ln in arrays["lengths"]:
            ln = int(ln)
            ep = _Episode()
            ep.obs = arrays["obs"][offset:offset + ln].copy()
            ep.action = arrays["action"][offset:offset + ln].copy()
            ep.reward = arrays["reward"][offset:offset + ln].copy()
            ep.discount = arrays["discount"][offset:offset + ln].copy()
            ep.done = arrays["done"][offset:offset + ln].astype(bool)
            ep.length = ln
            ep.finished = True
            self.episodes.append(ep)
            self.total_steps += ln
            offset += ln
