"""Pixel-rendered 2D object environments: goal-reaching and block-pushing.

The arena is a continuous square of ``ARENA_SIZE`` env units rendered to a
square RGB image. The agent is a red circle that moves one unit per action;
all other geometry follows from the task type. Rendering is a pure function
of the environment state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

ARENA_SIZE = 16.0
OBJECT_RADIUS = ARENA_SIZE / 16.0  # object size (diameter) = 1/8 arena width
AGENT_STEP = 1.0

ACTIONS = ("up", "down", "left", "right")
ACTION_DELTAS = {0: (0.0, -1.0), 1: (0.0, 1.0), 2: (-1.0, 0.0), 3: (1.0, 0.0)}

SHAPES = ("circle", "square", "triangle", "star")
COLORS = {
    "red": (1.0, 0.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "green": (0.0, 1.0, 0.0),
    "yellow": (1.0, 1.0, 0.0),
}
BACKGROUND = 0.15

TASKS = ("object_goal", "object_interaction")

# Mean undiscounted return of a uniform-random policy with the default
# object count, frozen from a 5000-episode Monte Carlo run (seed 2026).
# Geometry-only: independent of image size. tests/test_envsim.py re-derives
# these with fresh seeds.
RANDOM_POLICY_BASELINE = {
    "object_goal": 0.2316,
    "object_interaction": 0.02,
}


class EpisodeDoneError(RuntimeError):
    """step() called on a finished episode; reset() first."""


@dataclass
class EnvConfig:
    task: str = "object_goal"
    image_size: int = 64
    num_distractors: int = 3
    max_episode_length: int = 100
    action_repeat: int = 1
    discount: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; expected one of {TASKS}")
        if self.image_size < 16:
            raise ValueError("image_size must be >= 16")
        if self.max_episode_length < 1:
            raise ValueError("max_episode_length must be >= 1")


@dataclass
class SceneObject:
    x: float
    y: float
    shape: str
    color: str
    role: str  # agent | target | goal_position | distractor

    @property
    def pos(self):
        return np.array([self.x, self.y])


@dataclass
class EnvState:
    objects: list
    steps: int = 0
    done: bool = False

    @property
    def agent(self):
        return next(o for o in self.objects if o.role == "agent")

    @property
    def target(self):
        return next(o for o in self.objects if o.role == "target")


@dataclass
class Transition:
    observation: np.ndarray  # (3, H, W) float32 in [0, 1]
    action: int
    reward: float
    done: bool
    discount: float


def _circle_overlap(ax, ay, bx, by, r=OBJECT_RADIUS):
    dx, dy = ax - bx, ay - by
    return dx * dx + dy * dy <= (2.0 * r) ** 2


def _circle_square_overlap(cx, cy, sx, sy, r=OBJECT_RADIUS):
    # closest point on the square's AABB to the circle center
    qx = min(max(cx, sx - r), sx + r)
    qy = min(max(cy, sy - r), sy + r)
    dx, dy = cx - qx, cy - qy
    return dx * dx + dy * dy <= r * r


def _touching(agent, obj):
    if obj.shape == "square":
        return _circle_square_overlap(agent.x, agent.y, obj.x, obj.y)
    return _circle_overlap(agent.x, agent.y, obj.x, obj.y)


class ObjectEnv:
    """Discrete-action 2D object world with sparse terminal reward."""

    def __init__(self, config: EnvConfig):
        self.config = config
        self.state = None
        self._rng = np.random.default_rng(config.seed)
        self._grid = _pixel_grid(config.image_size)

    # -- episode control ----------------------------------------------------

    def reset(self, seed=None):
        """Start a fresh episode; layout is deterministic given the seed."""
        if seed is not None:
            self._rng = np.random.default_rng(seed)
        rng = self._rng
        cfg = self.config
        center = ARENA_SIZE / 2.0
        objects = [SceneObject(center, center, "circle", "red", "agent")]

        if cfg.task == "object_goal":
            objects.append(self._place(rng, objects, "square", "blue", "target"))
            for _ in range(cfg.num_distractors):
                shape = rng.choice(["square", "triangle", "star"])
                colors = ["green", "yellow", "red"] if shape == "square" else \
                    ["blue", "green", "yellow", "red"]
                color = rng.choice(colors)
                objects.append(self._place(rng, objects, shape, color, "distractor"))
        else:  # object_interaction: all squares, target/goal blue
            corner = 3.0 * OBJECT_RADIUS
            objects.append(SceneObject(corner, ARENA_SIZE - corner, "square", "blue",
                                       "goal_position"))
            objects.append(self._place(rng, objects, "square", "blue", "target",
                                       wall_margin=3.0 * OBJECT_RADIUS))
            for _ in range(cfg.num_distractors):
                color = rng.choice(["green", "yellow", "red"])
                objects.append(self._place(rng, objects, "square", color, "distractor",
                                           wall_margin=3.0 * OBJECT_RADIUS))

        self.state = EnvState(objects=objects)
        return self.render()

    def _place(self, rng, placed, shape, color, role, wall_margin=None, tries=1000):
        margin = wall_margin if wall_margin is not None else 1.5 * OBJECT_RADIUS
        lo, hi = margin, ARENA_SIZE - margin
        for _ in range(tries):
            x = rng.uniform(lo, hi)
            y = rng.uniform(lo, hi)
            ok = True
            for o in placed:
                # keep a clear band around the agent so episodes cannot end
                # on the first step; plain separation elsewhere
                gap = 4.0 if o.role == "agent" else 2.0 * OBJECT_RADIUS + 0.75
                if (x - o.x) ** 2 + (y - o.y) ** 2 < gap ** 2:
                    ok = False
                    break
            if ok:
                return SceneObject(x, y, shape, color, role)
        raise RuntimeError("could not place object without overlap")

    def step(self, action):
        """Advance one action (with action repeat) and return the Transition."""
        if self.state is None:
            raise EpisodeDoneError("reset() before step()")
        if self.state.done:
            raise EpisodeDoneError("episode finished; call reset()")
        if action not in ACTION_DELTAS:
            raise ValueError(f"action must be in 0..3, got {action}")

        reward, done = 0.0, False
        for _ in range(max(1, self.config.action_repeat)):
            reward, done = self._substep(action)
            if done:
                break
        self.state.steps += 1
        if not done and self.state.steps >= self.config.max_episode_length:
            done = True
        self.state.done = done
        discount = 0.0 if done else self.config.discount
        return Transition(self.render(), int(action), float(reward), bool(done), discount)

    def _substep(self, action):
        st = self.state
        agent = st.agent
        dx, dy = ACTION_DELTAS[action]
        r = OBJECT_RADIUS
        nx = float(np.clip(agent.x + dx * AGENT_STEP, r, ARENA_SIZE - r))
        ny = float(np.clip(agent.y + dy * AGENT_STEP, r, ARENA_SIZE - r))

        if self.config.task == "object_goal":
            agent.x, agent.y = nx, ny
            if _touching(agent, st.target):
                return 1.0, True
            for obj in st.objects:
                if obj.role == "distractor" and _touching(agent, obj):
                    return 0.0, True
            return 0.0, False

        # object_interaction: the target square is pushable, distractors block.
        target = st.target
        blockers = [o for o in st.objects if o.role == "distractor"]
        if _circle_square_overlap(nx, ny, target.x, target.y):
            self._push_target(target, nx, ny, dx, dy, blockers)
            nx, ny = self._back_off(agent, nx, ny, dx, dy, target)
        for obj in blockers:
            if _circle_square_overlap(nx, ny, obj.x, obj.y):
                nx, ny = self._back_off(agent, nx, ny, dx, dy, obj)
        agent.x, agent.y = nx, ny

        goal = next(o for o in st.objects if o.role == "goal_position")
        if abs(target.x - goal.x) <= r and abs(target.y - goal.y) <= r:
            return 1.0, True
        return 0.0, False

    def _push_target(self, target, ax, ay, dx, dy, blockers):
        """Slide the target along the push axis as far as walls/blockers allow."""
        r = OBJECT_RADIUS
        # overlap depth along the action axis between the agent circle and
        # the target square, resolved by moving the target
        if dx:
            depth = (2.0 * r) - (target.x - ax) * np.sign(dx)
            step = np.sign(dx) * max(0.0, depth)
            new = float(np.clip(target.x + step, r, ARENA_SIZE - r))
            for b in blockers:
                if abs(b.y - target.y) < 2.0 * r:
                    if np.sign(dx) > 0 and b.x > target.x:
                        new = min(new, b.x - 2.0 * r)
                    elif np.sign(dx) < 0 and b.x < target.x:
                        new = max(new, b.x + 2.0 * r)
            target.x = new
        else:
            depth = (2.0 * r) - (target.y - ay) * np.sign(dy)
            step = np.sign(dy) * max(0.0, depth)
            new = float(np.clip(target.y + step, r, ARENA_SIZE - r))
            for b in blockers:
                if abs(b.x - target.x) < 2.0 * r:
                    if np.sign(dy) > 0 and b.y > target.y:
                        new = min(new, b.y - 2.0 * r)
                    elif np.sign(dy) < 0 and b.y < target.y:
                        new = max(new, b.y + 2.0 * r)
            target.y = new

    @staticmethod
    def _back_off(agent, nx, ny, dx, dy, obj):
        """Retreat along the action axis until the agent no longer overlaps."""
        r = OBJECT_RADIUS
        if dx:
            nx = obj.x - np.sign(dx) * 2.0 * r if _circle_square_overlap(nx, ny, obj.x, obj.y) else nx
        else:
            ny = obj.y - np.sign(dy) * 2.0 * r if _circle_square_overlap(nx, ny, obj.x, obj.y) else ny
        return float(nx), float(ny)

    # -- rendering ----------------------------------------------------------

    def render(self, state=None):
        """Rasterize the (given or current) state to a (3, H, W) float image."""
        st = state or self.state
        size = self.config.image_size
        img = np.full((3, size, size), BACKGROUND, dtype=np.float32)
        xs, ys = self._grid
        order = {"distractor": 0, "goal_position": 1, "target": 2, "agent": 3}
        for obj in sorted(st.objects, key=lambda o: order[o.role]):
            mask = _shape_mask(obj, xs, ys)
            color = COLORS[obj.color]
            for c in range(3):
                img[c][mask] = color[c]
        return img

    def observation(self):
        return self.render()


def _pixel_grid(size):
    units = (np.arange(size, dtype=np.float64) + 0.5) * (ARENA_SIZE / size)
    xs, ys = np.meshgrid(units, units)  # xs varies along columns, ys along rows
    return xs, ys


def _shape_mask(obj, xs, ys):
    r = OBJECT_RADIUS
    dx, dy = xs - obj.x, ys - obj.y
    if obj.shape == "circle":
        return dx * dx + dy * dy <= r * r
    if obj.shape == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if obj.shape == "triangle":
        return _triangle_mask(dx, dy, r, up=True)
    if obj.shape == "star":
        return _triangle_mask(dx, dy, r, up=True) | _triangle_mask(dx, dy, r, up=False)
    raise ValueError(f"unknown shape {obj.shape!r}")


def _triangle_mask(dx, dy, r, up=True):
    if not up:
        dy = -dy
    # apex at dy=-r, base at dy=+r, half-width grows linearly
    inside_band = (dy >= -r) & (dy <= r)
    halfwidth = (dy + r) / 2.0
    return inside_band & (np.abs(dx) <= halfwidth)


# ---------------------------------------------------------------------------
# evaluation

def evaluate_return(env, policy, episodes, seed=0):
    """Mean undiscounted per-episode reward sum under ``policy``.

    ``policy`` maps a (3, H, W) float observation to a discrete action and
    may expose ``begin_episode()`` for per-episode state.
    """
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    total = 0.0
    for i in range(episodes):
        obs = env.reset(seed=seed + i)
        if hasattr(policy, "begin_episode"):
            policy.begin_episode()
        while True:
            action = policy(obs)
            tr = env.step(action)
            total += tr.reward
            obs = tr.observation
            if tr.done:
                break
    return total / episodes


def random_policy_return(task, episodes=1000, seed=12345, num_distractors=3):
    """Monte Carlo estimate of the uniform-random policy's mean return."""
    env = ObjectEnv(EnvConfig(task=task, image_size=16, num_distractors=num_distractors))
    rng = np.random.default_rng(seed)
    return evaluate_return(env, lambda obs: int(rng.integers(0, 4)), episodes, seed=seed)


class EpisodeLog:
    """Append-only JSONL log of finished episodes."""

    def __init__(self, path):
        self.path = path
        self._count = 0

    def append(self, steps, ret, seed):
        rec = {"episode": self._count, "steps": int(steps),
               "return": float(ret), "seed": int(seed)}
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(rec) + "\n")
        self._count += 1
