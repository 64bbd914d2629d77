"""Parametric control environments: pendulum, cartpole swing-up, toymodes.

Each family exposes a hidden scalar context (length, mass scale, mode
index) that changes the transition function but never the reward. The
equations below are the ground truth for this package; rewards are pure
functions of (observation, action) so the planner can score imagined
states with the same code the environments use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi

PENDULUM_TRAIN = (0.5, 0.75, 1.0, 1.25)
PENDULUM_TEST = (0.25, 0.375, 1.5, 1.75)
CARTPOLE_TRAIN = (0.25, 0.5, 1.5, 2.5)
CARTPOLE_TEST = (0.1, 0.15, 2.75, 3.0)
TOYMODES_MODES = (0, 1)

TOYMODES_A = (
    np.array([[0.9, 0.0], [0.0, 0.9]]),
    np.array([[0.9, 0.5], [0.0, 0.9]]),
)
TOYMODES_B = np.eye(2)


class EnvContext:
    """Hidden dynamics parameter plus split bookkeeping.

    Reading .parameter bumps a class-level counter; tests use it to prove
    that model, loss and planner code never peeks at the true context.
    Environments copy the value once at construction.
    """

    parameter_reads = 0

    def __init__(self, family: str, split: str, value: float):
        self.family = family
        self.split = split
        self._value = float(value)

    @property
    def parameter(self) -> float:
        EnvContext.parameter_reads += 1
        return self._value

    def __repr__(self):
        return f"EnvContext(family={self.family!r}, split={self.split!r})"


def _context_value(context) -> float:
    if isinstance(context, EnvContext):
        return context.parameter
    return float(context)


def wrap_angle(theta):
    """Map an angle to (-pi, pi]."""
    w = np.mod(theta, TWO_PI)
    return np.where(w > np.pi, w - TWO_PI, w)


# ---------------------------------------------------------------- pendulum

PENDULUM_DT = 0.05
PENDULUM_G = 10.0
PENDULUM_MASS = 1.0
PENDULUM_MAX_SPEED = 8.0
PENDULUM_MAX_TORQUE = 2.0


def pendulum_reward(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    action = np.atleast_2d(np.asarray(action, dtype=np.float64))
    theta = np.arctan2(obs[:, 1], obs[:, 0])
    u = np.clip(action[:, 0], -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE)
    return -(theta ** 2 + 0.1 * obs[:, 2] ** 2 + 0.001 * u ** 2)


def pendulum_step(state, action, context):
    """Semi-implicit Euler step of the underactuated pendulum.

    state = (theta, theta_dot); reward is evaluated at the pre-step state.
    """
    length = _context_value(context)
    theta, theta_dot = float(state[0]), float(state[1])
    u = float(np.clip(np.asarray(action).reshape(-1)[0],
                      -PENDULUM_MAX_TORQUE, PENDULUM_MAX_TORQUE))
    reward = -(float(wrap_angle(theta)) ** 2 + 0.1 * theta_dot ** 2 + 0.001 * u ** 2)
    accel = (1.5 * PENDULUM_G / length * np.sin(theta)
             + 3.0 / (PENDULUM_MASS * length ** 2) * u)
    new_dot = float(np.clip(theta_dot + PENDULUM_DT * accel,
                            -PENDULUM_MAX_SPEED, PENDULUM_MAX_SPEED))
    new_theta = theta + PENDULUM_DT * new_dot
    return np.array([new_theta, new_dot]), reward


# ------------------------------------------------------- cartpole swing-up

CARTPOLE_DT = 0.01
CARTPOLE_G = 9.8
CARTPOLE_POLE_HALF_LENGTH = 0.5
CARTPOLE_FORCE_MAG = 10.0
CARTPOLE_MAX_ANG_SPEED = 4.0 * np.pi
CARTPOLE_MAX_POSITION = 3.0


def cartpole_reward(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    return np.cos(obs[:, 2])


def cartpole_step(state, action, context):
    """Explicit Euler step of the classic cart-pole, pole angle 0 = upright.

    The context scales both masses: cart mass = p, pole mass = 0.1 p.
    """
    p = _context_value(context)
    m_cart = p
    m_pole = 0.1 * p
    total = m_cart + m_pole
    x, x_dot, theta, theta_dot = (float(v) for v in state)
    a = float(np.clip(np.asarray(action).reshape(-1)[0], -1.0, 1.0))
    force = CARTPOLE_FORCE_MAG * a
    reward = float(np.cos(theta))

    sin_t, cos_t = np.sin(theta), np.cos(theta)
    length = CARTPOLE_POLE_HALF_LENGTH
    temp = (force + m_pole * length * theta_dot ** 2 * sin_t) / total
    theta_acc = (CARTPOLE_G * sin_t - cos_t * temp) / (
        length * (4.0 / 3.0 - m_pole * cos_t ** 2 / total))
    x_acc = temp - m_pole * length * theta_acc * cos_t / total

    new_x = x + CARTPOLE_DT * x_dot
    new_x_dot = x_dot + CARTPOLE_DT * x_acc
    new_theta = theta + CARTPOLE_DT * theta_dot
    new_theta_dot = float(np.clip(theta_dot + CARTPOLE_DT * theta_acc,
                                  -CARTPOLE_MAX_ANG_SPEED, CARTPOLE_MAX_ANG_SPEED))
    if abs(new_x) > CARTPOLE_MAX_POSITION:
        new_x = float(np.clip(new_x, -CARTPOLE_MAX_POSITION, CARTPOLE_MAX_POSITION))
        new_x_dot = 0.0
    return np.array([new_x, new_x_dot, new_theta, new_theta_dot]), reward


# ---------------------------------------------------------------- toymodes

TOYMODES_DEFAULT_NOISE = 0.01


def toymodes_reward(obs: np.ndarray, action: np.ndarray) -> np.ndarray:
    obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
    return -np.sum(obs * obs, axis=1)


def toymodes_step(state, action, context, noise=None):
    """Linear 2-mode dynamics: next = A_k s + B a (+ optional noise)."""
    mode = int(round(_context_value(context)))
    if mode not in TOYMODES_MODES:
        raise ValueError(f"unknown toymodes mode {mode}")
    s = np.asarray(state, dtype=np.float64)
    a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
    reward = -float(np.dot(s, s))
    nxt = TOYMODES_A[mode] @ s + TOYMODES_B @ a
    if noise is not None:
        nxt = nxt + np.asarray(noise, dtype=np.float64)
    return nxt, reward


# ---------------------------------------------------------------- registry

@dataclass(frozen=True)
class FamilySpec:
    name: str
    obs_dim: int
    action_dim: int
    action_low: np.ndarray
    action_high: np.ndarray
    horizon: int
    train_params: tuple
    test_params: tuple
    reward_fn: object


FAMILIES = {
    "pendulum": FamilySpec(
        "pendulum", 3, 1,
        np.array([-PENDULUM_MAX_TORQUE]), np.array([PENDULUM_MAX_TORQUE]),
        200, PENDULUM_TRAIN, PENDULUM_TEST, pendulum_reward),
    "cartpole_swingup": FamilySpec(
        "cartpole_swingup", 4, 1,
        np.array([-1.0]), np.array([1.0]),
        500, CARTPOLE_TRAIN, CARTPOLE_TEST, cartpole_reward),
    "toymodes": FamilySpec(
        "toymodes", 2, 2,
        np.array([-1.0, -1.0]), np.array([1.0, 1.0]),
        50, TOYMODES_MODES, TOYMODES_MODES, toymodes_reward),
}


def family_spec(name: str) -> FamilySpec:
    try:
        return FAMILIES[name]
    except KeyError:
        raise ValueError(f"unknown env family {name!r}") from None


def sample_context(family: str, split: str, rng: np.random.Generator) -> EnvContext:
    spec = family_spec(family)
    if split == "train":
        params = spec.train_params
    elif split == "test":
        params = spec.test_params
    else:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    value = params[int(rng.integers(len(params)))]
    return EnvContext(family, split, value)


class PendulumEnv:
    def __init__(self, context: EnvContext, rng: np.random.Generator):
        self.spec = family_spec("pendulum")
        self._length = _context_value(context)
        self._rng = rng
        self._state = np.zeros(2)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def _obs(self) -> np.ndarray:
        theta, theta_dot = self._state
        return np.array([np.cos(theta), np.sin(theta), theta_dot])

    def reset(self) -> np.ndarray:
        theta = self._rng.uniform(-np.pi, np.pi)
        theta_dot = self._rng.uniform(-1.0, 1.0)
        self._state = np.array([theta, theta_dot])
        return self._obs()

    def step(self, action):
        self._state, reward = pendulum_step(self._state, action, self._length)
        return self._obs(), reward


class CartpoleSwingupEnv:
    def __init__(self, context: EnvContext, rng: np.random.Generator):
        self.spec = family_spec("cartpole_swingup")
        self._mass = _context_value(context)
        self._rng = rng
        self._state = np.zeros(4)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def reset(self) -> np.ndarray:
        # Pole hanging down with a small kick so episodes are not symmetric.
        noise = self._rng.uniform(-0.05, 0.05, size=4)
        self._state = np.array([0.0, 0.0, np.pi, 0.0]) + noise
        return self._state.copy()

    def step(self, action):
        self._state, reward = cartpole_step(self._state, action, self._mass)
        return self._state.copy(), reward


class ToyModesEnv:
    def __init__(self, context: EnvContext, rng: np.random.Generator,
                 noise_scale: float = TOYMODES_DEFAULT_NOISE):
        self.spec = family_spec("toymodes")
        self._mode = int(round(_context_value(context)))
        self._rng = rng
        self._noise_scale = float(noise_scale)
        self._state = np.zeros(2)

    @property
    def horizon(self) -> int:
        return self.spec.horizon

    def reset(self) -> np.ndarray:
        self._state = self._rng.uniform(-0.5, 0.5, size=2)
        return self._state.copy()

    def step(self, action):
        noise = None
        if self._noise_scale > 0.0:
            noise = self._noise_scale * self._rng.standard_normal(2)
        self._state, reward = toymodes_step(self._state, action, self._mode, noise)
        return self._state.copy(), reward


def make_env(context: EnvContext, rng: np.random.Generator,
             noise_scale: float = TOYMODES_DEFAULT_NOISE):
    if context.family == "pendulum":
        return PendulumEnv(context, rng)
    if context.family == "cartpole_swingup":
        return CartpoleSwingupEnv(context, rng)
    if context.family == "toymodes":
        return ToyModesEnv(context, rng, noise_scale)
    raise ValueError(f"unknown env family {context.family!r}")
