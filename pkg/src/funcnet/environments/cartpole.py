"""Cart-pole balancing with the classic one-pole dynamics.

A cart of mass 1.0 carries a pole of mass 0.1 and half-length 0.5; the
agent pushes with a fixed-magnitude force of either sign and earns +1 for
every step the pole stays within 15 degrees of vertical and the cart
within 2.4 units of the center. 300 survived steps end the episode as a
success.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

GRAVITY = 9.8
CART_MASS = 1.0
POLE_MASS = 0.1
POLE_HALF_LENGTH = 0.5
FORCE_MAG = 10.0
DT = 0.02
ANGLE_LIMIT = math.radians(15.0)
X_LIMIT = 2.4
MAX_STEPS = 300

OBS_SIZE = 4


@dataclass(frozen=True)
class CartPoleState:
    x: float
    x_dot: float
    theta: float
    theta_dot: float
    steps_elapsed: int = 0

    @property
    def within_limits(self) -> bool:
        return abs(self.theta) <= ANGLE_LIMIT and abs(self.x) <= X_LIMIT

    @property
    def terminal(self) -> bool:
        return not self.within_limits or self.steps_elapsed >= MAX_STEPS


def cartpole_reset(rng: np.random.Generator) -> CartPoleState:
    x, x_dot, theta, theta_dot = rng.uniform(-0.05, 0.05, size=4)
    return CartPoleState(x, x_dot, theta, theta_dot)


def cartpole_observe(state: CartPoleState) -> np.ndarray:
    return np.array([state.x, state.x_dot, state.theta, state.theta_dot])


@dataclass(frozen=True)
class CartPoleParams:
    gravity: float = GRAVITY
    cart_mass: float = CART_MASS
    pole_mass: float = POLE_MASS
    pole_half_length: float = POLE_HALF_LENGTH
    force_mag: float = FORCE_MAG

    def __post_init__(self):
        if min(self.cart_mass, self.pole_mass, self.pole_half_length) <= 0:
            raise ValueError("masses and pole length must be positive")


DEFAULT_PHYSICS = CartPoleParams()


def cartpole_derivatives(theta: float, theta_dot: float, force: float,
                         physics: CartPoleParams = DEFAULT_PHYSICS) -> tuple[float, float]:
    """(x_acc, theta_acc) of the coupled cart-pole system."""
    total_mass = physics.cart_mass + physics.pole_mass
    sin_t, cos_t = math.sin(theta), math.cos(theta)
    ml = physics.pole_mass * physics.pole_half_length
    theta_acc = ((physics.gravity * sin_t
                  + cos_t * (-force - ml * theta_dot ** 2 * sin_t) / total_mass)
                 / (physics.pole_half_length
                    * (4.0 / 3.0 - physics.pole_mass * cos_t ** 2 / total_mass)))
    x_acc = (force + ml * (theta_dot ** 2 * sin_t - theta_acc * cos_t)) / total_mass
    return x_acc, theta_acc


def cartpole_step(state: CartPoleState, action: int, dt: float = DT,
                  physics: CartPoleParams = DEFAULT_PHYSICS) -> tuple[CartPoleState, float, bool]:
    """Euler step under force force_mag * action, action in {+1, -1}.

    Reward is +1 when the new state is within the position and angle limits
    (including the step that reaches the 300-step cap), 0 on the step that
    breaks them.
    """
    if state.terminal:
        raise ValueError("cannot step a terminal cart-pole state")
    if action not in (1, -1):
        raise ValueError(f"action must be +1 or -1, got {action!r}")
    force = physics.force_mag * action
    x_acc, theta_acc = cartpole_derivatives(state.theta, state.theta_dot, force,
                                            physics)
    nxt = CartPoleState(x=state.x + dt * state.x_dot,
                        x_dot=state.x_dot + dt * x_acc,
                        theta=state.theta + dt * state.theta_dot,
                        theta_dot=state.theta_dot + dt * theta_acc,
                        steps_elapsed=state.steps_elapsed + 1)
    reward = 1.0 if nxt.within_limits else 0.0
    return nxt, reward, nxt.terminal
