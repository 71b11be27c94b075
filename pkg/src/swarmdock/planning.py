"""Potential-field guidance: goal attraction, neighbor repulsion, descent commands.

The total field is U = U_att + sum of U_rep over obstacles, with

    U_att(p) = xi * |p - goal|^2
    U_rep(p) = 0.5 * eta * (1/rho - 1/d0)^2   for rho <= d0, else 0

where rho is the Euclidean distance from p to the obstacle. Velocity
commands descend the analytic gradient, clamped to the speed limit.
"""

from __future__ import annotations

from dataclasses import dataclass

from .geometry import Vec3, clamp_speed


class PotentialSingularityError(RuntimeError):
    """Raised when a query point (nearly) coincides with an obstacle."""


@dataclass(frozen=True)
class ApfParams:
    """Gains and cutoffs for the potential-field planner.

    Defaults are tuned so the stock three-drone formation converges onto
    its landing offsets: d0 sits below the minimum target spacing (0.26 m)
    so repulsion acts purely as a collision guard, never as a steady-state
    force at the goal positions, and eta makes that guard stiff enough to
    hold the 0.15 m safety radius through crossing transients.
    """

    xi: float = 0.8
    eta: float = 2.0
    d0: float = 0.2
    k: float = 1.0
    step: float = 1e-5
    vmax: float = 2.5

    def __post_init__(self) -> None:
        if self.xi <= 0:
            raise ValueError("xi must be positive")
        if self.eta < 0:
            raise ValueError("eta must be nonnegative")
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if self.k <= 0:
            raise ValueError("k must be positive")
        if self.step <= 0:
            raise ValueError("step must be positive")
        if self.vmax <= 0:
            raise ValueError("vmax must be positive")


@dataclass(frozen=True)
class Obstacle:
    position: Vec3


def attraction_potential(p: Vec3, goal: Vec3, xi: float) -> float:
    """Quadratic pull toward the goal: xi * |p - goal|^2."""
    if xi <= 0:
        raise ValueError("xi must be positive")
    d = p - goal
    return xi * d.dot(d)


def repulsion_potential(p: Vec3, obs: Obstacle, eta: float, d0: float) -> float:
    """Short-range push away from one obstacle; zero at and beyond d0."""
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    if d0 <= 0:
        raise ValueError("d0 must be positive")
    rho = p.distance_to(obs.position)
    if rho > d0:
        return 0.0
    if rho < 1e-12:
        raise PotentialSingularityError("query point coincides with an obstacle")
    term = 1.0 / rho - 1.0 / d0
    return 0.5 * eta * term * term


def total_potential(p: Vec3, goal: Vec3, obstacles: list[Obstacle], params: ApfParams) -> float:
    u = attraction_potential(p, goal, params.xi)
    for obs in obstacles:
        u += repulsion_potential(p, obs, params.eta, params.d0)
    return u


def potential_gradient(p: Vec3, goal: Vec3, obstacles: list[Obstacle], params: ApfParams) -> Vec3:
    """Analytic gradient of the total potential at p."""
    g = (p - goal).scaled(2.0 * params.xi)
    for obs in obstacles:
        d = p - obs.position
        rho = d.norm()
        if rho > params.d0:
            continue
        if rho < params.step:
            raise PotentialSingularityError(
                f"point within {params.step} m of an obstacle (rho={rho})"
            )
        # d/drho of 0.5*eta*(1/rho - 1/d0)^2, pushed through grad(rho) = d/rho
        coeff = -params.eta * (1.0 / rho - 1.0 / params.d0) / (rho * rho)
        g = g + d.scaled(coeff / rho)
    return g


def velocity_command(p: Vec3, goal: Vec3, obstacles: list[Obstacle], params: ApfParams) -> Vec3:
    """Clamped gradient-descent velocity: clamp(-k * grad U, vmax)."""
    grad = potential_gradient(p, goal, obstacles, params)
    return clamp_speed(grad.scaled(-params.k), params.vmax)
