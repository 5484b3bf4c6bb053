"""Robust-mode tracking controller."""

from __future__ import annotations

import numpy as np

from .model import SystemModel


def clamp_norm(v: np.ndarray, limit: float) -> np.ndarray:
    """Scale ``v`` (or each row of a 2-D array) down to norm ``limit``."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return np.where(n > limit, v * (limit / np.maximum(n, 1e-300)), v)


def robust_control(x_hat, x_goal, gains, model: SystemModel, u_max: float = 2.0, v_max: float | None = None) -> np.ndarray:
    """PD-like tracking law ``u = Kp (p_goal - p) - Kd v``, clipped to ``u_max``.

    With ``v_max`` set, the position term is read as a velocity command
    ``(Kp/Kd)(p_goal - p)`` limited to ``v_max``; below saturation this is the
    same law. ``x_hat`` may hold one state per row.
    """
    kp, kd = gains
    x_hat = np.asarray(x_hat, dtype=float)
    x_goal = np.asarray(x_goal, dtype=float)
    pos, vel = list(model.pos_index), list(model.vel_index)
    v_cmd = (kp / kd) * (x_goal[..., pos] - x_hat[..., pos])
    if v_max is not None:
        v_cmd = clamp_norm(v_cmd, v_max)
    return clamp_norm(kd * (v_cmd - x_hat[..., vel]), u_max)


def detour_goal(position, goal_position, center, radius: float) -> np.ndarray:
    """Virtual goal that steers around a disc.

    If the straight segment to the goal clears the disc the goal is returned
    unchanged. Otherwise the heading is the tangent to the disc on the side
    closer to the goal; inside the disc it is outward, bent toward the goal.
    The virtual goal keeps the true goal distance so the PD speed profile is
    unaffected.
    """
    p = np.asarray(position, dtype=float)
    g = np.asarray(goal_position, dtype=float)
    c = np.asarray(center, dtype=float)
    to_goal = g - p
    dist_goal = float(np.linalg.norm(to_goal))
    if dist_goal < 1e-9:
        return g
    rel = p - c
    d = float(np.linalg.norm(rel))
    if d < 1e-9:
        return g
    goal_dir = to_goal / dist_goal

    if d <= radius:
        out = rel / d
        tang = np.array([-out[1], out[0]])
        if tang @ goal_dir < 0:
            tang = -tang
        heading = out + tang
        return p + dist_goal * heading / np.linalg.norm(heading)

    # does the segment p -> g pass through the disc?
    t = np.clip(-(rel @ to_goal) / (dist_goal**2), 0.0, 1.0)
    closest = rel + t * to_goal
    if np.linalg.norm(closest) >= radius or np.linalg.norm(g - c) < radius:
        return g
    # tangent directions from p to the circle
    half = np.arcsin(min(radius / d, 1.0))
    base = -rel / d
    best = None
    for sign in (1.0, -1.0):
        ang = sign * half
        rot = np.array([[np.cos(ang), -np.sin(ang)], [np.sin(ang), np.cos(ang)]])
        h = rot @ base
        if best is None or h @ goal_dir > best @ goal_dir:
            best = h
    return p + dist_goal * best
