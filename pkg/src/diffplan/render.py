"""Deterministic SVG rendering of 2D trajectory batches over the obstacle map."""

from __future__ import annotations

import numpy as np

from .metrics import trajectory_collision_mask

FREE_COLOR = "#e07b00"
COLLIDING_COLOR = "#222222"
BASE_OBSTACLE_COLOR = "#9e9e9e"
EXTRA_OBSTACLE_COLOR = "#d62728"


def _svg_primitive(p, color, scale, offset):
    cx, cy = (p.center - offset) * scale
    if p.kind == "sphere":
        return (f'<circle class="obstacle" cx="{cx:.2f}" cy="{cy:.2f}" '
                f'r="{p.radius * scale:.2f}" fill="{color}"/>')
    w, h = 2 * p.half_extents * scale
    x, y = cx - w / 2, cy - h / 2
    return (f'<rect class="obstacle" x="{x:.2f}" y="{y:.2f}" width="{w:.2f}" '
            f'height="{h:.2f}" fill="{color}"/>')


def render_svg(batch, env, robot, path, size=600):
    """Write an SVG of the environment and trajectory batch. 2D robots only."""
    if robot.dof != 2 or robot.kind != "point-mass-2d":
        raise ValueError("SVG rendering supports 2D point-mass robots only")
    lo, hi = env.workspace_bounds
    scale = size / float(np.max(hi - lo))
    offset = lo
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for p in env.primitives:
        parts.append(_svg_primitive(p, BASE_OBSTACLE_COLOR, scale, offset))
    for p in env.extra_primitives:
        parts.append(_svg_primitive(p, EXTRA_OBSTACLE_COLOR, scale, offset))
    for traj in batch:
        collides = bool(np.any(trajectory_collision_mask(env, robot, traj)))
        cls = "colliding" if collides else "free"
        color = COLLIDING_COLOR if collides else FREE_COLOR
        pts = (traj.positions - offset) * scale
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
        parts.append(f'<polyline class="{cls}" points="{coords}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5" opacity="0.7"/>')
    if batch:
        start = (batch[0].positions[0] - offset) * scale
        goal = (batch[0].positions[-1] - offset) * scale
        parts.append(f'<circle class="start" cx="{start[0]:.2f}" cy="{start[1]:.2f}" '
                     f'r="6" fill="#2ca02c"/>')
        parts.append(f'<circle class="goal" cx="{goal[0]:.2f}" cy="{goal[1]:.2f}" '
                     f'r="6" fill="#1f77b4"/>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")
