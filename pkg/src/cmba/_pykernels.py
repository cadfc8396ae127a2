"""NumPy reference implementations of the compiled kernels.

Used when the Cython extension is not built, or when ``CMBA_PURE_PYTHON=1``.
"""
import numpy as np


def clamp(x, lo, hi):
    return np.minimum(np.maximum(np.asarray(x, dtype=np.float64), lo), hi)


def project_l1_ball(v, radius):
    """Euclidean projection onto {x : ||x||_1 <= radius} by sorting magnitudes."""
    v = np.asarray(v, dtype=np.float64)
    mag = np.abs(v)
    if mag.sum() <= radius:
        return v.copy()
    if radius <= 0.0:
        return np.zeros_like(v)
    u = np.sort(mag)[::-1]
    css = np.cumsum(u)
    ks = np.arange(1, v.size + 1)
    rho = np.nonzero(u - (css - radius) / ks > 0.0)[0][-1]
    theta = (css[rho] - radius) / (rho + 1)
    return np.sign(v) * np.maximum(mag - theta, 0.0)


def dykstra_l1_box(x0, lo, hi, radius, tol=1e-10, max_iter=100000):
    """Dykstra's alternating projections onto box ∩ l1-ball.

    Returns ``(x, rounds, last_change)``.
    """
    x = np.array(x0, dtype=np.float64)
    p = np.zeros_like(x)
    q = np.zeros_like(x)
    change = np.inf
    it = 0
    while it < max_iter:
        it += 1
        t = x + p
        y = clamp(t, lo, hi)
        pn = t - y
        t = y + q
        xn = project_l1_ball(t, radius)
        qn = t - xn
        # x alone can repeat while p and q still move; stop on the whole state
        change = float(np.sqrt(np.sum((xn - x) ** 2) + np.sum((pn - p) ** 2) + np.sum((qn - q) ** 2)))
        x, p, q = xn, pn, qn
        if change <= tol:
            break
    # clamping toward zero never grows the l1 norm, so this keeps both constraints
    return clamp(x, lo, hi), it, change


def swarm_step(pos, vel, goals, actions, dt, damping, half_width, v_max, action_cost):
    a = np.clip(actions, -1.0, 1.0)
    new_vel = np.clip((1.0 - damping) * vel + dt * a, -v_max, v_max)
    new_pos = np.clip(pos + dt * new_vel, -half_width, half_width)
    to_goal = goals - pos
    dist = np.sqrt(np.sum(to_goal * to_goal, axis=1))
    away = dist > 1e-6
    along = np.zeros(len(pos))
    along[away] = np.sum(new_vel[away] * to_goal[away], axis=1) / dist[away]
    reward = float(np.sum(along) / len(pos) - action_cost * np.sum(a * a))
    touched = bool(np.any(np.abs(new_pos) >= half_width))
    return new_pos, new_vel, reward, touched
