"""Screw axes and closed-form rigid-body exponential maps.

All tensor functions broadcast over leading dimensions and are differentiable;
the value-level helpers (normalize_screw, screw_exp, line_line_distance) work on
ScrewAxis models.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from screwsplat.config import DTYPE
from screwsplat.errors import DegenerateAxisError, NotRevoluteError
from screwsplat.models import JointType, ScrewAxis

AXIS_EPS = 1e-8


@dataclass(frozen=True)
class RigidTransform:
    rotation: torch.Tensor
    translation: torch.Tensor

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def apply(self, points: torch.Tensor) -> torch.Tensor:
        return points @ self.rotation.transpose(-1, -2) + self.translation

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self * other."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.transpose(-1, -2)
        return RigidTransform(rt, -(rt @ self.translation))

    def matrix(self) -> torch.Tensor:
        m = torch.eye(4, dtype=self.rotation.dtype)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m


def skew(w: torch.Tensor) -> torch.Tensor:
    """(..., 3) -> (..., 3, 3) with skew(w) @ x = w x x."""
    zero = torch.zeros_like(w[..., 0])
    wx, wy, wz = w[..., 0], w[..., 1], w[..., 2]
    return torch.stack(
        [zero, -wz, wy, wz, zero, -wx, -wy, wx, zero], dim=-1
    ).reshape(*w.shape[:-1], 3, 3)


def normalize_screw(raw: Sequence[float] | torch.Tensor, joint_type: JointType) -> ScrewAxis:
    """Map a raw 6-vector (x, q) onto a valid screw axis.

    Revolute: omega = x / |x|, v = -omega x q. Prismatic: omega = 0, v = q / |q|.
    """
    raw = torch.as_tensor(raw, dtype=DTYPE)
    x, q = raw[:3], raw[3:]
    if joint_type == JointType.REVOLUTE:
        n = torch.linalg.norm(x)
        if n <= AXIS_EPS:
            raise DegenerateAxisError(f"revolute direction norm {float(n):.3g} too small")
        omega = x / n
        v = -torch.linalg.cross(omega, q)
    else:
        n = torch.linalg.norm(q)
        if n <= AXIS_EPS:
            raise DegenerateAxisError(f"prismatic direction norm {float(n):.3g} too small")
        omega = torch.zeros(3, dtype=DTYPE)
        v = q / n
    return ScrewAxis(
        omega=tuple(omega.tolist()), v=tuple(v.tolist()), joint_type=joint_type
    )


def normalize_raw_axes(raw: torch.Tensor, is_revolute: torch.Tensor) -> torch.Tensor:
    """Differentiable batch version of normalize_screw: (n, 6) raw -> (n, 6) axes."""
    x, q = raw[..., :3], raw[..., 3:]
    omega = x / torch.linalg.norm(x, dim=-1, keepdim=True).clamp_min(AXIS_EPS)
    rev_v = -torch.linalg.cross(omega, q, dim=-1)
    pri_v = q / torch.linalg.norm(q, dim=-1, keepdim=True).clamp_min(AXIS_EPS)
    rev = is_revolute.unsqueeze(-1)
    return torch.cat(
        [torch.where(rev, omega, torch.zeros_like(omega)), torch.where(rev, rev_v, pri_v)],
        dim=-1,
    )


def rodrigues(omega: torch.Tensor, theta: torch.Tensor | float) -> torch.Tensor:
    """I + sin(theta)[w] + (1 - cos(theta))[w]^2 for a unit (or zero) omega."""
    theta = torch.as_tensor(theta, dtype=omega.dtype)
    w = skew(omega)
    eye = torch.eye(3, dtype=omega.dtype)
    s = torch.sin(theta)[..., None, None]
    c = torch.cos(theta)[..., None, None]
    return eye + s * w + (1 - c) * (w @ w)


def screw_exp_batch(axes: torch.Tensor, theta: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Closed-form exp([S] theta) for (..., 6) axes and (...) angles.

    Returns (rotation (..., 3, 3), translation (..., 3)). With omega = 0 the
    revolute formula collapses to the prismatic one (R = I, t = v theta).
    """
    omega, v = axes[..., :3], axes[..., 3:]
    w = skew(omega)
    w2 = w @ w
    eye = torch.eye(3, dtype=axes.dtype)
    th = theta[..., None, None]
    s, c = torch.sin(th), torch.cos(th)
    rotation = eye + s * w + (1 - c) * w2
    g = eye * th + (1 - c) * w + (th - s) * w2
    translation = (g @ v.unsqueeze(-1)).squeeze(-1)
    return rotation, translation


def screw_exp(axis: ScrewAxis, theta: float | torch.Tensor) -> RigidTransform:
    rotation, translation = screw_exp_batch(
        axis.as_tensor(), torch.as_tensor(theta, dtype=DTYPE)
    )
    return RigidTransform(rotation, translation)


def screw_bracket(axis: ScrewAxis | torch.Tensor) -> torch.Tensor:
    """4x4 matrix [[skew(omega), v], [0, 0]]."""
    s = axis.as_tensor() if isinstance(axis, ScrewAxis) else axis
    m = torch.zeros(4, 4, dtype=s.dtype)
    m[:3, :3] = skew(s[:3])
    m[:3, 3] = s[3:]
    return m


def exp_series_oracle(axis: ScrewAxis, theta: float, n_terms: int = 30) -> torch.Tensor:
    """Partial sum of the matrix exponential series; a test oracle."""
    if n_terms < 20:
        raise ValueError("series oracle needs at least 20 terms")
    m = screw_bracket(axis) * theta
    term = torch.eye(4, dtype=DTYPE)
    total = term.clone()
    for k in range(1, n_terms):
        term = term @ m / k
        total = total + term
    return total


def line_line_distance(a: ScrewAxis, b: ScrewAxis) -> float:
    """Minimum distance between two revolute axes viewed as infinite lines."""
    if not (a.is_revolute and b.is_revolute):
        raise NotRevoluteError("line distance is defined for revolute axes only")
    wa, wb = a.direction(), b.direction()
    d = b.point() - a.point()
    n = torch.linalg.cross(wa, wb)
    nn = float(torch.linalg.norm(n))
    if nn < 1e-12:
        return float(torch.linalg.norm(torch.linalg.cross(d, wa)))
    return abs(float(d @ n)) / nn


# -- quaternions (w, x, y, z) --


def quaternion_to_rotation(q: torch.Tensor) -> torch.Tensor:
    q = F.normalize(q, dim=-1)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return torch.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        dim=-1,
    ).reshape(*q.shape[:-1], 3, 3)


def quaternion_multiply(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    aw, ax, ay, az = a.unbind(-1)
    bw, bx, by, bz = b.unbind(-1)
    return torch.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        dim=-1,
    )


def screw_quaternion(axes: torch.Tensor, theta: torch.Tensor) -> torch.Tensor:
    """Rotation part of exp([S] theta) as a quaternion; identity for prismatic axes."""
    omega = axes[..., :3]
    half = 0.5 * theta * torch.linalg.norm(omega, dim=-1)
    return torch.cat(
        [torch.cos(half).unsqueeze(-1), torch.sin(0.5 * theta).unsqueeze(-1) * omega], dim=-1
    )


def random_rotation(generator: torch.Generator) -> torch.Tensor:
    """Uniformly random proper rotation."""
    q = torch.randn(4, generator=generator, dtype=DTYPE)
    return quaternion_to_rotation(q / torch.linalg.norm(q))
