"""Data models: screws, cameras, documents and reports."""

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from screwsplat.config import DTYPE

Vec3 = tuple[float, float, float]
Mat3 = tuple[Vec3, Vec3, Vec3]

FORMAT_VERSION = 1


class JointType(str, Enum):
    REVOLUTE = "revolute"
    PRISMATIC = "prismatic"


class ScrewAxis(BaseModel):
    """Six-dimensional screw axis (omega, v) with zero pitch."""

    model_config = ConfigDict(frozen=True)

    omega: Vec3
    v: Vec3
    joint_type: JointType

    @model_validator(mode="after")
    def _check_normalized(self):
        w = math.sqrt(sum(c * c for c in self.omega))
        vn = math.sqrt(sum(c * c for c in self.v))
        if self.joint_type == JointType.REVOLUTE:
            if abs(w - 1.0) > 1e-9:
                raise ValueError(f"revolute axis needs |omega| = 1, got {w}")
        else:
            if any(c != 0.0 for c in self.omega):
                raise ValueError("prismatic axis needs omega = 0")
            if abs(vn - 1.0) > 1e-9:
                raise ValueError(f"prismatic axis needs |v| = 1, got {vn}")
        return self

    @property
    def is_revolute(self) -> bool:
        return self.joint_type == JointType.REVOLUTE

    def as_tensor(self) -> torch.Tensor:
        return torch.tensor(self.omega + self.v, dtype=DTYPE)

    def direction(self) -> torch.Tensor:
        """omega for revolute axes, v for prismatic ones."""
        return torch.tensor(self.omega if self.is_revolute else self.v, dtype=DTYPE)

    def point(self) -> torch.Tensor:
        """Closest point to the origin on a revolute axis: q = omega x v."""
        return torch.linalg.cross(
            torch.tensor(self.omega, dtype=DTYPE), torch.tensor(self.v, dtype=DTYPE)
        )

    @classmethod
    def revolute_through(cls, direction: Vec3, point: Vec3) -> "ScrewAxis":
        from screwsplat.kinematics import normalize_screw

        return normalize_screw(tuple(direction) + tuple(point), JointType.REVOLUTE)

    @classmethod
    def prismatic_along(cls, direction: Vec3) -> "ScrewAxis":
        from screwsplat.kinematics import normalize_screw

        return normalize_screw((0.0, 0.0, 0.0) + tuple(direction), JointType.PRISMATIC)


class Camera(BaseModel):
    """Pinhole camera; the frame is x right, y down, z forward."""

    model_config = ConfigDict(frozen=True)

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float
    cy: float
    width: int = Field(ge=1)
    height: int = Field(ge=1)
    rotation: Mat3
    position: Vec3

    def rotation_tensor(self) -> torch.Tensor:
        return torch.tensor(self.rotation, dtype=DTYPE)

    def position_tensor(self) -> torch.Tensor:
        return torch.tensor(self.position, dtype=DTYPE)

    def world_from_camera(self):
        from screwsplat.kinematics import RigidTransform

        return RigidTransform(self.rotation_tensor(), self.position_tensor())


@dataclass(frozen=True)
class Observation:
    """One posed image of the object in configuration `config_index`."""

    config_index: int
    camera: Camera
    image: torch.Tensor


# -- Model document --


class ScrewRecord(BaseModel):
    raw_axis: tuple[float, float, float, float, float, float]
    joint_type: JointType
    confidence_logit: float


class GaussianRecord(BaseModel):
    position: Vec3
    rotation: tuple[float, float, float, float]
    log_scale: Vec3
    opacity_logit: float
    color: Vec3
    part_logits: list[float]


class ModelDocument(BaseModel):
    format_version: int = FORMAT_VERSION
    background: Vec3 = (0.0, 0.0, 0.0)
    screws: list[ScrewRecord] = []
    gaussians: list[GaussianRecord] = []
    joint_angles: list[list[float]] = []

    @model_validator(mode="after")
    def _check_shapes(self):
        n_s = len(self.screws)
        for g in self.gaussians:
            if len(g.part_logits) != n_s + 1:
                raise ValueError("every part_logits vector needs n_screws + 1 entries")
        for theta in self.joint_angles:
            if len(theta) != n_s:
                raise ValueError("every joint angle vector needs n_screws entries")
        return self


# -- Synthetic objects and datasets --


class PartSpec(BaseModel):
    name: str
    shape: Literal["box", "slab", "cylinder-shell"]
    center: Vec3
    extent: Vec3
    color: Vec3
    gaussian_count: int = Field(ge=1)
    attached_screw: int | None = None

    @field_validator("extent")
    @classmethod
    def _positive_extent(cls, v):
        if any(c <= 0 for c in v):
            raise ValueError("extent must be positive")
        return v


class JointSpec(BaseModel):
    axis: ScrewAxis
    lower: float
    upper: float

    @model_validator(mode="after")
    def _check_limits(self):
        if not self.lower < self.upper:
            raise ValueError("joint limits need lower < upper")
        return self


class ObjectSpec(BaseModel):
    name: str
    parts: list[PartSpec]
    joints: list[JointSpec] = []

    @model_validator(mode="after")
    def _check_structure(self):
        static = [p for p in self.parts if p.attached_screw is None]
        if len(static) != 1:
            raise ValueError("an object needs exactly one static base part")
        for p in self.parts:
            if p.attached_screw is not None and not 0 <= p.attached_screw < len(self.joints):
                raise ValueError(f"part {p.name} references missing joint {p.attached_screw}")
        return self


class ObservationRecord(BaseModel):
    config_index: int
    camera_index: int
    file: str


class DatasetManifest(BaseModel):
    format_version: int = FORMAT_VERSION
    spec: ObjectSpec
    seed: int
    cameras: list[Camera]
    configs: list[list[float]]
    holdout_configs: list[list[float]] = []
    gt_screws: list[ScrewAxis]
    observations: list[ObservationRecord]
    holdout: list[ObservationRecord] = []


# -- Control outputs --


class Trajectory(BaseModel):
    screw_index: int
    affordance_point: Vec3
    theta_samples: list[float]
    tip_points: list[Vec3]
    gripper_rotation: Mat3
    gripper_translations: list[Vec3]


# -- Evaluation --


class AxisMatch(BaseModel):
    gt_index: int
    pred_index: int | None
    ang_err: float | None = None
    pos_err: float | None = None


class EvalReport(BaseModel):
    model_config = ConfigDict(ser_json_inf_nan="constants")

    object_name: str = ""
    cd_static: float | None = None
    cd_movable: list[float | None] = []
    cd_whole: float | None = None
    ang_err: list[float] = []
    pos_err: list[float] = []
    psnr: float | None = None
    ssim: float | None = None
    n_predicted_screws: int = 0
    matching: list[AxisMatch] = []
    units: dict[str, str] = {
        "cd": "scene_units^2",
        "ang_err": "degrees",
        "pos_err": "scene_units",
        "psnr": "dB",
    }

    def csv_row(self) -> str:
        """One summary line: name, CD-s, CD-m (mean), CD-w, Ang, Pos, PSNR, SSIM."""

        def mean(xs):
            xs = [x for x in xs if x is not None]
            return sum(xs) / len(xs) if xs else None

        row = [
            self.object_name,
            self.cd_static,
            mean(self.cd_movable),
            self.cd_whole,
            mean(self.ang_err),
            mean(self.pos_err),
            self.psnr,
            self.ssim,
        ]
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(["" if v is None else v for v in row])
        return buf.getvalue()
