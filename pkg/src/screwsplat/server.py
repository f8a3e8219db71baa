"""ScrewSplat MCP Server."""

import asyncio
import json
import logging
import sys
from contextlib import asynccontextmanager
from pathlib import Path
from typing import Annotated

import torch
from mcp.server.fastmcp import FastMCP
from pydantic import Field

from screwsplat.cache import ModelCache
from screwsplat.config import ControlConfig, Settings
from screwsplat.control import GoalSpec, control_to_goal, estimate_state, plan_trajectory, search_space
from screwsplat.embedders import ToyEmbedder
from screwsplat.renderer import render_model
from screwsplat.scenes import dataset_views, hemisphere_cameras, load_dataset
from screwsplat.splat_model import ArticulatedSplatModel
from screwsplat.utils import load_png, parse_size, save_png

# Logging to stderr (MCP convention)
logging.basicConfig(
    level=logging.INFO,
    format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    stream=sys.stderr,
)
logger = logging.getLogger("screwsplat-mcp")

# Module-level state
_cache = None
_settings = None

# Tools only read models and datasets; render_views writes PNGs to a caller-chosen directory
TOOL_ANNOTATIONS = {
    "readOnlyHint": True,
    "destructiveHint": False,
    "openWorldHint": False,
}


@asynccontextmanager
async def app_lifespan(server: FastMCP):
    global _cache, _settings
    _settings = Settings()
    _cache = ModelCache(
        max_size=_settings.cache_max_size,
        ttl=_settings.cache_ttl_seconds,
    )
    torch.set_num_threads(max(1, _settings.threads))
    logger.info("Server started")
    yield
    logger.info("Server stopped, cache %s", _cache.stats())
    _cache.clear()


mcp = FastMCP(
    "ScrewSplat",
    instructions="Inspect fitted articulated-object models, render them, estimate and control their joints",
    lifespan=app_lifespan,
)


def _model(path: str) -> ArticulatedSplatModel:
    if _cache is None:
        raise RuntimeError("server cache is not initialised")
    return _cache.get(path)


def _fmt(values) -> str:
    return ", ".join(f"{v:.4f}" for v in values)


def _describe(model: ArticulatedSplatModel) -> str:
    lines = [
        f"**Gaussians:** {model.n_gaussians} | **Screws:** {model.n_screws} | **Configurations:** {model.n_configs}",
        "",
    ]
    if model.n_screws == 0:
        lines.append("No screws: the object is static.")
        return "\n".join(lines)
    space = search_space(model)
    counts = torch.bincount(model.part_assignment(), minlength=model.n_screws + 1).tolist()
    lines.append("| # | type | confidence | direction | point | range | Gaussians |")
    lines.append("|---|------|------------|-----------|-------|-------|-----------|")
    for j, axis in enumerate(model.screw_axes()):
        point = _fmt(axis.point().tolist()) if axis.is_revolute else "-"
        lines.append(
            f"| {j} | {axis.joint_type.value} | {float(model.confidences[j]):.3f} "
            f"| ({_fmt(axis.direction().tolist())}) | {point} "
            f"| [{space.lower[j]:.4f}, {space.upper[j]:.4f}] | {counts[j + 1]} |"
        )
    lines.append("")
    lines.append(f"Static part: {counts[0]} Gaussians")
    return "\n".join(lines)


@mcp.tool(annotations=TOOL_ANNOTATIONS)
async def describe_model(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
) -> str:
    """Summarize a fitted model: Gaussian count, screw axes with confidences and fitted joint ranges."""
    try:
        model = await asyncio.to_thread(_model, model_path)
    except Exception as e:
        return f"Error loading model {model_path}: {e}"
    return f"## Model: {Path(model_path).name}\n{_describe(model)}"


@mcp.tool(annotations={**TOOL_ANNOTATIONS, "readOnlyHint": False})
async def render_views(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
    out_dir: Annotated[str, Field(description="Directory the PNG renders are written to")],
    theta: Annotated[list[float] | None, Field(default=None, description="Joint angles, one per screw; omit to render a fitted configuration")] = None,
    config_index: Annotated[int, Field(default=0, ge=0, description="Fitted configuration to render when theta is omitted")] = 0,
    n_views: Annotated[int, Field(default=4, ge=1, le=64, description="Number of cameras on the viewing hemisphere")] = 4,
    size: Annotated[str, Field(default="64x64", description="Image size as WIDTHxHEIGHT")] = "64x64",
) -> str:
    """Render a model at given joint angles from cameras on a hemisphere and save the PNGs."""
    try:
        model = await asyncio.to_thread(_model, model_path)
        width, height = parse_size(size)
    except Exception as e:
        return f"Error: {e}"
    if theta is not None:
        if len(theta) != model.n_screws:
            return f"Error: theta has {len(theta)} values, model has {model.n_screws} screws"
        pose = torch.tensor(theta, dtype=torch.float64)
    elif config_index >= model.n_configs:
        return f"Error: config_index must be below {model.n_configs}"
    else:
        pose = config_index

    def work() -> list[Path]:
        target = Path(out_dir)
        target.mkdir(parents=True, exist_ok=True)
        paths = []
        with torch.no_grad():
            for i, cam in enumerate(hemisphere_cameras(n_views, image_size=(width, height))):
                path = target / f"render_{i:03d}.png"
                save_png(render_model(model, pose, cam), path)
                paths.append(path)
        return paths

    try:
        paths = await asyncio.to_thread(work)
    except Exception as e:
        return f"Error rendering {model_path}: {e}"
    listing = "\n".join(f"- {p}" for p in paths)
    return f"## Rendered {len(paths)} views\n{listing}"


@mcp.tool(annotations=TOOL_ANNOTATIONS)
async def estimate_joint_state(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
    dataset_dir: Annotated[str, Field(description="Dataset directory whose views show the current state")],
    config_index: Annotated[int, Field(default=0, ge=0, description="Configuration of the dataset treated as the current state")] = 0,
    camera_indices: Annotated[list[int] | None, Field(default=None, description="Cameras to use; all when omitted")] = None,
    seed: Annotated[int, Field(default=0, description="Seed for the Bayesian optimizer")] = 0,
    n_calls: Annotated[int, Field(default=50, ge=2, le=500, description="Objective evaluations for the Bayesian optimizer")] = 50,
) -> str:
    """Estimate the current joint angles from images by Bayesian optimization over the rendering loss."""

    def work():
        model = _model(model_path)
        views = dataset_views(load_dataset(dataset_dir), config_index, camera_indices)
        cfg = ControlConfig.build(n_calls=n_calls, n_random=min(10, n_calls - 1))
        return estimate_state(model, views, seed, cfg)

    try:
        theta = await asyncio.to_thread(work)
    except Exception as e:
        return f"Error estimating joint state: {e}"
    return json.dumps({"theta": theta.tolist()})


@mcp.tool(annotations=TOOL_ANNOTATIONS)
async def control_joint_to_goal(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
    dataset_dir: Annotated[str, Field(description="Dataset directory whose views show the current state")],
    goal_images: Annotated[list[str], Field(description="Goal exemplar PNG paths, one per selected camera")],
    camera_indices: Annotated[list[int], Field(description="Cameras the goal exemplars correspond to")],
    config_index: Annotated[int, Field(default=0, ge=0, description="Configuration of the dataset treated as the current state")] = 0,
    seed: Annotated[int, Field(default=0, description="Seed for the Bayesian optimizer")] = 0,
    n_calls: Annotated[int, Field(default=50, ge=2, le=500, description="Objective evaluations for the Bayesian optimizer")] = 50,
) -> str:
    """Find joint angles whose render changes the way the goal exemplar differs from the current image."""
    if len(goal_images) != len(camera_indices):
        return "Error: need one goal image per camera index"

    def work():
        model = _model(model_path)
        dataset = load_dataset(dataset_dir)
        views = [dataset_views(dataset, config_index, [c])[0] for c in camera_indices]
        embedder = ToyEmbedder()
        goal = GoalSpec.from_exemplars(
            [cam for cam, _ in views], [img for _, img in views], [load_png(p) for p in goal_images], embedder
        )
        cfg = ControlConfig.build(n_calls=n_calls, n_random=min(10, n_calls - 1))
        return control_to_goal(model, goal, embedder, seed, cfg)

    try:
        theta = await asyncio.to_thread(work)
    except Exception as e:
        return f"Error controlling to goal: {e}"
    return json.dumps({"theta": theta.tolist()})


@mcp.tool(annotations=TOOL_ANNOTATIONS)
async def plan_screw_trajectory(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
    screw_index: Annotated[int, Field(ge=0, description="Index of the active screw to move along")],
    theta_current: Annotated[float, Field(description="Current joint angle of that screw")],
    theta_target: Annotated[float, Field(description="Target joint angle of that screw")],
    offset: Annotated[float, Field(default=0.05, ge=0.0, description="Pre-grasp offset applied before theta_current")] = 0.05,
    n_steps: Annotated[int, Field(default=20, ge=2, le=1000, description="Number of waypoints")] = 20,
) -> str:
    """Plan gripper waypoints that carry the part's affordance point along its screw."""
    try:
        model = await asyncio.to_thread(_model, model_path)
        cfg = ControlConfig()
        trajectory = plan_trajectory(
            model, screw_index, theta_current, theta_target, offset, n_steps, robot_base=cfg.robot_base
        )
    except Exception as e:
        return f"Error planning trajectory: {e}"
    return trajectory.model_dump_json(indent=1)


# -- MCP Prompts --


@mcp.prompt()
def open_part(
    model_path: Annotated[str, Field(description="Path to a fitted model JSON document")],
    dataset_dir: Annotated[str, Field(description="Dataset directory showing the current state")],
    goal_image: Annotated[str, Field(description="Goal exemplar PNG")],
) -> str:
    """Walk through estimating the current state, finding the goal state and planning the motion."""
    return f"""Please use describe_model on {model_path} to see its screws and joint ranges.

Then:
1. Use estimate_joint_state with dataset {dataset_dir} to get the current joint angles
2. Use control_joint_to_goal with the goal exemplar {goal_image} (camera 0) to get the target angles
3. For each screw whose angle changes, use plan_screw_trajectory from the current to the target angle

Report the current angles, the target angles and the waypoints of each trajectory."""


# -- MCP Resources --


@mcp.resource("screwsplat://help")
def help_resource() -> str:
    """Usage guide for the ScrewSplat MCP server with examples for all tools."""
    return """# ScrewSplat MCP Server - Help Guide

## Available Tools

### describe_model
Summarize a fitted model: Gaussians, screws (type, confidence, axis) and fitted joint ranges.
- Example: describe_model(model_path="out/model.json")

### render_views
Render the model from cameras on a hemisphere and save PNGs.
- Pass theta (one value per screw) or a fitted config_index
- Example: render_views(model_path="out/model.json", out_dir="renders", theta=[0.6], n_views=8)

### estimate_joint_state
Estimate current joint angles from a dataset configuration's views.
- Bayesian optimization within the fitted joint ranges
- Example: estimate_joint_state(model_path="out/model.json", dataset_dir="data/laptop", config_index=2)

### control_joint_to_goal
Find the joint angles that move the render toward a goal exemplar.
- Needs one goal PNG per camera index
- Example: control_joint_to_goal(model_path="out/model.json", dataset_dir="data/laptop", goal_images=["goal.png"], camera_indices=[0])

### plan_screw_trajectory
Waypoints carrying the part's affordance point along one screw.
- Example: plan_screw_trajectory(model_path="out/model.json", screw_index=0, theta_current=0.2, theta_target=1.0)

## Tips
- Fit models and synthesize datasets with the screwsplat command-line tool
- Models are cached by path and modification time; rewriting a model file invalidates its entry
- Angles outside the fitted range are rejected by plan_screw_trajectory
"""


def main():
    mcp.run(transport="stdio")


if __name__ == "__main__":
    main()
