"""Multi-level terrain maps, traversability analysis and path planning on point clouds."""
from .errors import *  # noqa: F401,F403
from .ml_skimap import MapConfig, MLSkiMap, VoxelKey, build_map, level_partition, load_map
from .planner import Path, PlannerConfig, astar, path_cost, plan
from .pointcloud_io import PointCloud, load_point_cloud, write_colored_cloud, write_json_document
from .scenegen import SceneSpec, generate
from .simplify import SimplifyParams, simplify_map, voxel_curvature
from .traversability import (BLOCKED, TraversabilityConfig, TraversabilityField, VehicleModel,
                             compute_field, pose_cost)
from .wtg import WTG, WtgConfig, build_wtg, load_graph, snap_to_node

__version__ = "0.1.0"
