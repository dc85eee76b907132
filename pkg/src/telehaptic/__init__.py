"""Desk-scale haptic mixed-reality teleoperation stack.

A simulated RGBD robot streams frames over a delay-injecting channel to a
server that fuses them into a TSDF, renders haptic interaction against the
virtualized scene, segments objects interactively, plans and replans paths,
and compensates network latency with a linear velocity predictor.
"""

from .camera import CameraIntrinsics, RgbdFrame, look_at
from .errors import TelehapticError
from .haptic import (BumpTexture, ContactMode, ForceSample, FrictionMode,
                     HapticRenderer, HapticState, apply_friction,
                     apply_texture, compute_force, detect_collision,
                     nearest_surface_point, proxy_update)
from .netstream import (ChannelPair, DelayedChannel, Fixed, Ramp,
                        VirtualClock, decode_frame, encode_frame)
from .planner import (OccupancyGrid, PathPlan, RrtParams, VirtualObstacle,
                      build_occupancy, replan_if_blocked, rrt_plan)
from .segment import (RegionParams, SegMetrics, evaluate, fuse_labels,
                      object_extent, region_grow, seed_from_mark)
from .simworld import Scene, SimRobot, render_frame, robot_step, scripted_run
from .tsdf import (GroundPlane, SurfaceSample, TsdfVolume, auto_volume,
                   detect_ground_plane, dump_volume, export_ply,
                   integrate_frame, load_volume, raycast, sample_tsdf)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
