"""Semantic pointcloud filtering: move LiDAR returns that land on penetrable
vegetation down onto the support surface beneath, using self-supervised
labels derived from a legged robot's footholds."""

from .filter import (BasePredictor, FixedPredictor, HeuristicPredictor, SemanticPointcloudFilter,
                     combine_outputs, filter_pointcloud)
from .footholds import FootholdExtractor, FootholdSet, FootTrajectory, WindowParams, extract_footholds
from .geometry import CameraIntrinsics, PointCloud, Pose, SparseDepthImage, SurfaceMap
from .gp import GaussianProcessTile, TiledSurfaceReconstructor, reconstruct_surface
from .labels import SsdeLabel, TrainingSample, build_training_sample, generate_ssde_label
from .mapping import (ElevationMap, ErrorMapAccumulator, accumulate_error, estimate_traversability,
                      foothold_nn_map, fuse_elevation, smooth_map)
from .metrics import compute_miou, compute_rel, compute_rmse
from .training import TinyConvPredictor, train_predictor

__version__ = "0.1.0"

__all__ = [
    "BasePredictor", "CameraIntrinsics", "ElevationMap", "ErrorMapAccumulator", "FixedPredictor",
    "FootTrajectory", "FootholdExtractor", "FootholdSet", "GaussianProcessTile", "HeuristicPredictor",
    "PointCloud", "Pose", "SemanticPointcloudFilter", "SparseDepthImage", "SsdeLabel", "SurfaceMap",
    "TiledSurfaceReconstructor", "TinyConvPredictor", "TrainingSample", "WindowParams",
    "accumulate_error", "build_training_sample", "combine_outputs", "compute_miou", "compute_rel",
    "compute_rmse", "estimate_traversability", "extract_footholds", "filter_pointcloud",
    "foothold_nn_map", "fuse_elevation", "generate_ssde_label", "reconstruct_surface", "smooth_map",
    "train_predictor",
]
