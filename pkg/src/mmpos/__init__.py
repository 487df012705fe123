"""Multi-point vehicle positioning from mmWave SFCW multipath measurements."""

from .geometry import MirrorPlane, Scenario, reflect_point
from .imaging import ImageGrid, VoxelImage, reconstruct_image
from .mapping import search_theta1
from .metrics import directed_hausdorff, hausdorff
from .signals import SfcwSpec, SwSpec, simulate
from .sync import synchronize

__version__ = "0.1.0"

__all__ = [
    "ImageGrid",
    "MirrorPlane",
    "Scenario",
    "SfcwSpec",
    "SwSpec",
    "VoxelImage",
    "directed_hausdorff",
    "hausdorff",
    "reconstruct_image",
    "reflect_point",
    "search_theta1",
    "simulate",
    "synchronize",
]
