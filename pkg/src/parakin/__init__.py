"""Workspace regions and trajectory feasibility of planar five-bar parallel manipulators."""
from .atlas_io import CorruptAtlas, VersionError, export_atlas, import_atlas
from .celltree import CellBox, CellLabel, CellTree, DecompositionConfig, build_workspace_tree
from .config import ParseError, RenderConfig, RunConfig, ValidationError, load_config, parse_config
from .kinematics import (
    WORKING_MODES,
    GeometryError,
    InvalidConfiguration,
    JointConfig,
    ManipulatorGeometry,
    PlatformConfig,
    SingularityClass,
    WorkingMode,
    classify_singularity,
    forward_kinematics,
    inverse_kinematics,
    inverse_kinematics_branch,
    jacobians,
)
from .regions import (
    DEFAULT_ROOT,
    RegionAtlas,
    RegionKind,
    build_atlas,
    is_workspace_n_connected,
    locate,
    separating_pair,
)
from .render import UnknownRegionId, render_region_map
from .trajectory import (
    ContinuousTask,
    FailureReason,
    PointToPointTask,
    Verdict,
    check_continuous,
    check_point_to_point,
)

__version__ = "0.1.0"
