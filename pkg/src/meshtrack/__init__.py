"""meshtrack: dense long-range point tracking of articulated figures.

A fixed-topology triangle mesh is fitted to the first silhouette of a
sequence and evolved frame to frame: self-occlusion is detected from mesh
edge crossings, per-vertex motion comes adaptively from optical flow or a
polynomial history prediction, and an iterative deformation alternates
silhouette-constrained regularization with patch-wise rigid re-anchoring
to the reference mesh. Every point survives to the last frame, giving one
fully populated trajectory matrix.
"""

from .bench import (GroundTruth, SynthScenario, generate_scenario,
                    match_markers, offset_distances, offset_std,
                    tracking_length_percentage)
from .config import TrackerConfig
from .deformation import (DeformParams, DriftLabels, EnergyTrace,
                          RigidTransform2, deform, fit_patch_rigid, fit_power,
                          label_drift, regularize, rigid_blend)
from .errors import (EmptySilhouetteError, FormatError, InputError,
                     MeshGenerationError, NumericalError, ScenarioError,
                     TrackingAborted)
from .flow import (FlowField, estimate_flow, read_flo, read_flo_file,
                   sample_bicubic, write_flo, write_flo_file)
from .geometry import (IntersectionResult, MeshState, MeshTopology,
                       longest_edge, segment_intersect, vertex_density_map)
from .mesh_gen import MeshGenParams, generate_reference_mesh, read_off, write_off
from .propagation import (MotionEstimate, OcclusionReport, TrajectoryHistory,
                          detect_self_occlusion, estimate_motion,
                          initial_positions, predict_polynomial)
from .silhouette import (DistanceField, SilhouetteMask, is_inside, load_mask,
                         read_mask, signed_distance, write_mask)
from .tracker import (FrameDiagnostics, TrajectoryMatrix, read_trajectories,
                      track_sequence, write_diagnostics, write_trajectories)

__version__ = "0.1.0"
