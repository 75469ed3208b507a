"""Multi-link WiFi CSI occupancy sensing toolkit.

Simulates TDMA mesh CSI with Fresnel-zone geometry, speaks the binary node
protocol, extracts per-link window features, and runs forward-chaining
link-selection studies.
"""

__version__ = "0.1.0"

from .geometry import (
    LinkGeometry,
    Point3,
    Scenario,
    enumerate_links,
    fresnel_radius,
    in_fresnel_zone,
    intersection_probability,
    load_scenario,
)
from .learn import Dataset, auc, rank_links, select_top_k, train_logistic, train_mlp
from .pipeline import FeatureVector, extract_features, nbvi, amplitude_variance
from .protocol import CsiPacket, TdmaSchedule, decode_packet, encode_packet, tdma_rate
from .study import forward_chain_folds, link_count_sweep, run_configuration
from .synth import SimConfig, generate_timeline, run_simulation, synthesize_csi

__all__ = [
    "__version__",
    "LinkGeometry",
    "Point3",
    "Scenario",
    "enumerate_links",
    "fresnel_radius",
    "in_fresnel_zone",
    "intersection_probability",
    "load_scenario",
    "Dataset",
    "auc",
    "rank_links",
    "select_top_k",
    "train_logistic",
    "train_mlp",
    "FeatureVector",
    "extract_features",
    "nbvi",
    "amplitude_variance",
    "CsiPacket",
    "TdmaSchedule",
    "decode_packet",
    "encode_packet",
    "tdma_rate",
    "forward_chain_folds",
    "link_count_sweep",
    "run_configuration",
    "SimConfig",
    "generate_timeline",
    "run_simulation",
    "synthesize_csi",
]
