"""Eye-tracking sequence classification toolkit.

Raw gaze recordings are parsed and filtered (:mod:`gaze_vtnet.gazedata`),
turned into model-ready datapoints by cyclical splitting, length cutoffs and
scanpath rasterization (:mod:`gaze_vtnet.preprocess`), and classified either
by a hybrid recurrent/convolutional network built on hand-written gradient
kernels (:mod:`gaze_vtnet.gradcore`, :mod:`gaze_vtnet.vtnet`) or by
summary-feature baselines (:mod:`gaze_vtnet.baselines`). A user-grouped
stratified cross-validation harness (:mod:`gaze_vtnet.evalharness`) scores
everything, and :mod:`gaze_vtnet.synthgen` produces seeded synthetic cohorts
so the whole pipeline is verifiable without clinical data.
"""

__version__ = "0.1.0"

from gaze_vtnet.gazedata import Recording, parse_recording
from gaze_vtnet.preprocess import Datapoint, build_datapoints
from gaze_vtnet.vtnet import VTNetConfig, VTNetSpec
from gaze_vtnet.evalharness import run_cv, emit_report

__all__ = [
    "__version__",
    "Recording",
    "parse_recording",
    "Datapoint",
    "build_datapoints",
    "VTNetConfig",
    "VTNetSpec",
    "run_cv",
    "emit_report",
]
