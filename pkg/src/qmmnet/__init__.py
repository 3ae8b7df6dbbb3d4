"""qmmnet: spin-polarized semi-empirical QMM features and SE(3)-equivariant
orbital message passing for delta-learning molecular properties.

Set QMMNET_NUMBA=0 to force the pure-numpy fallback kernels.
"""

from .constants import (
    ANGSTROM_TO_BOHR,
    BOHR_TO_ANGSTROM,
    CHEMICAL_ACCURACY_MEV,
    EV_TO_HARTREE,
    HARTREE_TO_EV,
)
from .errors import QmmNetError
from .scf import (
    ENGINE_VERSION,
    EngineParams,
    LowLevelResult,
    MolecularSystem,
    QMMSet,
    rotate_system_check,
    run_scf,
    spin_gaps,
)
from .network import ModelConfig, ModelParams, build_graph, forward
from .training import TrainConfig, TrainSample, evaluate, train
from .dataio import (
    DatasetManifest,
    ManifestRecord,
    load_checkpoint,
    load_qmms,
    parse_xyz,
    save_checkpoint,
    save_qmms,
    serialize_xyz,
    split_dataset,
)
from .corpus import generate_corpus

__version__ = "0.1.0"

__all__ = [
    "ANGSTROM_TO_BOHR",
    "BOHR_TO_ANGSTROM",
    "CHEMICAL_ACCURACY_MEV",
    "EV_TO_HARTREE",
    "HARTREE_TO_EV",
    "ENGINE_VERSION",
    "QmmNetError",
    "EngineParams",
    "LowLevelResult",
    "MolecularSystem",
    "QMMSet",
    "rotate_system_check",
    "run_scf",
    "spin_gaps",
    "ModelConfig",
    "ModelParams",
    "build_graph",
    "forward",
    "TrainConfig",
    "TrainSample",
    "evaluate",
    "train",
    "DatasetManifest",
    "ManifestRecord",
    "load_checkpoint",
    "load_qmms",
    "parse_xyz",
    "save_checkpoint",
    "save_qmms",
    "serialize_xyz",
    "split_dataset",
    "generate_corpus",
    "__version__",
]
