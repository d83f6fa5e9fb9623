"""Adam and rotation-equivariant VectorAdam for vector-valued parameters."""

from .tensor import Rotation, apply_rotation, as_param_matrix, random_rotation, row_norms
from .optim import (
    OPTIMIZERS,
    AdamState,
    Hyper,
    InfVectorAdamState,
    Trajectory,
    VectorAdamState,
    adam_step,
    gd_step,
    init_state,
    run,
    step,
    vector_adam_inf_step,
    vector_adam_step,
)
from .mesh import TriMesh, load_obj, make_circle, make_disk, make_icosphere, save_obj
from .energy import ENERGIES, make_energy

__version__ = "0.1.0"
