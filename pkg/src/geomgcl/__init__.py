"""Dual-view (2D/3D) geometric molecular graph learning.

Covalent-bond and cutoff-radius views of each molecule are encoded by
a dual-channel geometric message-passing network, pretrained with a
cross-view contrastive objective, and finetuned for property
prediction.
"""

from .geomgraph import (
    ViewGraph,
    angle_at,
    assign_angle_domain,
    assign_distance_domain,
    build_2d_graph,
    build_3d_graph,
    pair_distance,
)
from .geommpnn import EncoderConfig, MoleculeInputs, encode_view, featurize
from .molio import (
    CLASSIFICATION,
    REGRESSION,
    Dataset,
    DatasetError,
    Molecule,
    average_conformers,
    parse_dataset,
    serialize_dataset,
    split_dataset,
)
from .objectives import (
    classification_loss,
    contrastive_loss,
    predict,
    project,
    regression_loss,
    rmse,
    roc_auc,
    spatial_regularizer,
)
from .rbf import RbfSpec, expand, make_spec
from .tensorad import ParameterStore, Tensor, evaluate_with_gradients
from .trainer import (
    Checkpoint,
    CheckpointError,
    TrainConfig,
    adam_step,
    finetune,
    kfold_evaluate,
    load_checkpoint,
    pretrain,
    save_checkpoint,
)

__version__ = "0.1.0"
