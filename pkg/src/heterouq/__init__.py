"""Post-hoc epistemic uncertainty for message-passing networks on graphs.

The package trains small message-passing backbones from scratch, estimates
epistemic uncertainty post hoc from the joint density of all layer
embeddings, reproduces out-of-distribution evaluation protocols at desk
scale, and verifies the underlying layer-information identities exactly on
finite generative models.
"""

from .estimators import (
    JldeConfig,
    JldeEstimator,
    PcaMap,
    ScoreTable,
    fit_jlde,
    fit_kde,
    fit_mog,
    fit_pca,
    score_energy,
    score_jlde,
    score_msp,
    score_sampling_variance,
)
from .experiment import ExperimentConfig, run_experiment, run_layer_ablation, run_moons_sweep
from .graph import (
    DatasetError,
    Graph,
    HomophilyReport,
    SplitMasks,
    adjusted_homophily,
    class_homophily,
    compatibility_matrix,
    edge_homophily,
    homophily_report,
    khop_shells,
    load_dataset,
    make_moons_graph,
    make_splits,
    node_homophily,
    save_dataset,
)
from .infotheory import (
    FiniteGenerativeModel,
    gain_bound,
    information_balance,
    information_homophily,
    mi,
    cmi,
    push_forward,
    random_model,
    verify_theory,
)
from .metrics import auc_pr, auc_roc, brier, ece, misclassification_auc, reliability_curve
from .models import (
    ArchConfig,
    EmbeddingStack,
    MpnnModel,
    TrainConfig,
    ensemble_predict,
    mc_dropout_predict,
    normalized_adjacency,
    train,
)
from .shifts import ShiftSpec, apply_feature_noise, apply_loc
from .tensor import ParamSet, Tensor, adam_step, grad_check

__version__ = "0.1.0"
