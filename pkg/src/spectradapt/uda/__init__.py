from .losses import (bandwidth_ladder, consistency_loss, coral_loss,
                     infonce_loss, jdot_cost_matrix, median_pairwise_distance,
                     mmd2_multikernel)
from .sinkhorn import TransportPlan, sinkhorn
from .drivers import (AdaptData, AdaptResult, DiscriminatorSpec, UdaHyper,
                      NumericalAbort, adapt, adda_adapt, build_discriminator,
                      coral_adapt, dan_adapt, dann_adapt, deepjdot_adapt,
                      discriminator_logits, eval_features_probs,
                      mean_teacher_adapt, pretrain_source, simclr_adapt,
                      source_continue)
from ..tensornn.tensor import grad_reverse

__all__ = [
    "bandwidth_ladder", "consistency_loss", "coral_loss", "infonce_loss",
    "jdot_cost_matrix", "median_pairwise_distance", "mmd2_multikernel",
    "TransportPlan", "sinkhorn", "AdaptData", "AdaptResult",
    "DiscriminatorSpec", "UdaHyper", "NumericalAbort", "adapt", "adda_adapt",
    "build_discriminator", "coral_adapt", "dan_adapt", "dann_adapt",
    "deepjdot_adapt", "discriminator_logits", "eval_features_probs",
    "mean_teacher_adapt", "pretrain_source", "simclr_adapt",
    "source_continue", "grad_reverse",
]
