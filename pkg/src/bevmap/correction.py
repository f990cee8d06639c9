"""Distillation-style correction of degraded BEV features.

During training the model runs twice per sample: a teacher pass over
the complete view set and a student pass over the degraded one. The
correction loss pulls the student's BEV feature map toward the
teacher's. The teacher side is gradient-blocked by default so the
complete-view representation acts as a fixed target rather than being
dragged toward the degraded one; the flag exists so the effect of that
choice can be measured.
"""

from __future__ import annotations

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractViolation

__all__ = ["CORRECTION_KINDS", "correction_loss"]

CORRECTION_KINDS = ("l2", "l1", "kl")


def correction_loss(student_bev: Tensor, teacher_bev: Tensor,
                    kind: str = "l2", detach_teacher: bool = True) -> Tensor:
    """Penalty for the student BEV deviating from the teacher BEV.

    ``l2`` is mean squared error, ``l1`` mean absolute error, ``kl``
    softmaxes each cell's channel vector on both sides and takes the
    mean divergence of the student distribution from the teacher's.
    """
    if kind not in CORRECTION_KINDS:
        raise ContractViolation(f"unknown correction kind {kind!r}")
    if student_bev.shape != teacher_bev.shape:
        raise ContractViolation(
            f"BEV shapes differ: {student_bev.shape} vs {teacher_bev.shape}")
    teacher = ad.stop_grad(teacher_bev) if detach_teacher else teacher_bev
    if kind == "l2":
        return ad.mse_loss(student_bev, teacher)
    if kind == "l1":
        return ad.l1_loss(student_bev, teacher)
    return ad.kl_loss(ad.softmax(teacher, axis=-1),
                      ad.softmax(student_bev, axis=-1))
