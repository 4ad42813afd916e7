"""Hungarian set loss: optimal one-to-one slot/lane matching, no NMS.

Matched slots pay an existence negative log-likelihood plus a weighted L1
on their lane parameters; unmatched slots pay the no-object NLL; positive
scenes add an L1 on the shared curvature/horizon pair. The assignment is
solved on the detached cost matrix, gradients flow at fixed assignment
(standard set-prediction practice).
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment

from .model import DetectorOutput
from .scenes import SyntheticScene

LAMBDA_PARAM = 5.0


def scene_targets(scene: SyntheticScene, dtype=torch.float32) -> dict:
    params = torch.tensor([[l.m, l.n, l.b] for l in scene.lanes], dtype=dtype)
    shared = torch.tensor([scene.k, scene.f], dtype=dtype)
    return {"params": params.reshape(-1, 3), "shared": shared}


def match_cost_matrix(exist_logits: torch.Tensor, params: torch.Tensor, gt_params: torch.Tensor) -> torch.Tensor:
    """cost[s, g] = -log sigmoid(logit_s) + lambda * L1(params_s, gt_g)."""
    nll = F.softplus(-exist_logits).unsqueeze(1)  # (Q, 1)
    l1 = (params.unsqueeze(1) - gt_params.unsqueeze(0)).abs().sum(-1)  # (Q, G)
    return nll + LAMBDA_PARAM * l1


def solve_assignment(exist_logits: torch.Tensor, params: torch.Tensor, gt_params: torch.Tensor) -> list[tuple[int, int]]:
    """Optimal (slot, gt) pairs for one image via the Hungarian method."""
    if gt_params.shape[0] == 0:
        return []
    with torch.no_grad():
        cost = match_cost_matrix(exist_logits, params, gt_params)
    rows, cols = linear_sum_assignment(cost.cpu().numpy())
    return sorted(zip(rows.tolist(), cols.tolist()))


def hungarian_loss_single(
    output_slots: tuple[torch.Tensor, torch.Tensor, torch.Tensor],
    targets: dict,
    assignment: list[tuple[int, int]] | None = None,
) -> tuple[torch.Tensor, list[tuple[int, int]]]:
    """Loss for one image; pass `assignment` to hold the matching fixed
    (gradient checks differentiate at the optimum found once)."""
    exist_logits, params, shared = output_slots
    gt_params = targets["params"].to(params.dtype)
    if assignment is None:
        assignment = solve_assignment(exist_logits, params, gt_params)
    q = exist_logits.shape[0]
    matched_slots = [s for s, _ in assignment]
    unmatched = [s for s in range(q) if s not in matched_slots]
    total = exist_logits.new_zeros(())
    for s, g in assignment:
        total = total + F.softplus(-exist_logits[s])
        total = total + LAMBDA_PARAM * (params[s] - gt_params[g]).abs().sum()
    for s in unmatched:
        total = total + F.softplus(exist_logits[s])
    loss = total / q
    if gt_params.shape[0] > 0:
        loss = loss + LAMBDA_PARAM * (shared - targets["shared"].to(shared.dtype)).abs().sum()
    return loss, assignment


def hungarian_loss(output: DetectorOutput, scenes: list[SyntheticScene]) -> torch.Tensor:
    """Mean set loss over a batch."""
    total = output.exist_logits.new_zeros(())
    for i, scene in enumerate(scenes):
        slots = (output.exist_logits[i], output.params[i], output.shared[i])
        loss, _ = hungarian_loss_single(slots, scene_targets(scene, output.params.dtype))
        total = total + loss
    return total / len(scenes)
