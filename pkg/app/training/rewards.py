"""Reward, execution rate, penalty and objective arithmetic for the joint RL stage.

Layer indices are 1-based to match the computational-path notation.
"""
from __future__ import annotations

from typing import List, Literal, Sequence

from app.schemas.models import RewardBreakdown

RateSemantics = Literal["execute", "skip"]
CreditAssignment = Literal["causal", "layer"]


def layer_return(actions: Sequence[int], costs: Sequence[float], i: int) -> float:
    """(1/L) * sum_{j=i..L} (1 - a_j) * C_j: the skip saving from layer ``i`` onward."""

    num_layers = len(actions)
    if len(costs) != num_layers:
        raise ValueError(f"{len(costs)} costs for {num_layers} actions")
    if not 1 <= i <= num_layers:
        raise ValueError(f"layer index {i} outside [1, {num_layers}]")
    saving = sum((1 - a) * c for a, c in zip(actions[i - 1 :], costs[i - 1 :]))
    return saving / num_layers


def reward(actions: Sequence[int], costs: Sequence[float], task_loss_value: float, beta: float, i: int) -> float:
    """R^i = layer_return - beta * task loss."""

    return layer_return(actions, costs, i) - beta * task_loss_value


def layer_rewards(actions: Sequence[int], costs: Sequence[float], task_loss_value: float, beta: float) -> List[float]:
    return [reward(actions, costs, task_loss_value, beta, i) for i in range(1, len(actions) + 1)]


def execution_rate_mu(scores: Sequence[float], rate_semantics: RateSemantics = "execute") -> float:
    """Mean gate score; ``skip`` semantics report 1 - mean."""

    if not scores:
        raise ValueError("execution rate needs at least one score")
    mu = sum(scores) / len(scores)
    return 1.0 - mu if rate_semantics == "skip" else mu


def rate_penalty(mu: float, target_rate: float) -> float:
    """xi = (mu - t)^2."""

    return (mu - target_rate) ** 2


def rl_objective(
    task_loss_value: float, rewards: Sequence[float], penalty: float, lambda1: float, lambda2: float
) -> float:
    """J = loss - lambda1 * sum(R) + lambda2 * xi for one sampled action vector."""

    return task_loss_value - lambda1 * sum(rewards) + lambda2 * penalty


def credit_coefficients(
    actions: Sequence[int],
    costs: Sequence[float],
    task_loss_value: float,
    beta: float,
    mode: CreditAssignment = "causal",
) -> List[float]:
    """Score-function coefficient for each decision.

    ``causal`` keeps the part of sum_j R^j that decision ``i`` can influence:
    sum_j layer_return(max(i, j)) - L * beta * loss. ``layer`` uses R^i itself.
    """

    num_layers = len(actions)
    if mode == "layer":
        return layer_rewards(actions, costs, task_loss_value, beta)
    coefficients = []
    for i in range(1, num_layers + 1):
        future = sum(layer_return(actions, costs, max(i, j)) for j in range(1, num_layers + 1))
        coefficients.append(future - num_layers * beta * task_loss_value)
    return coefficients


def reward_breakdown(
    actions: Sequence[int],
    scores: Sequence[float],
    costs: Sequence[float],
    task_loss_value: float,
    *,
    beta: float,
    lambda1: float,
    lambda2: float,
    target_rate: float,
    rate_semantics: RateSemantics = "execute",
) -> RewardBreakdown:
    rewards = layer_rewards(actions, costs, task_loss_value, beta)
    mu = execution_rate_mu(scores, rate_semantics)
    penalty = rate_penalty(mu, target_rate)
    return RewardBreakdown(
        layer_returns=rewards,
        task_loss=task_loss_value,
        mu=mu,
        penalty=penalty,
        objective=rl_objective(task_loss_value, rewards, penalty, lambda1, lambda2),
    )


__all__ = [
    "credit_coefficients",
    "execution_rate_mu",
    "layer_return",
    "layer_rewards",
    "rate_penalty",
    "reward",
    "reward_breakdown",
    "rl_objective",
]
