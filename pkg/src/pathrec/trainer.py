"""Hierarchical actor-critic training of the session-level and path-level agents.

Per instance: encode the prefix, let the session agent sample the long-walk start, roll a
2-step walk from it and another from the last prefix item, then optimize

    L = L_ce + alpha * (L_path(long) + L_path(short)) + beta * L_se

with one Adam step per batch. Rollouts run without autograd; log-probabilities and values
are recomputed in one padded batch for the backward pass.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .agents import ActionSpace, PathState, assemble_state, path_logits, path_policy, session_logits, session_policy
from .kg import GraphError
from .model import PathReasoner
from .rewards import RewardConfig, multi_target_reward, path_midpoint_reward

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "L_ce", "L_path", "L_se", "mean_terminal_reward", "mean_midpoint_reward")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    alpha: float = 0.01
    beta: float = 0.005
    gamma: float = 0.99
    epochs: int = 150
    batch_size: int = 256
    seed: int = 0
    T: int = 5
    dropout: float = 0.7
    eps: float = 1e-8
    midpoint_reward: bool = True

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def rewards(self) -> RewardConfig:
        return RewardConfig(T=self.T, eps=self.eps)


@dataclass
class Step:
    current: int
    actions: ActionSpace
    choice: int
    log_prob: float
    reward: float


@dataclass
class Episode:
    start_kind: str
    start: int
    steps: list[Step] = field(default_factory=list)

    @property
    def rewards(self) -> list[float]:
        return [s.reward for s in self.steps]


@dataclass
class SessionChoice:
    candidates: list[int]
    choice: int
    log_prob: float


@dataclass
class Rollout:
    row: int
    long: Episode | None
    short: Episode | None
    session: SessionChoice | None


@dataclass
class EpochMetrics:
    epoch: int
    L_ce: float
    L_path: float
    L_se: float
    mean_terminal_reward: float
    mean_midpoint_reward: float

    def row(self) -> dict:
        return {k: getattr(self, k) for k in METRIC_FIELDS}


def returns(rewards, gamma: float) -> list[float]:
    """Discounted returns, ``G[t] = rewards[t] + gamma * G[t + 1]`` with ``G[-1] = rewards[-1]``.

    ``rewards[t]`` is the reward received for the action taken at step ``t``.
    """
    if len(rewards) == 0:
        raise ValueError("empty reward sequence")
    out = [0.0] * len(rewards)
    acc = 0.0
    for t in range(len(rewards) - 1, -1, -1):
        acc = float(rewards[t]) + gamma * acc
        out[t] = acc
    return out


def actor_critic_terms(values: torch.Tensor, log_probs: torch.Tensor, targets) -> tuple[torch.Tensor, torch.Tensor]:
    """(sum (v - G) ln pi, 1/2 sum (v - G)^2) with the advantage held constant in the first term."""
    targets = torch.as_tensor(targets, dtype=torch.float64)
    diff = values - targets
    return (diff.detach() * log_probs).sum(), 0.5 * (diff ** 2).sum()


def _episode_state(model: PathReasoner, s_se, start: int, current: int) -> PathState:
    return PathState(s_se, model.emb.ent[start], model.emb.ent[current])


def path_loss(episode: Episode, model: PathReasoner, s_se: torch.Tensor, gamma: float) -> torch.Tensor:
    """Actor-critic loss of one recorded walk, recomputed from the current parameters."""
    G = returns(episode.rewards, gamma)
    values, log_probs = [], []
    for step in episode.steps:
        state = _episode_state(model, s_se, episode.start, step.current)
        vec = assemble_state(state.s_se, state.s_start, state.s_curr)
        values.append(vec @ model.policy.v_path)
        log_probs.append(torch.log(path_policy(model.policy, state, step.actions, model.emb)[step.choice]))
    policy_term, value_term = actor_critic_terms(torch.stack(values), torch.stack(log_probs), G)
    return policy_term + value_term


def session_loss(choice: SessionChoice, long_episode: Episode, model: PathReasoner, s_se: torch.Tensor, gamma: float) -> torch.Tensor:
    """Session-agent loss against the long walk's final return ``G[M-1]``."""
    G_last = returns(long_episode.rewards, gamma)[-1]
    log_prob = torch.log(session_policy(model.policy, s_se, choice.candidates, model.emb)[choice.choice])
    v = s_se @ model.policy.v_se
    policy_term, value_term = actor_critic_terms(v[None], log_prob[None], [G_last])
    return policy_term + value_term


def _sample(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probs) - 1)


def unique_in_order(items) -> list[int]:
    seen, out = set(), []
    for i in items:
        if i not in seen:
            seen.add(i)
            out.append(i)
    return out


class Trainer:
    def __init__(self, model: PathReasoner, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr, betas=(0.9, 0.999), eps=1e-8)
        self.epoch = 0
        self.history: list[EpochMetrics] = []

    # rollouts ---------------------------------------------------------------------------

    def walk(self, s_se: torch.Tensor, start: int, t_list, rng, kind: str) -> Episode | None:
        model, cfg = self.model, self.cfg
        episode = Episode(kind, start)
        current = start
        for t in range(2):
            try:
                space = model.actions.sample(current, cfg.dropout, rng)
            except GraphError:
                return None
            probs = path_policy(model.policy, _episode_state(model, s_se, start, current), space, model.emb)
            probs = probs.numpy()
            a = _sample(probs, rng)
            rel = model.graph.relation_of(int(space.codes[a]))
            nxt = int(space.tails[a])
            if t == 0:
                reward = path_midpoint_reward((rel, nxt), start, t_list, model.midpoints, cfg.rewards) if cfg.midpoint_reward else 0.0
            else:
                reward = multi_target_reward(nxt, t_list, model.table.entity_vecs, cfg.rewards)
            episode.steps.append(Step(current, space, a, float(np.log(probs[a])), reward))
            current = nxt
        return episode

    def rollout(self, row: int, s_se: torch.Tensor, prefix: list[int], t_list: list[int], rng) -> Rollout:
        model = self.model
        long = session = None
        if model.cfg.session_agent:
            candidates = unique_in_order(prefix)
            probs = session_policy(model.policy, s_se, candidates, model.emb).numpy()
            c = _sample(probs, rng)
            long = self.walk(s_se, candidates[c], t_list, rng, "long")
            if long is not None:
                session = SessionChoice(candidates, c, float(np.log(probs[c])))
        short = self.walk(s_se, prefix[-1], t_list, rng, "short")
        return Rollout(row, long, short, session)

    # losses -----------------------------------------------------------------------------

    def rl_losses(self, s_se: torch.Tensor, rollouts: list[Rollout]) -> tuple[torch.Tensor, torch.Tensor]:
        """Summed (over the batch) path and session losses from recorded rollouts."""
        model, gamma = self.model, self.cfg.gamma
        rows, starts, currents, spaces, choices, targets = [], [], [], [], [], []
        for ro in rollouts:
            for ep in (ro.long, ro.short):
                if ep is None:
                    continue
                G = returns(ep.rewards, gamma)
                for step, g in zip(ep.steps, G):
                    rows.append(ro.row)
                    starts.append(ep.start)
                    currents.append(step.current)
                    spaces.append(step.actions)
                    choices.append(step.choice)
                    targets.append(g)

        zero = s_se.sum() * 0.0
        l_path = zero
        if rows:
            ent, rel = model.emb.ent, model.emb.rel
            width = max(len(s) for s in spaces)
            codes = torch.zeros(len(spaces), width, dtype=torch.long)
            tails = torch.zeros(len(spaces), width, dtype=torch.long)
            mask = torch.zeros(len(spaces), width, dtype=torch.bool)
            for i, s in enumerate(spaces):
                codes[i, : len(s)] = torch.from_numpy(s.codes)
                tails[i, : len(s)] = torch.from_numpy(s.tails)
                mask[i, : len(s)] = True
            act = torch.cat([rel[codes], ent[tails]], dim=-1)
            states = assemble_state(s_se[rows], ent[starts], ent[currents])
            logits = path_logits(model.policy, states, act).masked_fill(~mask, float("-inf"))
            log_probs = F.log_softmax(logits, dim=-1).gather(1, torch.tensor(choices)[:, None]).squeeze(1)
            values = states @ model.policy.v_path
            policy_term, value_term = actor_critic_terms(values, log_probs, targets)
            l_path = policy_term + value_term

        l_se = zero
        chosen = [ro for ro in rollouts if ro.session is not None]
        if chosen:
            width = max(len(ro.session.candidates) for ro in chosen)
            cand = torch.zeros(len(chosen), width, dtype=torch.long)
            mask = torch.zeros(len(chosen), width, dtype=torch.bool)
            for i, ro in enumerate(chosen):
                cand[i, : len(ro.session.candidates)] = torch.tensor(ro.session.candidates)
                mask[i, : len(ro.session.candidates)] = True
            se_rows = [ro.row for ro in chosen]
            logits = session_logits(model.policy, s_se[se_rows], model.emb.ent[cand]).masked_fill(~mask, float("-inf"))
            picks = torch.tensor([ro.session.choice for ro in chosen])[:, None]
            log_probs = F.log_softmax(logits, dim=-1).gather(1, picks).squeeze(1)
            values = s_se[se_rows] @ model.policy.v_se
            G_last = [returns(ro.long.rewards, gamma)[-1] for ro in chosen]
            policy_term, value_term = actor_critic_terms(values, log_probs, G_last)
            l_se = policy_term + value_term
        return l_path, l_se

    # epochs -----------------------------------------------------------------------------

    def train_epoch(self, instances: list[tuple[list[int], list[int]]]) -> EpochMetrics:
        """One pass over (prefix entity ids, target entity ids) pairs."""
        model, cfg = self.model, self.cfg
        epoch = self.epoch + 1
        model.train()
        order = np.random.default_rng([cfg.seed, epoch, 0]).permutation(len(instances))
        sums = dict(ce=0.0, path=0.0, se=0.0, terminal=0.0, midpoint=0.0)
        n_walks = 0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start:start + cfg.batch_size]
            prefixes = [instances[i][0] for i in batch]
            s_se, scores = model.encoder([model.encoder.index(p) for p in prefixes])
            targets = [model.encoder.vocab[instances[i][1][0]] for i in batch]
            l_ce = F.binary_cross_entropy_with_logits(
                scores, F.one_hot(torch.tensor(targets), scores.shape[1]).double(), reduction="none"
            ).sum(dim=1).sum()

            with torch.no_grad():
                detached = s_se.detach()
                rollouts = []
                for row, i in enumerate(batch):
                    rng = np.random.default_rng([cfg.seed, epoch, 1, int(i)])
                    rollouts.append(self.rollout(row, detached[row], instances[i][0], instances[i][1], rng))
            l_path, l_se = self.rl_losses(s_se, rollouts)

            n = len(batch)
            loss = (l_ce + cfg.alpha * l_path + cfg.beta * l_se) / n
            if not torch.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} batch {b}: "
                    f"L_ce={l_ce.item()} L_path={l_path.item()} L_se={l_se.item()}"
                )
            self.optimizer.zero_grad()
            loss.backward()
            self.optimizer.step()

            sums["ce"] += l_ce.item()
            sums["path"] += l_path.item()
            sums["se"] += l_se.item()
            for ro in rollouts:
                for ep in (ro.long, ro.short):
                    if ep is not None:
                        sums["midpoint"] += ep.steps[0].reward
                        sums["terminal"] += ep.steps[-1].reward
                        n_walks += 1

        n = max(len(instances), 1)
        self.epoch = epoch
        metrics = EpochMetrics(
            epoch=epoch,
            L_ce=sums["ce"] / n,
            L_path=sums["path"] / n,
            L_se=sums["se"] / n,
            mean_terminal_reward=sums["terminal"] / max(n_walks, 1),
            mean_midpoint_reward=sums["midpoint"] / max(n_walks, 1),
        )
        self.history.append(metrics)
        logger.info(
            "epoch %d  L_ce %.4f  L_path %.4f  L_se %.4f  terminal %.4f  midpoint %.4f",
            epoch, metrics.L_ce, metrics.L_path, metrics.L_se, metrics.mean_terminal_reward, metrics.mean_midpoint_reward,
        )
        return metrics

    def fit(self, instances, epochs: int | None = None, metrics_path=None) -> list[EpochMetrics]:
        for _ in range(self.cfg.epochs if epochs is None else epochs):
            self.train_epoch(instances)
        if metrics_path is not None:
            write_metrics(metrics_path, self.history)
        return self.history


def write_metrics(path, history: list[EpochMetrics]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, lineterminator="\n")
        writer.writeheader()
        for m in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in m.row().items()})


def encode_instances(model: PathReasoner, instances) -> list[tuple[list[int], list[int]]]:
    """Map TrainInstances (external ids) to entity ids, dropping ones with unknown items."""
    out = []
    registry = model.graph.registry
    for inst in instances:
        try:
            prefix = [registry.item(i) for i in inst.prefix]
            t_list = [registry.item(i) for i in inst.t_list]
        except KeyError:
            continue
        if t_list:
            out.append((prefix, t_list))
    return out
