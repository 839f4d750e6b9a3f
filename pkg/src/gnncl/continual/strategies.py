"""Continual-learning strategies sharing one full-batch training loop.

Every strategy trains task k with Adam on a per-epoch objective and may
hook gradient post-processing (GEM) and end-of-task state updates
(importance records, Fisher/omega estimates, teachers, memory).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..engine import (
    Adam,
    GradientMap,
    Tape,
    TapeMode,
    TapeModeError,
    Tensor,
    add,
    backward,
    binary_cross_entropy,
    cross_entropy,
    div,
    gather_rows,
    log_softmax,
    matmul,
    mul,
    neg,
    reshape,
    sq_l2_norm,
    sum_,
)
from ..nn import (
    ForwardContext,
    GnnModel,
    class_columns,
    head_logits,
    model_forward,
)
from ..graphs import TaskSequence, TaskType
from .gem import gem_project
from .importance import (
    ArraySet,
    ImportanceRecord,
    capacity_regularizer,
    combine_importance,
    compute_loss_importance,
    compute_topo_importance,
    twp_penalty,
)

STRATEGY_KINDS = ("FINETUNE", "JOINT", "EWC", "MAS", "LWF", "GEM", "TWP")


class ConfigError(ValueError):
    """Invalid or inconsistent strategy/run configuration."""


@dataclass(frozen=True)
class StrategyConfig:
    kind: str = "FINETUNE"
    lambda_l: float = 10000.0
    lambda_t: float = 100.0
    beta: float = 1e-6
    lambda_reg: float = 10000.0
    distill_temperature: float = 2.0
    memory_per_task: int = 10
    epochs: int = 200
    lr: float = 0.005
    capacity_mode: str = "exact"
    early_stop_patience: int = 0

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ConfigError(f"unknown strategy '{self.kind}'")
        for name in ("lambda_l", "lambda_t", "beta", "lambda_reg"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.capacity_mode not in ("exact", "frozen"):
            raise ConfigError(
                f"capacity_mode must be exact|frozen, got "
                f"'{self.capacity_mode}'")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.distill_temperature <= 0:
            raise ConfigError("distill_temperature must be positive")
        if self.memory_per_task < 1:
            raise ConfigError("memory_per_task must be >= 1")


class TaskView:
    """Per-sequence forward plumbing: contexts and class-local labels."""

    def __init__(self, seq: TaskSequence):
        self.seq = seq
        self.node = seq.task_type is TaskType.NODE
        self._train_ctx: Dict[int, ForwardContext] = {}
        self._test_ctx: Dict[int, ForwardContext] = {}
        if self.node:
            self.ctx = ForwardContext.for_graph(seq.graph)
            self.local_labels: List[np.ndarray] = []
            for t in seq.tasks:
                loc = np.full(seq.graph.num_nodes, -1, dtype=np.int64)
                for j, c in enumerate(t.classes):
                    loc[seq.graph.labels == c] = j
                self.local_labels.append(loc)

    def train_ctx(self, k: int) -> ForwardContext:
        if self.node:
            return self.ctx
        if k not in self._train_ctx:
            idx = self.seq.tasks[k].train_graphs
            self._train_ctx[k] = ForwardContext.for_pool(
                [self.seq.graphs[i] for i in idx])
        return self._train_ctx[k]

    def test_ctx(self, k: int) -> ForwardContext:
        if self.node:
            return self.ctx
        if k not in self._test_ctx:
            idx = self.seq.tasks[k].test_graphs
            self._test_ctx[k] = ForwardContext.for_pool(
                [self.seq.graphs[i] for i in idx])
        return self._test_ctx[k]

    def train_loss(self, model: GnnModel, k: int,
                   want_attention: bool = False):
        """Full-batch training loss for task k; returns (loss, snapshot)."""
        task = self.seq.tasks[k]
        ctx = self.train_ctx(k)
        logits, snap = model_forward(model, ctx, task, want_attention)
        if self.node:
            loss = cross_entropy(logits, self.local_labels[k],
                                 task.train_mask)
        else:
            flat = reshape(logits, (logits.shape[0],))
            loss = binary_cross_entropy(flat, ctx.graph_labels)
        return loss, snap


@dataclass
class EpisodicMemory:
    """Stored examples of one finished task: indices plus label copies.

    Node tasks keep node indices into the shared graph (the structure
    stays visible; only these labels survive the task). Graph tasks
    keep a prebuilt context over the remembered graphs.
    """

    task_index: int
    indices: np.ndarray
    labels: np.ndarray
    ctx: Optional[ForwardContext] = None


@dataclass
class FrozenTeacher:
    """Immutable model copy distilled from, never trained."""

    model: GnnModel
    tasks_seen: int


class Strategy:
    kind = "FINETUNE"

    def __init__(self, cfg: StrategyConfig, model: GnnModel,
                 view: TaskView, seed: int):
        self.cfg = cfg
        self.model = model
        self.view = view
        self.seed = seed
        self.params = model.parameters()

    # hooks -----------------------------------------------------------

    def tape_mode(self, k: int) -> TapeMode:
        return TapeMode.FIRST_ORDER

    def before_task(self, k: int) -> None:
        pass

    def objective(self, k: int) -> Tensor:
        loss, _ = self.view.train_loss(self.model, k)
        return loss

    def transform_grads(self, k: int, grads: GradientMap) -> GradientMap:
        return grads

    def after_task(self, k: int) -> None:
        pass

    # loop ------------------------------------------------------------

    def train_task(self, k: int) -> List[float]:
        self.before_task(k)
        opt = Adam(self.params, lr=self.cfg.lr)
        curve: List[float] = []
        best = np.inf
        wait = 0
        for _ in range(self.cfg.epochs):
            with Tape(self.tape_mode(k)):
                loss = self.objective(k)
                grads = backward(loss, self.params)
            grads = self.transform_grads(k, grads)
            opt.step(grads)
            val = loss.item()
            curve.append(val)
            if self.cfg.early_stop_patience > 0:
                if val < best - 1e-9:
                    best = val
                    wait = 0
                else:
                    wait += 1
                    if wait >= self.cfg.early_stop_patience:
                        break
        self.after_task(k)
        return curve


class FinetuneStrategy(Strategy):
    kind = "FINETUNE"


class JointStrategy(Strategy):
    """Trains on the union of all tasks seen so far (multi-task upper
    bound; warm-started, which converges tighter than re-initializing
    within the same epoch budget)."""

    kind = "JOINT"

    def objective(self, k: int) -> Tensor:
        total: Optional[Tensor] = None
        for t in range(k + 1):
            loss, _ = self.view.train_loss(self.model, t)
            total = loss if total is None else add(total, loss)
        return total


class _QuadraticAnchorStrategy(Strategy):
    """Shared form of EWC and MAS: per-task importance-weighted
    quadratic pull toward each finished task's parameters."""

    def __init__(self, cfg, model, view, seed):
        super().__init__(cfg, model, view, seed)
        self.records: List[ImportanceRecord] = []

    def objective(self, k: int) -> Tensor:
        loss, _ = self.view.train_loss(self.model, k)
        if not self.records:
            return loss
        return add(loss, mul(Tensor(self.cfg.lambda_reg),
                             twp_penalty(self.model, self.records)))

    def _per_example_scalars(self, k: int):
        """Yield (tape-live scalar, example count) pairs for task k."""
        task = self.view.seq.tasks[k]
        ctx = self.view.train_ctx(k)
        if self.view.node:
            idx = task.train_nodes()
            logits, _ = model_forward(self.model, ctx, task)
            labels = self.view.local_labels[k]
            for i in idx:
                yield logits, int(i), labels
        else:
            logits, _ = model_forward(self.model, ctx, task)
            for i in range(ctx.num_graphs):
                yield logits, i, ctx.graph_labels

    def _accumulate(self, k: int, transform) -> ArraySet:
        named = self.model.named_parameters()
        acc = {name: np.zeros(p.shape) for name, p in named}
        count = 0
        with Tape():
            for logits, i, labels in self._per_example_scalars(k):
                scalar = self._example_scalar(logits, i, labels)
                grads = backward(scalar, self.params)
                for name, p in named:
                    acc[name] += transform(grads[p].data)
                count += 1
        if count == 0:
            raise ConfigError(f"task {k} has no training examples")
        return {name: a / count for name, a in acc.items()}

    def _example_scalar(self, logits, i, labels):
        raise NotImplementedError


class EwcStrategy(_QuadraticAnchorStrategy):
    """Diagonal Fisher: mean squared per-example loss gradient."""

    kind = "EWC"

    def _example_scalar(self, logits, i, labels):
        if self.view.node:
            return cross_entropy(logits, labels, np.asarray([i]))
        flat = reshape(gather_rows(logits, np.asarray([i])), (1,))
        return binary_cross_entropy(flat, labels[i:i + 1])

    def after_task(self, k: int) -> None:
        fisher = self._accumulate(k, np.square)
        snapshot = {name: p.data.copy()
                    for name, p in self.model.named_parameters()}
        self.records.append(ImportanceRecord(
            task_index=k, snapshot=snapshot, importance=fisher))


class MasStrategy(_QuadraticAnchorStrategy):
    """Mean absolute gradient of each example's squared output norm."""

    kind = "MAS"

    def _example_scalar(self, logits, i, labels):
        return sq_l2_norm(gather_rows(logits, np.asarray([i])))

    def after_task(self, k: int) -> None:
        omega = self._accumulate(k, np.abs)
        snapshot = {name: p.data.copy()
                    for name, p in self.model.named_parameters()}
        self.records.append(ImportanceRecord(
            task_index=k, snapshot=snapshot, importance=omega))


class LwfStrategy(Strategy):
    """Adds temperature-softened distillation toward the frozen teacher
    on every earlier task's head columns, over current training data."""

    kind = "LWF"

    def __init__(self, cfg, model, view, seed):
        super().__init__(cfg, model, view, seed)
        self.teacher: Optional[FrozenTeacher] = None
        self._soft_targets: List[np.ndarray] = []

    def before_task(self, k: int) -> None:
        """Teacher outputs are fixed for the whole task; compute their
        softened targets once, off any tape."""
        self._soft_targets = []
        if self.teacher is None:
            return
        tau = self.cfg.distill_temperature
        ctx = self.view.train_ctx(k)
        rows = (self.view.seq.tasks[k].train_nodes()
                if self.view.node else None)
        emb, _ = self.teacher.model.forward_embeddings(ctx)
        full = head_logits(self.teacher.model, ctx, emb).data
        for t in range(self.teacher.tasks_seen):
            cols = list(self.view.seq.tasks[t].classes)
            if self.view.node:
                tl = full[np.ix_(rows, cols)] / tau
                tl -= tl.max(axis=1, keepdims=True)
                probs = np.exp(tl)
                probs /= probs.sum(axis=1, keepdims=True)
            else:
                z = full[:, cols[0]] / tau
                probs = np.where(
                    z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
            self._soft_targets.append(probs)

    def objective(self, k: int) -> Tensor:
        ctx = self.view.train_ctx(k)
        task_now = self.view.seq.tasks[k]
        emb, _ = self.model.forward_embeddings(ctx)
        full = head_logits(self.model, ctx, emb)
        now_logits = matmul(full, class_columns(self.model,
                                                task_now.classes))
        if self.view.node:
            loss = cross_entropy(now_logits, self.view.local_labels[k],
                                 task_now.train_mask)
        else:
            loss = binary_cross_entropy(
                reshape(now_logits, (now_logits.shape[0],)),
                ctx.graph_labels)
        if self.teacher is None:
            return loss
        tau = self.cfg.distill_temperature
        rows = task_now.train_nodes() if self.view.node else None
        total = loss
        for t in range(self.teacher.tasks_seen):
            old = self.view.seq.tasks[t]
            s_logits = matmul(full, class_columns(self.model, old.classes))
            probs = self._soft_targets[t]
            if self.view.node:
                s = mul(gather_rows(s_logits, rows), Tensor(1.0 / tau))
                ce = neg(div(sum_(mul(Tensor(probs), log_softmax(s))),
                             Tensor(float(len(rows)))))
            else:
                s = mul(reshape(s_logits, (s_logits.shape[0],)),
                        Tensor(1.0 / tau))
                ce = binary_cross_entropy(s, probs)
            total = add(total, ce)
        return total

    def after_task(self, k: int) -> None:
        self.teacher = FrozenTeacher(model=self.model.clone(),
                                     tasks_seen=k + 1)


class GemStrategy(Strategy):
    """Projects each step's gradient to not conflict with gradients on
    remembered examples of earlier tasks."""

    kind = "GEM"

    def __init__(self, cfg, model, view, seed):
        super().__init__(cfg, model, view, seed)
        self.memory: List[EpisodicMemory] = []

    def _flatten(self, grads: GradientMap) -> np.ndarray:
        return np.concatenate([grads[p].data.ravel() for p in self.params])

    def _unflatten(self, flat: np.ndarray) -> GradientMap:
        out: GradientMap = {}
        offset = 0
        for p in self.params:
            n = p.size
            out[p] = Tensor(flat[offset:offset + n].reshape(p.shape))
            offset += n
        return out

    def _memory_grad(self, mem: EpisodicMemory) -> np.ndarray:
        task = self.view.seq.tasks[mem.task_index]
        with Tape():
            if self.view.node:
                logits, _ = model_forward(self.model, self.view.ctx, task)
                sel = gather_rows(logits, mem.indices)
                loss = cross_entropy(sel, mem.labels)
            else:
                logits, _ = model_forward(self.model, mem.ctx, task)
                flat = reshape(logits, (logits.shape[0],))
                loss = binary_cross_entropy(flat, mem.labels)
            grads = backward(loss, self.params)
        return self._flatten(grads)

    def transform_grads(self, k: int, grads: GradientMap) -> GradientMap:
        if not self.memory:
            return grads
        g = self._flatten(grads)
        mem = np.stack([self._memory_grad(m) for m in self.memory])
        if np.all(mem @ g >= 0.0):
            return grads
        return self._unflatten(gem_project(g, mem))

    def after_task(self, k: int) -> None:
        task = self.view.seq.tasks[k]
        rng = np.random.default_rng([self.seed, 200 + k])
        if self.view.node:
            nodes = task.train_nodes()
            take = min(self.cfg.memory_per_task, len(nodes))
            idx = np.sort(rng.choice(nodes, size=take, replace=False))
            labels = self.view.local_labels[k][idx].copy()
            self.memory.append(EpisodicMemory(
                task_index=k, indices=idx, labels=labels))
        else:
            pool = np.asarray(task.train_graphs)
            take = min(self.cfg.memory_per_task, len(pool))
            idx = np.sort(rng.choice(pool, size=take, replace=False))
            ctx = ForwardContext.for_pool(
                [self.view.seq.graphs[i] for i in idx])
            self.memory.append(EpisodicMemory(
                task_index=k, indices=idx, labels=ctx.graph_labels.copy(),
                ctx=ctx))


class TwpStrategy(Strategy):
    """Anchors parameters by combined loss/topology importance and
    optionally penalizes the current task's importance mass."""

    kind = "TWP"

    def __init__(self, cfg, model, view, seed):
        super().__init__(cfg, model, view, seed)
        self.records: List[ImportanceRecord] = []

    def tape_mode(self, k: int) -> TapeMode:
        if self.cfg.beta > 0 and self.cfg.capacity_mode == "exact":
            return TapeMode.HIGHER_ORDER
        return TapeMode.FIRST_ORDER

    def _frozen_capacity_value(self, k: int) -> float:
        i_loss = compute_loss_importance(
            self.model, self.view.train_ctx(k), self.view.seq.tasks[k],
            self.view.local_labels[k] if self.view.node else None)
        i_ts = compute_topo_importance(
            self.model, self.view.train_ctx(k), self.view.seq.tasks[k])
        total = 0.0
        for name in i_loss:
            total += (self.cfg.lambda_l * i_loss[name]
                      + self.cfg.lambda_t * i_ts[name]).sum()
        return self.cfg.beta * float(total)

    def objective(self, k: int) -> Tensor:
        try:
            loss, _ = self.view.train_loss(self.model, k)
            total = add(loss, twp_penalty(self.model, self.records))
            if self.cfg.beta > 0:
                if self.cfg.capacity_mode == "exact":
                    cap = capacity_regularizer(
                        self.model, self.view.train_ctx(k),
                        self.view.seq.tasks[k],
                        self.view.local_labels[k] if self.view.node
                        else None,
                        self.cfg.lambda_l, self.cfg.lambda_t,
                        self.cfg.beta)
                else:
                    cap = Tensor(np.asarray(
                        self._frozen_capacity_value(k)))
                total = add(total, cap)
        except TapeModeError as e:
            raise ConfigError(
                "the capacity term cannot be optimized exactly for this "
                "loss; set beta=0 or capacity_mode='frozen'") from e
        return total

    def after_task(self, k: int) -> None:
        ctx = self.view.train_ctx(k)
        task = self.view.seq.tasks[k]
        labels = self.view.local_labels[k] if self.view.node else None
        i_loss = compute_loss_importance(self.model, ctx, task, labels)
        i_ts = compute_topo_importance(self.model, ctx, task)
        self.records.append(combine_importance(
            self.model, i_loss, i_ts, self.cfg.lambda_l,
            self.cfg.lambda_t, k))


_STRATEGIES = {
    "FINETUNE": FinetuneStrategy,
    "JOINT": JointStrategy,
    "EWC": EwcStrategy,
    "MAS": MasStrategy,
    "LWF": LwfStrategy,
    "GEM": GemStrategy,
    "TWP": TwpStrategy,
}


def make_strategy(cfg: StrategyConfig, model: GnnModel, view: TaskView,
                  seed: int) -> Strategy:
    return _STRATEGIES[cfg.kind](cfg, model, view, seed)
