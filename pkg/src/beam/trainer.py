"""Training, evaluation, subject-level splitting and the ablation grid."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import diffcore as dc
from .augment import AugmentConfig, balance
from .checkpoint import load_checkpoint, save_checkpoint
from .contrast import ContrastBatch, build_positive_map, info_nce, l2_normalize_batch
from .eeg_io import Label, View
from .encoder import EncoderConfig, encode_batch, init_params
from .fusion import fuse, fusion_loss
from .preprocess import Sample

log = logging.getLogger(__name__)

VIEWS = ("em", "tom", "tom+em")
METRICS = ("accuracy", "specificity", "sensitivity")


class TrainingDiverged(RuntimeError):
    pass


class LeakageError(AssertionError):
    pass


@dataclass(frozen=True)
class Arm:
    views: str = "tom+em"
    contrast: bool = True
    fusion: bool = True

    def __post_init__(self):
        if self.views not in VIEWS:
            raise ValueError(f"views must be one of {VIEWS}, got {self.views!r}")
        if self.fusion and self.views != "tom+em":
            raise ValueError("fusion needs both views (tom+em)")

    @property
    def name(self) -> str:
        return f"{self.views}|fusion={'on' if self.fusion else 'off'}|contrast={'on' if self.contrast else 'off'}"

    @property
    def uses_tom(self) -> bool:
        return self.views in ("tom", "tom+em")

    @property
    def uses_em(self) -> bool:
        return self.views in ("em", "tom+em")


@dataclass(frozen=True)
class TrainConfig:
    arm: Arm = Arm()
    encoder: EncoderConfig = EncoderConfig()
    lambda_fusion: float = 1.0
    lambda_contrast: float = 1.0
    tau: float = 0.1
    batch_size: int = 16
    epochs: int = 30
    learning_rate: float = 1e-3
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    split_fractions: tuple[float, float, float] = (0.7, 0.2, 0.1)
    shared_encoder: bool = True
    fusion_projection: bool = False
    fusion_eps: float = 1e-8
    exclude_self: bool = False
    augment: bool = True
    augment_std: float = 0.001
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.lambda_fusion < 0 or self.lambda_contrast < 0:
            raise ValueError("loss weights must be non-negative")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or min(self.split_fractions) < 0:
            raise ValueError(f"split fractions must be non-negative and sum to 1, got {self.split_fractions}")
        if self.batch_size < 4:
            raise ValueError("batch_size must be >= 4 (two per class for contrastive batches)")
        if self.epochs < 1 or not self.seeds:
            raise ValueError("need at least one epoch and one seed")
        if not self.tau > 0:
            raise ValueError("tau must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        d = dict(d)
        d["arm"] = Arm(**d["arm"])
        d["encoder"] = EncoderConfig.from_dict(d["encoder"])
        d["seeds"] = tuple(d["seeds"])
        d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


# -- metrics -------------------------------------------------------------------------

@dataclass(frozen=True)
class Confusion:
    tp: int
    fn: int
    tn: int
    fp: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if self.tn + self.fp else 0.0

    def metrics(self) -> dict[str, float]:
        return {m: getattr(self, m) for m in METRICS}


def confusion(predicted, labels) -> Confusion:
    """Confusion counts with High (1) as the positive class."""
    p = np.asarray(predicted).astype(int)
    y = np.asarray(labels).astype(int)
    if p.size == 0:
        raise ValueError("cannot evaluate an empty test set")
    if p.shape != y.shape:
        raise ValueError("predictions and labels differ in length")
    for cls, metric in ((1, "sensitivity"), (0, "specificity")):
        if not np.any(y == cls):
            log.warning("no %s examples in the evaluated set; %s reported as 0", Label(cls).name, metric)
    return Confusion(tp=int(np.sum((p == 1) & (y == 1))), fn=int(np.sum((p == 0) & (y == 1))),
                     tn=int(np.sum((p == 0) & (y == 0))), fp=int(np.sum((p == 1) & (y == 0))))


def subject_vote(predicted, labels, subjects) -> Confusion:
    """Per-subject majority vote (ties go to High)."""
    predicted, labels, subjects = map(np.asarray, (predicted, labels, subjects))
    pv, lv = [], []
    for sid in sorted(set(subjects.tolist())):
        m = subjects == sid
        pv.append(int(predicted[m].mean() >= 0.5))
        lv.append(int(labels[m][0]))
    return confusion(pv, lv)


# -- splits and pairing --------------------------------------------------------

def largest_remainder(n: int, fractions: Sequence[float]) -> list[int]:
    quotas = [n * f for f in fractions]
    counts = [int(math.floor(q)) for q in quotas]
    order = sorted(range(len(quotas)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    return counts


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, int, int]:
    """Largest-remainder sizes with at least one validation and one test subject."""
    if n < 3:
        raise ValueError(f"need at least 3 subjects for a train/val/test split, got {n}")
    sizes = largest_remainder(n, fractions)
    for k in (2, 1):
        if sizes[k] == 0:
            donor = max(range(3), key=lambda i: (sizes[i], -i))
            sizes[donor] -= 1
            sizes[k] += 1
    return sizes[0], sizes[1], sizes[2]


def subject_split(subjects: Sequence[str], fractions: Sequence[float], seed: int,
                  labels: Mapping[str, int] | None = None) -> tuple[list[str], list[str], list[str]]:
    """Disjoint (train, val, test) subject lists, stratified by label when given.

    Subjects are shuffled within class and interleaved so every prefix keeps
    the class ratio; test takes the first slice, validation the next.
    """
    subjects = sorted(subjects)
    n_train, n_val, n_test = split_sizes(len(subjects), fractions)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B11]))
    groups: dict[int, list[str]] = {}
    for s in subjects:
        groups.setdefault(int(labels[s]) if labels else 0, []).append(s)
    keys = sorted(groups)
    pools = {k: [groups[k][i] for i in rng.permutation(len(groups[k]))] for k in keys}
    priority = {k: r for r, k in enumerate(rng.permutation(keys).tolist())}
    taken = {k: 0 for k in keys}
    order = []
    for _ in range(len(subjects)):
        open_keys = [k for k in keys if taken[k] < len(pools[k])]
        k = min(open_keys, key=lambda c: ((taken[c] + 0.5) / len(pools[c]), priority[c]))
        order.append(pools[k][taken[k]])
        taken[k] += 1
    test = sorted(order[:n_test])
    val = sorted(order[n_test:n_test + n_val])
    train = sorted(order[n_test + n_val:])
    return train, val, test


def check_no_leakage(train: Sequence[str], val: Sequence[str], test: Sequence[str]) -> None:
    a, b, c = set(train), set(val), set(test)
    if a & b or a & c or b & c:
        raise LeakageError(f"subjects shared across splits: {sorted((a & b) | (a & c) | (b & c))}")


def pair_views(tom: Sequence[Sample], em: Sequence[Sample]) -> list[tuple[Sample, Sample]]:
    """Pair the i-th ToM window with EM window i mod |EM| of the same subject."""
    if not tom or not em:
        raise ValueError("pairing needs at least one ToM and one EM sample")
    subjects = {s.subject_id for s in tom} | {s.subject_id for s in em}
    if len(subjects) != 1:
        raise ValueError(f"cannot pair across subjects: {sorted(subjects)}")
    return [(t, em[i % len(em)]) for i, t in enumerate(tom)]


def subject_labels(data: Mapping[str, Sequence[Sample]]) -> dict[str, int]:
    out = {}
    for sid, samples in data.items():
        labs = {int(s.label) for s in samples}
        if len(labs) != 1:
            raise ValueError(f"subject {sid} has mixed labels {labs}")
        out[sid] = labs.pop()
    return out


# -- example assembly ----------------------------------------------------------

@dataclass
class Examples:
    tom: np.ndarray | None
    em: np.ndarray | None
    labels: np.ndarray
    subjects: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def take(self, idx) -> "Examples":
        return Examples(None if self.tom is None else self.tom[idx], None if self.em is None else self.em[idx],
                        self.labels[idx], self.subjects[idx])


def build_groups(data: Mapping[str, Sequence[Sample]], subjects: Sequence[str], arm: Arm,
                 drop_augmented: bool = False) -> list[tuple[Sample, ...]]:
    """Training units for ``arm``: single windows, or ToM/EM pairs per subject.

    ``drop_augmented`` removes samples produced by augmentation, which must
    never be scored.
    """
    groups: list[tuple[Sample, ...]] = []
    for sid in subjects:
        kept = [s for s in data[sid] if not (drop_augmented and "augmented" in s.meta)]
        tom = [s for s in kept if s.view is View.TOM]
        em = [s for s in kept if s.view is View.EM]
        if arm.views == "tom+em":
            groups.extend(pair_views(tom, em))
        else:
            groups.extend((s,) for s in (tom if arm.views == "tom" else em))
    return groups


def stack_groups(groups: Sequence[tuple[Sample, ...]], arm: Arm) -> Examples:
    if not groups:
        raise ValueError("no examples")
    first = [g[0] for g in groups]
    tom = em = None
    if arm.views == "tom+em":
        tom = np.stack([g[0].data for g in groups])
        em = np.stack([g[1].data for g in groups])
    elif arm.views == "tom":
        tom = np.stack([s.data for s in first])
    else:
        em = np.stack([s.data for s in first])
    return Examples(tom, em, np.array([int(s.label) for s in first]), np.array([s.subject_id for s in first]))


def stratified_batches(labels, batch_size: int, rng: np.random.Generator, min_per_class: int = 2) -> list[np.ndarray]:
    """Shuffled batches with every class spread evenly; each batch holds at
    least ``min_per_class`` members of every class present."""
    labels = np.asarray(labels)
    pools = [rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)]
    n_batches = max(1, len(labels) // batch_size)
    if min_per_class:
        fits = min(len(p) // min_per_class for p in pools)
        if fits == 0:
            raise ValueError(f"a class has fewer than {min_per_class} training examples")
        n_batches = min(n_batches, fits)
    chunks = [np.array_split(p, n_batches) for p in pools]
    batches = [rng.permutation(np.concatenate([c[i] for c in chunks])) for i in range(n_batches)]
    return [batches[i] for i in rng.permutation(n_batches)]


# -- model -----------------------------------------------------------------------

@dataclass
class Forward:
    logits: dc.Tensor
    rep: dc.Tensor
    z_tom: dc.Tensor | None = None
    z_em: dc.Tensor | None = None


def _glorot(rng, shape, dtype=np.float32) -> dc.Tensor:
    bound = math.sqrt(6.0 / sum(shape))
    return dc.Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


class Model:
    """Encoder(s) + optional fusion projection + linear head over the arm's representation."""

    def __init__(self, cfg: TrainConfig, params: dict[str, dc.Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: TrainConfig, rng: np.random.Generator, dtype=np.float32) -> "Model":
        arm, enc = cfg.arm, cfg.encoder
        params: dict[str, dc.Tensor] = {}
        if cfg.shared_encoder:
            params.update(init_params(enc, rng, "encoder.", dtype))
        else:
            if arm.uses_tom:
                params.update(init_params(enc, rng, "tom.encoder.", dtype))
            if arm.uses_em:
                params.update(init_params(enc, rng, "em.encoder.", dtype))
        d = enc.d_model
        if arm.fusion and cfg.fusion_projection:
            params["fusion.com"] = _glorot(rng, (d, d // 2), dtype)
            params["fusion.sep"] = _glorot(rng, (d, d // 2), dtype)
        params["head.weight"] = _glorot(rng, (cls.rep_dim(cfg), 2), dtype)
        params["head.bias"] = dc.Tensor(np.zeros(2, dtype=dtype), requires_grad=True)
        return cls(cfg, params)

    @staticmethod
    def rep_dim(cfg: TrainConfig) -> int:
        d = cfg.encoder.d_model
        if cfg.arm.views != "tom+em":
            return d
        return 3 * d // 2 if cfg.arm.fusion else 2 * d

    def _prefix(self, view: str) -> str:
        return "encoder." if self.cfg.shared_encoder else f"{view}.encoder."

    @property
    def projection(self):
        if "fusion.com" in self.params:
            return {"com": self.params["fusion.com"], "sep": self.params["fusion.sep"]}
        return None

    def forward(self, ex: Examples) -> Forward:
        cfg, arm = self.cfg, self.cfg.arm
        z_tom = z_em = None
        if arm.views == "tom+em" and cfg.shared_encoder:
            b = len(ex)
            z = encode_batch(np.concatenate([ex.tom, ex.em]), self.params, cfg.encoder, "encoder.")
            z_tom, z_em = z[:b], z[b:]
        else:
            if arm.uses_tom:
                z_tom = encode_batch(ex.tom, self.params, cfg.encoder, self._prefix("tom"))
            if arm.uses_em:
                z_em = encode_batch(ex.em, self.params, cfg.encoder, self._prefix("em"))
        if arm.views == "tom":
            rep = z_tom
        elif arm.views == "em":
            rep = z_em
        elif arm.fusion:
            rep = fuse(z_tom, z_em, self.projection)
        else:
            rep = dc.concat([z_tom, z_em], axis=-1)
        logits = rep @ self.params["head.weight"] + self.params["head.bias"]
        return Forward(logits, rep, z_tom, z_em)

    def predict(self, ex: Examples) -> np.ndarray:
        out = []
        with dc.no_grad():
            for start in range(0, len(ex), self.cfg.eval_batch_size):
                idx = np.arange(start, min(start + self.cfg.eval_batch_size, len(ex)))
                out.append(np.argmax(self.forward(ex.take(idx)).logits.values, axis=-1))
        return np.concatenate(out)

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.values.copy() for k, v in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for k, v in state.items():
            self.params[k].values[...] = v


# -- losses ---------------------------------------------------------------------

def cross_entropy(logits: dc.Tensor, labels) -> dc.Tensor:
    labels = np.asarray(labels).astype(int)
    onehot = np.zeros(logits.shape, dtype=logits.dtype)
    onehot[np.arange(len(labels)), labels] = 1
    return -dc.mean(dc.sum_(dc.log_softmax(logits, axis=-1) * onehot, axis=-1))


def total_loss(logits: dc.Tensor, labels, z_tom, z_em, fused_batch: dc.Tensor, cfg: TrainConfig,
               positive_index=None, projection=None) -> tuple[dc.Tensor, dict[str, float]]:
    """Cross-entropy plus the weighted fusion and contrastive terms the arm enables.

    ``fused_batch`` is whatever representation feeds the head; the
    contrastive term is taken over it.  Disabled terms are not added at all.
    """
    arm = cfg.arm
    loss = cross_entropy(logits, labels)
    parts = {"ce": loss.item()}
    if arm.fusion and cfg.lambda_fusion > 0:
        lf = fusion_loss(z_tom, z_em, cfg.fusion_eps, projection)
        parts["fusion"] = lf.item()
        loss = loss + dc.scale(lf, cfg.lambda_fusion)
    if arm.contrast and cfg.lambda_contrast > 0:
        if positive_index is None:
            raise ValueError("contrastive term needs a positive map")
        batch = ContrastBatch(l2_normalize_batch(fused_batch), labels, positive_index)
        lc = info_nce(batch, cfg.tau, cfg.exclude_self)
        parts["contrast"] = lc.item()
        loss = loss + dc.scale(lc, cfg.lambda_contrast)
    parts["total"] = loss.item()
    return loss, parts


class Adam:
    def __init__(self, params: Mapping[str, dc.Tensor], lr: float = 1e-3, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(params)
        self.lr, self.b1, self.b2, self.eps = lr, betas[0], betas[1], eps
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in self.params.items()}

    def step(self, grads: Mapping[dc.Tensor, np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, p in self.params.items():
            g = grads[p]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            step = self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.values -= step.astype(p.values.dtype)


# -- reports ----------------------------------------------------------------------

@dataclass
class SeedResult:
    seed: int
    sample: Confusion
    subject: Confusion
    split: dict[str, list[str]] = field(default_factory=dict)
    best_epoch: int = -1
    val_accuracy: float = float("nan")
    initial_loss: float = float("nan")
    final_loss: float = float("nan")

    def records(self, arm: str) -> list[dict]:
        out = []
        for level, conf in (("sample", self.sample), ("subject", self.subject)):
            rec = {"record": "seed", "arm": arm, "seed": self.seed, "level": level}
            rec.update(conf.metrics())
            rec.update(asdict(conf))
            if level == "sample":
                rec.update({"best_epoch": self.best_epoch, "val_accuracy": self.val_accuracy,
                            "initial_loss": self.initial_loss, "final_loss": self.final_loss,
                            "test_subjects": self.split.get("test", []), "leakage_free": True})
            out.append(rec)
        return out


@dataclass
class RunReport:
    arm: str
    seeds: list[SeedResult]

    def aggregate(self, level: str = "sample") -> dict[str, tuple[float, float]]:
        out = {}
        for m in METRICS:
            vals = np.array([getattr(getattr(r, level), m) for r in self.seeds], dtype=np.float64)
            out[m] = (float(vals.mean()), float(vals.std()))
        return out

    def lines(self) -> list[str]:
        recs = [rec for r in self.seeds for rec in r.records(self.arm)]
        for level in ("sample", "subject"):
            rec = {"record": "aggregate", "arm": self.arm, "level": level, "n_seeds": len(self.seeds)}
            for m, (mu, sd) in self.aggregate(level).items():
                rec[f"{m}_mean"] = mu
                rec[f"{m}_std"] = sd
            recs.append(rec)
        return [json.dumps(r, sort_keys=True) for r in recs]

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def formatted(self, level: str = "sample") -> dict[str, str]:
        return {m: f"{mu:.3f}±{sd:.3f}" for m, (mu, sd) in self.aggregate(level).items()}


# -- training ----------------------------------------------------------------------

@dataclass
class TrainedSeed:
    model: Model
    result: SeedResult
    history: list[float]
    meta: dict


def _streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("init", "batch", "positive")
    children = np.random.SeedSequence([int(seed), 0xBEA3]).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def train_seed(data: Mapping[str, Sequence[Sample]], cfg: TrainConfig, seed: int) -> TrainedSeed:
    arm = cfg.arm
    labels = subject_labels(data)
    train_ids, val_ids, test_ids = subject_split(list(data), cfg.split_fractions, seed, labels)
    check_no_leakage(train_ids, val_ids, test_ids)
    rngs = _streams(seed)

    groups = build_groups(data, train_ids, arm)
    if cfg.augment:
        extra = balance(groups, AugmentConfig(noise_std=cfg.augment_std, rng_seed=seed))
        if extra:
            log.info("seed %d: %d augmented minority examples", seed, len(extra))
        groups = groups + extra
    train_ex = stack_groups(groups, arm)
    val_ex = stack_groups(build_groups(data, val_ids, arm, drop_augmented=True), arm)
    test_ex = stack_groups(build_groups(data, test_ids, arm, drop_augmented=True), arm)
    for ex, ids in ((train_ex, train_ids), (val_ex, val_ids), (test_ex, test_ids)):
        if not set(ex.subjects.tolist()) <= set(ids):
            raise LeakageError("examples escaped their subject split")

    model = Model.init(cfg, rngs["init"])
    opt = Adam(model.params, cfg.learning_rate)
    best_acc, best_epoch, best_state = -1.0, -1, model.state()
    history: list[float] = []
    min_per_class = 2 if arm.contrast else 1
    for epoch in range(cfg.epochs):
        losses = []
        for idx in stratified_batches(train_ex.labels, cfg.batch_size, rngs["batch"], min_per_class):
            batch = train_ex.take(idx)
            try:
                fwd = model.forward(batch)
                pos = build_positive_map(batch.labels, rngs["positive"]) if arm.contrast else None
                loss, _ = total_loss(fwd.logits, batch.labels, fwd.z_tom, fwd.z_em, fwd.rep, cfg, pos,
                                     model.projection)
                grads = dc.backward(loss, wrt=model.params.values())
            except dc.NonFiniteError as exc:
                raise TrainingDiverged(f"{arm.name} seed {seed} epoch {epoch}: {exc}") from exc
            opt.step(grads)
            losses.append(loss.item())
        history.append(float(np.mean(losses)))
        val_acc = confusion(model.predict(val_ex), val_ex.labels).accuracy
        log.info("%s seed %d epoch %d loss %.4f val_acc %.3f", arm.name, seed, epoch, history[-1], val_acc)
        if val_acc > best_acc:
            best_acc, best_epoch, best_state = val_acc, epoch, model.state()
    model.load_state(best_state)
    pred = model.predict(test_ex)
    result = SeedResult(seed=seed, sample=confusion(pred, test_ex.labels),
                        subject=subject_vote(pred, test_ex.labels, test_ex.subjects),
                        split={"train": train_ids, "val": val_ids, "test": test_ids},
                        best_epoch=best_epoch, val_accuracy=best_acc,
                        initial_loss=history[0], final_loss=history[-1])
    c, w = (train_ex.tom if train_ex.tom is not None else train_ex.em).shape[1:]
    meta = {"train": cfg.to_dict(), "seed": seed, "n_channels": int(c), "window": int(w),
            "split": result.split, "best_epoch": best_epoch, "val_accuracy": best_acc}
    return TrainedSeed(model, result, history, meta)


def train(arm: Arm, data: Mapping[str, Sequence[Sample]], cfg: TrainConfig) -> tuple[list[TrainedSeed], RunReport]:
    cfg = dataclasses.replace(cfg, arm=arm)
    runs = [train_seed(data, cfg, seed) for seed in cfg.seeds]
    return runs, RunReport(arm.name, [r.result for r in runs])


def save_trained(run: TrainedSeed, path) -> None:
    save_checkpoint(path, run.model.state(), run.meta)


def load_model(path) -> tuple[Model, dict]:
    tensors, meta = load_checkpoint(path)
    cfg = TrainConfig.from_dict(meta["train"])
    model = Model(cfg, {k: dc.Tensor(v, requires_grad=True) for k, v in tensors.items()})
    expected = Model.init(cfg, np.random.default_rng(0))
    missing = set(expected.params) ^ set(model.params)
    if missing:
        raise ValueError(f"checkpoint parameters do not match its config: {sorted(missing)}")
    return model, meta


def evaluate(model: Model, data: Mapping[str, Sequence[Sample]], subjects: Sequence[str] | None = None,
             seed: int = -1) -> RunReport:
    """Metrics of ``model`` on the given subjects (all of ``data`` by default)."""
    subjects = sorted(subjects if subjects is not None else data)
    if not subjects:
        raise ValueError("cannot evaluate an empty test set")
    arm = model.cfg.arm
    ex = stack_groups(build_groups(data, subjects, arm, drop_augmented=True), arm)
    pred = model.predict(ex)
    res = SeedResult(seed=seed, sample=confusion(pred, ex.labels),
                     subject=subject_vote(pred, ex.labels, ex.subjects), split={"test": list(subjects)})
    return RunReport(arm.name, [res])


def majority_baseline(data: Mapping[str, Sequence[Sample]], cfg: TrainConfig) -> RunReport:
    """Predict the training split's majority class for every test window."""
    labels = subject_labels(data)
    results = []
    for seed in cfg.seeds:
        train_ids, val_ids, test_ids = subject_split(list(data), cfg.split_fractions, seed, labels)
        check_no_leakage(train_ids, val_ids, test_ids)
        train_y = stack_groups(build_groups(data, train_ids, cfg.arm), cfg.arm).labels
        test_ex = stack_groups(build_groups(data, test_ids, cfg.arm, drop_augmented=True), cfg.arm)
        majority = int(np.mean(train_y) > 0.5)
        pred = np.full(len(test_ex), majority)
        results.append(SeedResult(seed, confusion(pred, test_ex.labels),
                                  subject_vote(pred, test_ex.labels, test_ex.subjects),
                                  {"train": train_ids, "val": val_ids, "test": test_ids}))
    return RunReport("majority-baseline", results)


# -- ablation -----------------------------------------------------------------------

EMPATHY_ARMS = tuple(Arm(views, contrast, False) for views in VIEWS for contrast in (False, True))
MODULE_ARMS = tuple(Arm("tom+em", contrast, fusion) for fusion in (False, True) for contrast in (False, True))
# Row order of the module table: fusion x/contrast x, fusion ok/x, x/ok, ok/ok.
MODULE_ARMS = (MODULE_ARMS[0], MODULE_ARMS[2], MODULE_ARMS[1], MODULE_ARMS[3])


@dataclass
class AblationRow:
    table: str
    arm: Arm
    report: RunReport | None
    error: str | None = None


def ablate(data: Mapping[str, Sequence[Sample]], cfg: TrainConfig) -> tuple[list[AblationRow], RunReport]:
    """Empathy-component rows (views x contrast) then module rows (fusion x contrast).

    Arms shared between the two tables are trained once.  A failing arm is
    recorded with its error and the remaining arms still run.
    """
    cache: dict[Arm, tuple[RunReport | None, str | None]] = {}
    rows = []
    for table, arms in (("empathy_components", EMPATHY_ARMS), ("network_modules", MODULE_ARMS)):
        for arm in arms:
            if arm not in cache:
                try:
                    cache[arm] = (train(arm, data, cfg)[1], None)
                except (TrainingDiverged, ValueError, LeakageError) as exc:
                    log.error("arm %s failed: %s", arm.name, exc)
                    cache[arm] = (None, f"{type(exc).__name__}: {exc}")
            rows.append(AblationRow(table, arm, *cache[arm]))
    return rows, majority_baseline(data, cfg)


def _mark(flag: bool) -> str:
    return "✓" if flag else "×"


def ablation_table(rows: Sequence[AblationRow], baseline: RunReport | None = None) -> str:
    """Markdown tables laid out like the empathy-component and module ablations."""
    out = ["## Empathy components", "",
           "| Views | Contrast | Accuracy | Specificity | Sensitivity |", "|---|---|---|---|---|"]
    for r in (r for r in rows if r.table == "empathy_components"):
        cells = r.report.formatted() if r.report else {m: f"failed ({r.error})" for m in METRICS}
        views = {"em": "EM", "tom": "ToM", "tom+em": "ToM+EM"}[r.arm.views]
        out.append(f"| {views} | {_mark(r.arm.contrast)} | {cells['accuracy']} | {cells['specificity']} "
                   f"| {cells['sensitivity']} |")
    out += ["", "## Network modules", "",
            "| Fusion | Contrast | Accuracy | Specificity | Sensitivity |", "|---|---|---|---|---|"]
    for r in (r for r in rows if r.table == "network_modules"):
        cells = r.report.formatted() if r.report else {m: f"failed ({r.error})" for m in METRICS}
        out.append(f"| {_mark(r.arm.fusion)} | {_mark(r.arm.contrast)} | {cells['accuracy']} "
                   f"| {cells['specificity']} | {cells['sensitivity']} |")
    if baseline is not None:
        cells = baseline.formatted()
        out += ["", "## Harness sanity", "", "| Method | Accuracy | Specificity | Sensitivity |",
                "|---|---|---|---|",
                f"| Majority class | {cells['accuracy']} | {cells['specificity']} | {cells['sensitivity']} |"]
    return "\n".join(out) + "\n"


def ablation_lines(rows: Sequence[AblationRow], baseline: RunReport | None = None) -> list[str]:
    lines = []
    for r in rows:
        head = {"record": "arm", "table": r.table, "arm": r.arm.name, "views": r.arm.views,
                "fusion": r.arm.fusion, "contrast": r.arm.contrast, "error": r.error}
        lines.append(json.dumps(head, sort_keys=True))
        if r.report:
            lines.extend(r.report.lines())
    if baseline is not None:
        lines.extend(baseline.lines())
    return lines
