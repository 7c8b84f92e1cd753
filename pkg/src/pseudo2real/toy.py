"""Desk-scale simulator of the correction-vector workflow.

A synthetic "speech" world: each word has a prototype vector, each accent
applies an affine distortion, each speaker adds an offset, and every word
slot yields one noisy frame::

    x_t = A_accent @ proto[w_t] + b_accent + o_speaker + noise

The "ASR model" is a softmax linear classifier over frames (tensors ``W``
of shape [V, d] and ``b`` of shape [V]) trained by deterministic
full-batch gradient descent. A model pretrained on an anchor accent acts
as teacher, and the whole pipeline runs on top of it: pseudo-labelling,
source-fold correction vectors, lambda selection on source data only,
and WER on the target fold.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Sequence

import numpy as np

from .clustering import EmbeddingSet, KMeansParams, kmeans
from .errors import ComputationError, DataError
from .lambda_search import DEFAULT_GRID, LambdaGrid, LambdaSearchResult, grid_search
from .manifest import UtteranceRecord
from .task_arithmetic import TaskVector, apply, average, diff
from .tensor_store import Role, TensorMap
from .wer import EditCounts, align

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class AccentSpec:
    name: str
    perturbation_scale: float = 0.45
    bias_scale: float = 0.5
    # whether the accent carries the world's shared family distortion
    family: bool = True


def _default_accents():
    return (AccentSpec("anchor", 0.0, 0.0, family=False),) + tuple(
        AccentSpec(f"acc{i}") for i in range(1, 9)
    )


@dataclass(frozen=True)
class ToyWorldConfig:
    vocab_size: int = 32
    feature_dim: int = 16
    accents: tuple[AccentSpec, ...] = field(default_factory=_default_accents)
    speakers_per_accent: int = 6
    utterances_per_speaker: dict = field(default_factory=lambda: {"train": 10, "dev": 4, "test": 6})
    utterance_len: int = 8
    noise_scale: float = 0.3
    speaker_scale: float = 0.3
    family_perturbation_scale: float = 0.25
    family_bias_scale: float = 0.5
    master_seed: int = 0

    def __post_init__(self):
        accents = tuple(a if isinstance(a, AccentSpec) else AccentSpec(**a) for a in self.accents)
        object.__setattr__(self, "accents", accents)
        object.__setattr__(self, "utterances_per_speaker", dict(self.utterances_per_speaker))
        if self.vocab_size < 2 or self.feature_dim < 2 or self.utterance_len < 1:
            raise DataError("need vocab_size >= 2, feature_dim >= 2, utterance_len >= 1", code="bad_config")
        if self.speakers_per_accent < 1 or not accents:
            raise DataError("need at least one accent and one speaker per accent", code="bad_config")
        names = [a.name for a in accents]
        if len(set(names)) != len(names):
            raise DataError("accent names must be unique", code="bad_config")
        scales = [self.noise_scale, self.speaker_scale, self.family_perturbation_scale, self.family_bias_scale]
        scales += [s for a in accents for s in (a.perturbation_scale, a.bias_scale)]
        if any(not (math.isfinite(s) and s >= 0) for s in scales):
            raise DataError("all scales must be finite and >= 0", code="bad_config")
        if set(self.utterances_per_speaker) != set(SPLITS) or any(
            not isinstance(n, int) or n < 0 for n in self.utterances_per_speaker.values()
        ):
            raise DataError(f"utterances_per_speaker needs non-negative ints for {SPLITS}", code="bad_config")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ToyWorldConfig":
        return cls(**_known_fields(cls, obj))


def _known_fields(cls, obj):
    names = {f.name for f in fields(cls)}
    unknown = set(obj) - names
    if unknown:
        raise DataError(f"unknown {cls.__name__} fields: {sorted(unknown)}", code="bad_config")
    return dict(obj)


@dataclass(frozen=True)
class ToyUtterance:
    id: str
    accent: str
    speaker: str
    split: str
    words: tuple[int, ...]
    frames: np.ndarray  # (L, d) float64

    @property
    def text(self) -> str:
        return words_to_text(self.words)


def words_to_text(words) -> str:
    return " ".join(f"w{int(w)}" for w in words)


@dataclass
class ToyWorld:
    config: ToyWorldConfig
    prototypes: np.ndarray
    accent_matrices: dict[str, np.ndarray]
    accent_biases: dict[str, np.ndarray]
    speaker_offsets: dict[str, np.ndarray]
    utterances: list[ToyUtterance]

    def select(self, accents: Sequence[str], split: str) -> list[ToyUtterance]:
        accents = set(accents)
        return [u for u in self.utterances if u.accent in accents and u.split == split]


def generate_world(cfg: ToyWorldConfig) -> ToyWorld:
    """Sample a world deterministically from ``cfg.master_seed``."""
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.master_seed) % 2**64))
    V, d, L = cfg.vocab_size, cfg.feature_dim, cfg.utterance_len
    protos = rng.standard_normal((V, d))
    fam_A = rng.standard_normal((d, d)) * cfg.family_perturbation_scale
    fam_b = rng.standard_normal(d) * cfg.family_bias_scale
    mats, biases, offsets = {}, {}, {}
    utts = []
    for acc in cfg.accents:
        A = np.eye(d) + rng.standard_normal((d, d)) * acc.perturbation_scale
        b = rng.standard_normal(d) * acc.bias_scale
        if acc.family:
            A = A + fam_A
            b = b + fam_b
        mats[acc.name], biases[acc.name] = A, b
        for s in range(cfg.speakers_per_accent):
            spk = f"{acc.name}-s{s}"
            o = rng.standard_normal(d) * cfg.speaker_scale
            offsets[spk] = o
            for split in SPLITS:
                for i in range(cfg.utterances_per_speaker[split]):
                    words = rng.integers(V, size=L)
                    noise = rng.standard_normal((L, d)) * cfg.noise_scale
                    frames = protos[words] @ A.T + b + o + noise
                    utts.append(ToyUtterance(f"{spk}-{split}{i}", acc.name, spk, split, tuple(int(w) for w in words), frames))
    return ToyWorld(cfg, protos, mats, biases, offsets, utts)


# -- model ------------------------------------------------------------------


def zero_model(V: int, d: int) -> TensorMap:
    return TensorMap({"W": np.zeros((V, d)), "b": np.zeros(V)}, Role.PRETRAINED)


def _params(m: TensorMap):
    if set(m) != {"W", "b"} or m["W"].ndim != 2 or m["b"].shape != (m["W"].shape[0],):
        raise DataError("toy model needs W [V, d] and b [V]", code="bad_model")
    return m["W"].astype(np.float64), m["b"].astype(np.float64)


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def loss_and_grad(W, b, X, y):
    """Mean cross-entropy of softmax(X W^T + b) and its exact gradient."""
    n = X.shape[0]
    logp = _log_softmax(X @ W.T + b)
    loss = -logp[np.arange(n), y].mean()
    g = np.exp(logp)
    g[np.arange(n), y] -= 1.0
    g /= n
    return loss, g.T @ X, g.sum(axis=0)


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.1
    steps: int = 200


def _stack(data: Sequence[ToyUtterance], labels):
    if not data:
        raise DataError("training data is empty", code="empty")
    if labels is None:
        labels = [u.words for u in data]
    if len(labels) != len(data):
        raise DataError("labels and utterances differ in length", code="bad_labels")
    X = np.concatenate([u.frames for u in data])
    y = np.concatenate([np.asarray(lab, dtype=np.int64) for lab in labels])
    if y.shape[0] != X.shape[0]:
        raise DataError("each utterance needs one label per frame", code="bad_labels")
    return X, y


def train_trace(init: TensorMap, data, labels=None, hyper: TrainHyper = TrainHyper()):
    """Full-batch gradient descent; returns (model, per-step losses).

    ``losses[i]`` is the loss before update ``i``; a final entry holds the
    loss of the returned model.
    """
    if hyper.steps == 0:
        return TensorMap(init.items(), init.role), []
    W, b = _params(init)
    X, y = _stack(data, labels)
    if y.min() < 0 or y.max() >= W.shape[0]:
        raise DataError("label outside vocabulary", code="bad_labels")
    losses = []
    for step in range(hyper.steps):
        loss, gW, gb = loss_and_grad(W, b, X, y)
        if not math.isfinite(loss):
            raise ComputationError(f"training diverged at step {step}", code="divergence", step=step)
        losses.append(float(loss))
        W = W - hyper.lr * gW
        b = b - hyper.lr * gb
    final, _, _ = loss_and_grad(W, b, X, y)
    # weights are stored as float32; overflow there is divergence too
    with np.errstate(over="ignore", invalid="ignore"):
        W, b = W.astype(np.float32), b.astype(np.float32)
    if not (math.isfinite(final) and np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise ComputationError(f"training diverged at step {hyper.steps}", code="divergence", step=hyper.steps)
    losses.append(float(final))
    return TensorMap({"W": W, "b": b}), losses


def train(init: TensorMap, data, labels=None, hyper: TrainHyper = TrainHyper()) -> TensorMap:
    return train_trace(init, data, labels, hyper)[0]


def greedy_decode(m: TensorMap, u: ToyUtterance) -> tuple[list[int], list[float]]:
    """Per-slot argmax word (lowest id on ties) and its log-softmax value."""
    W, b = _params(m)
    logp = _log_softmax(u.frames @ W.T + b)
    words = np.argmax(logp, axis=1)
    return [int(w) for w in words], [float(v) for v in logp[np.arange(len(words)), words]]


def decode_all(m: TensorMap, utts: Sequence[ToyUtterance]) -> list[list[int]]:
    if not utts:
        return []
    W, b = _params(m)
    X = np.concatenate([u.frames for u in utts])
    words = np.argmax(X @ W.T + b, axis=1)
    out, pos = [], 0
    for u in utts:
        n = len(u.frames)
        out.append([int(w) for w in words[pos : pos + n]])
        pos += n
    return out


def wer_counts(m: TensorMap, utts: Sequence[ToyUtterance]) -> EditCounts:
    total = EditCounts()
    for u, hyp in zip(utts, decode_all(m, utts)):
        total = total + align(list(u.words), hyp).counts
    return total


def wer(m: TensorMap, utts: Sequence[ToyUtterance]) -> float:
    c = wer_counts(m, utts)
    return c.errors / c.ref_len


def hypothesis_records(m: TensorMap, utts: Sequence[ToyUtterance]) -> list[UtteranceRecord]:
    out = []
    for u in utts:
        words, logp = greedy_decode(m, u)
        out.append(UtteranceRecord(u.id, hypothesis=words_to_text(words), word_logprobs=tuple(logp), speaker=u.speaker))
    return out


@dataclass
class ToyBackend:
    """Transcription backend that greedy-decodes toy utterances by id."""

    utterances: dict[str, ToyUtterance]

    @classmethod
    def from_list(cls, utts: Sequence[ToyUtterance]) -> "ToyBackend":
        return cls({u.id: u for u in utts})

    def transcribe(self, model, lam, dev_refs):
        try:
            utts = [self.utterances[r.id] for r in dev_refs]
        except KeyError as exc:
            raise DataError(f"unknown toy utterance {exc.args[0]!r}", code="unknown_id") from None
        return hypothesis_records(model, utts)


def utterance_embeddings(utts: Sequence[ToyUtterance]) -> EmbeddingSet:
    """Speaker-embedding stand-in: the utterance's mean frame."""
    return EmbeddingSet(tuple(u.id for u in utts), np.stack([u.frames.mean(axis=0) for u in utts]))


# -- experiment -------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    pretrain_accents: tuple[str, ...] = ("anchor",)
    source_accents: tuple[str, ...] = ("acc1", "acc2", "acc3", "acc4")
    target_accents: tuple[str, ...] = ("acc5", "acc6", "acc7", "acc8")
    lambda_grid: tuple[float, ...] = DEFAULT_GRID
    lr: float = 0.1
    steps: int = 200
    pretrain_steps: int = 200
    # "heldout_accent": leave-one-source-accent-out transfer on source dev
    # "source_pseudo": score theta_s_pseudo + lam * tau on source dev
    lambda_selection: str = "heldout_accent"
    kmeans_seed: int = 0
    kmeans_n_init: int = 10

    def __post_init__(self):
        for name in ("pretrain_accents", "source_accents", "target_accents", "lambda_grid"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if set(self.source_accents) & set(self.target_accents):
            raise DataError("source and target accents must be disjoint", code="bad_config")
        if not self.source_accents or not self.target_accents or not self.pretrain_accents:
            raise DataError("pretrain, source and target accent lists must be non-empty", code="bad_config")
        if self.lambda_selection not in ("heldout_accent", "source_pseudo"):
            raise DataError(f"unknown lambda_selection {self.lambda_selection!r}", code="bad_config")
        if self.lambda_selection == "heldout_accent" and len(self.source_accents) < 2:
            raise DataError("heldout_accent selection needs at least two source accents", code="bad_config")
        LambdaGrid(self.lambda_grid)

    @property
    def hyper(self) -> TrainHyper:
        return TrainHyper(self.lr, self.steps)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        return cls(**_known_fields(cls, obj))


@dataclass
class ExperimentReport:
    wer_pretrained: float
    wer_pseudo: float
    wer_corrected: float
    wer_topline: float
    chosen_lambda: float
    lambda_trace: list[tuple[float, float]]
    per_accent: dict[str, dict[str, float]]
    master_seed: int
    kmeans_seed: int
    k: int | None = None
    tau_norm: float = 0.0
    artifacts: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def relative_reduction(self) -> float:
        """(pseudo - corrected) / pseudo; 0 when the pseudo WER is 0."""
        if self.wer_pseudo == 0:
            return 0.0
        return (self.wer_pseudo - self.wer_corrected) / self.wer_pseudo

    def to_json(self) -> dict:
        return {
            "master_seed": self.master_seed,
            "kmeans_seed": self.kmeans_seed,
            "k": self.k,
            "wer_pretrained": self.wer_pretrained,
            "wer_pseudo": self.wer_pseudo,
            "wer_corrected": self.wer_corrected,
            "wer_topline": self.wer_topline,
            "relative_reduction": self.relative_reduction,
            "chosen_lambda": self.chosen_lambda,
            "lambda_trace": [{"lambda": lam, "wer": w} for lam, w in self.lambda_trace],
            "tau_norm": self.tau_norm,
            "per_accent": self.per_accent,
        }


def _pseudo_labels(teacher, utts):
    return decode_all(teacher, utts)


def correction_vector(theta_pre, utts, teacher, hyper, k=None, kmeans_seed=0, n_init=10):
    """Real-minus-pseudo vector on ``utts``; with ``k``, the mean of
    per-cluster vectors over a k-means partition of utterance embeddings."""
    pseudo = _pseudo_labels(teacher, utts)
    if k is None:
        real_m = train(theta_pre, utts, None, hyper)
        pseudo_m = train(theta_pre, utts, pseudo, hyper)
        return diff(real_m, pseudo_m), None
    if k > len(utts):
        raise DataError(f"k={k} exceeds {len(utts)} source utterances", code="bad_k")
    assign = kmeans(utterance_embeddings(utts), k, kmeans_seed, KMeansParams(n_init=n_init))
    vectors = []
    for c in range(k):
        idx = [i for i, lab in enumerate(assign.label_array) if lab == c]
        sub = [utts[i] for i in idx]
        real_m = train(theta_pre, sub, None, hyper)
        pseudo_m = train(theta_pre, sub, [pseudo[i] for i in idx], hyper)
        vectors.append(diff(real_m, pseudo_m))
    return average(vectors), assign


def _pretrain(world, exp):
    cfg = world.config
    data = world.select(exp.pretrain_accents, "train")
    return train(zero_model(cfg.vocab_size, cfg.feature_dim), data, None, TrainHyper(exp.lr, exp.pretrain_steps)).with_role(Role.PRETRAINED)


def _select_lambda(world, exp, theta_pre, k):
    hyper = exp.hyper
    grid = LambdaGrid(exp.lambda_grid)
    if exp.lambda_selection == "source_pseudo":
        src = world.select(exp.source_accents, "train")
        dev = world.select(exp.source_accents, "dev")
        tau, _ = correction_vector(theta_pre, src, theta_pre, hyper, k, exp.kmeans_seed, exp.kmeans_n_init)
        base = train(theta_pre, src, _pseudo_labels(theta_pre, src), hyper)
        folds = [(base, tau, dev)]
    else:
        folds = []
        for held in exp.source_accents:
            rest = [a for a in exp.source_accents if a != held]
            src = world.select(rest, "train")
            kk = None if k is None else min(k, len(src))
            tau, _ = correction_vector(theta_pre, src, theta_pre, hyper, kk, exp.kmeans_seed, exp.kmeans_n_init)
            held_train = world.select([held], "train")
            base = train(theta_pre, held_train, _pseudo_labels(theta_pre, held_train), hyper)
            folds.append((base, tau, world.select([held], "dev")))

    def evaluate(lam):
        total = EditCounts()
        for base, tau, dev in folds:
            total = total + wer_counts(apply(base, tau, lam), dev)
        return total.errors / total.ref_len

    return grid_search(grid, evaluate)


def _run(world: ToyWorld, exp: ExperimentConfig, k: int | None) -> ExperimentReport:
    hyper = exp.hyper
    theta_pre = _pretrain(world, exp)
    teacher = theta_pre
    src_train = world.select(exp.source_accents, "train")
    tgt_train = world.select(exp.target_accents, "train")
    if k is not None and k > len(src_train):
        raise DataError(f"k={k} exceeds {len(src_train)} source utterances", code="bad_k")

    tau, assign = correction_vector(theta_pre, src_train, teacher, hyper, k, exp.kmeans_seed, exp.kmeans_n_init)
    theta_t_pseudo = train(theta_pre, tgt_train, _pseudo_labels(teacher, tgt_train), hyper).with_role(Role.PSEUDO_FINETUNED)
    topline = train(theta_pre, tgt_train, None, hyper).with_role(Role.REAL_FINETUNED)

    search: LambdaSearchResult = _select_lambda(world, exp, theta_pre, k)
    corrected = apply(theta_t_pseudo, tau, search.chosen)

    models = {"pretrained": theta_pre, "pseudo": theta_t_pseudo, "corrected": corrected, "topline": topline}
    per_accent: dict[str, dict[str, float]] = {}
    pooled = {name: EditCounts() for name in models}
    for acc in exp.target_accents:
        test = world.select([acc], "test")
        per_accent[acc] = {}
        for name, m in models.items():
            c = wer_counts(m, test)
            pooled[name] = pooled[name] + c
            per_accent[acc][name] = c.errors / c.ref_len
    wers = {name: c.errors / c.ref_len for name, c in pooled.items()}
    tau_norm = float(np.sqrt(sum(float((a.astype(np.float64) ** 2).sum()) for a in tau.values())))
    return ExperimentReport(
        wer_pretrained=wers["pretrained"],
        wer_pseudo=wers["pseudo"],
        wer_corrected=wers["corrected"],
        wer_topline=wers["topline"],
        chosen_lambda=search.chosen,
        lambda_trace=search.evaluated,
        per_accent=per_accent,
        master_seed=world.config.master_seed,
        kmeans_seed=exp.kmeans_seed,
        k=k,
        tau_norm=tau_norm,
        artifacts={"tau": tau, "theta_pre": theta_pre, "theta_t_pseudo": theta_t_pseudo, "assignment": assign, "topline": topline},
    )


def run_pseudo2real(world: ToyWorld, exp: ExperimentConfig = ExperimentConfig()) -> ExperimentReport:
    return _run(world, exp, None)


def run_pseudo2real_sc(world: ToyWorld, exp: ExperimentConfig = ExperimentConfig(), k: int = 8) -> ExperimentReport:
    if not isinstance(k, int) or k < 1:
        raise DataError(f"k must be a positive integer, got {k!r}", code="bad_k")
    return _run(world, exp, k)


def lambda_sweep(world: ToyWorld, exp: ExperimentConfig, grid: Sequence[float]) -> list[tuple[float, float]]:
    """Target-test WER of the corrected model at each lambda (no selection)."""
    hyper = exp.hyper
    theta_pre = _pretrain(world, exp)
    src = world.select(exp.source_accents, "train")
    tgt = world.select(exp.target_accents, "train")
    tau, _ = correction_vector(theta_pre, src, theta_pre, hyper)
    base = train(theta_pre, tgt, _pseudo_labels(theta_pre, tgt), hyper)
    test = world.select(exp.target_accents, "test")
    return [(float(lam), wer(apply(base, tau, lam), test)) for lam in LambdaGrid(tuple(grid))]


def run_seeds(cfg: ToyWorldConfig, exp: ExperimentConfig, seeds: Sequence[int], k: int | None = None, threads: int = 1):
    """One report per master seed, in seed order regardless of threading."""

    def one(seed):
        world = generate_world(replace(cfg, master_seed=int(seed)))
        return _run(world, exp, k)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, seeds))
    return [one(s) for s in seeds]


def summarize(reports: Sequence[ExperimentReport]) -> dict:
    red = [r.relative_reduction for r in reports]
    keys = ("wer_pretrained", "wer_pseudo", "wer_corrected", "wer_topline")
    return {
        "num_seeds": len(reports),
        **{f"mean_{k}": float(np.mean([getattr(r, k) for r in reports])) for k in keys},
        "mean_relative_reduction": float(np.mean(red)),
        "seeds_non_negative": int(sum(x >= 0 for x in red)),
        "chosen_lambdas": [r.chosen_lambda for r in reports],
    }
