"""Toy language model and a distillation-based QAT experiment.

A one-hidden-layer softmax LM (embedding -> tanh hidden -> vocabulary) is
trained as a full-precision teacher on a seeded order-1 Markov corpus.  A
student starts from the teacher's weights and trains with both linear layers
fake-quantized, minimizing ``CE + lambda * KL(teacher, student)``.  The report
compares eval perplexity of the teacher, the PTQ-only student and the QAT
student.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calib import QuantSpec, ScaleMode
from .codecs import Codec
from .core import Rng
from .distill import KLMode, _fkl, _rkl, fake_quant_array, log_softmax
from .errors import ArgumentError

VOCAB = 32
EMBED = 16
HIDDEN = 32


@dataclass(frozen=True)
class CorpusSpec:
    n_train: int = 512
    n_eval: int = 128
    seq_len: int = 64
    logit_scale: float = 2.0


@dataclass(frozen=True)
class QatConfig:
    seed: int = 1
    steps: int = 2000
    teacher_steps: int = 2000
    batch: int = 16
    lr: float = 0.05
    lam: float = 1.0
    codec: Codec = Codec.SEQ2
    kl_mode: KLMode = KLMode.ADAPTIVE
    confidence_to: str = "forward"
    group_size: int = 32
    scale_mode: ScaleMode = ScaleMode.MSE_GRID
    corpus: CorpusSpec = field(default_factory=CorpusSpec)

    def __post_init__(self):
        if self.steps < 0 or self.teacher_steps < 0:
            raise ArgumentError("step counts must be >= 0")
        if self.lam < 0:
            raise ArgumentError(f"lambda must be >= 0, got {self.lam}")
        if self.batch < 1 or self.lr <= 0:
            raise ArgumentError("batch must be >= 1 and lr > 0")
        if self.confidence_to not in ("forward", "reverse"):
            raise ArgumentError(f"confidence_to must be 'forward' or 'reverse', got {self.confidence_to!r}")
        if self.codec not in (Codec.SEQ2, Codec.SHERRY125):
            raise ArgumentError(f"QAT fake-quant supports SEQ2 or SHERRY125, got {self.codec.name}")
        self.quant_spec  # validates group constraints

    @property
    def quant_spec(self) -> QuantSpec:
        spec = QuantSpec(self.codec, self.group_size, self.scale_mode)
        spec.check_cols(HIDDEN)
        spec.check_cols(VOCAB)
        return spec


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Corpus:
    seed: int
    spec: CorpusSpec
    transitions: np.ndarray
    train: np.ndarray
    eval: np.ndarray


def _rngs(seed: int) -> tuple[Rng, Rng, Rng]:
    root = Rng(seed)
    return root.split(), root.split(), root.split()  # corpus, teacher, student


def _sample_sequences(rng: Rng, cdf: np.ndarray, n: int, length: int) -> np.ndarray:
    v = cdf.shape[0]
    seqs = np.empty((n, length), dtype=np.int64)
    seqs[:, 0] = np.minimum((rng.uniform(n) * v).astype(np.int64), v - 1)
    for t in range(1, length):
        u = rng.uniform(n)
        rows = cdf[seqs[:, t - 1]]
        seqs[:, t] = np.minimum((rows < u[:, None]).sum(axis=1), v - 1)
    return seqs


def make_corpus(seed: int, spec: CorpusSpec | None = None) -> Corpus:
    """Order-1 Markov corpus; transition rows are ``softmax(scale * N(0,1))``."""
    spec = spec or CorpusSpec()
    rng, _, _ = _rngs(seed)
    logits = rng.normal(VOCAB * VOCAB).reshape(VOCAB, VOCAB) * spec.logit_scale
    trans = np.exp(logits - logits.max(axis=1, keepdims=True))
    trans /= trans.sum(axis=1, keepdims=True)
    cdf = np.cumsum(trans, axis=1)
    train = _sample_sequences(rng, cdf, spec.n_train, spec.seq_len)
    eval_ = _sample_sequences(rng, cdf, spec.n_eval, spec.seq_len)
    return Corpus(seed, spec, trans, train, eval_)


def unigram_perplexity(corpus: Corpus) -> float:
    """Eval perplexity of add-one-smoothed unigram counts from the train split."""
    counts = np.bincount(corpus.train[:, 1:].reshape(-1), minlength=VOCAB) + 1.0
    logp = np.log(counts / counts.sum())
    return math.exp(-float(np.mean(logp[corpus.eval[:, 1:]])))


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ToyLM:
    """Next-token model ``softmax(tanh(E[x] @ W1 + b1) @ W2 + b2)``.

    ``W1`` is EMBED x HIDDEN and ``W2`` HIDDEN x VOCAB (input-major) so both
    have 32 columns for group quantization.  When ``quant`` is set, the
    forward pass uses fake-quantized ``W1``/``W2``.
    """

    E: np.ndarray
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    quant: QuantSpec | None = None
    corpus_key: tuple | None = None

    @classmethod
    def init(cls, rng: Rng) -> "ToyLM":
        E = rng.normal(VOCAB * EMBED).reshape(VOCAB, EMBED)
        W1 = rng.normal(EMBED * HIDDEN).reshape(EMBED, HIDDEN) / math.sqrt(EMBED)
        # zero output layer: the untrained model predicts uniformly
        return cls(
            E.astype(np.float32),
            W1.astype(np.float32),
            np.zeros(HIDDEN, np.float32),
            np.zeros((HIDDEN, VOCAB), np.float32),
            np.zeros(VOCAB, np.float32),
        )

    def params(self) -> dict[str, np.ndarray]:
        return {"E": self.E, "W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}

    def copy(self, **changes) -> "ToyLM":
        fields = {k: v.copy() for k, v in self.params().items()}
        fields.update(quant=self.quant, corpus_key=self.corpus_key)
        fields.update(changes)
        return ToyLM(**fields)

    def effective_weights(self):
        """``(W1, W2, mask1, mask2)`` as used by the forward pass."""
        if self.quant is None:
            return self.W1, self.W2, None, None
        w1, m1 = fake_quant_array(self.W1, self.quant)
        w2, m2 = fake_quant_array(self.W2, self.quant)
        return w1, w2, m1, m2

    def forward(self, ctx: np.ndarray, weights=None):
        """Logits for each context token; also returns the activations for backward."""
        w1, w2 = (weights or self.effective_weights())[:2]
        e = self.E[ctx].astype(np.float64)
        h = np.tanh(e @ w1.astype(np.float64) + self.b1)
        z = h @ w2.astype(np.float64) + self.b2
        return z, (e, h)

    def logits(self, ctx) -> np.ndarray:
        return self.forward(np.asarray(ctx))[0]


def perplexity(model: ToyLM, sequences: np.ndarray) -> float:
    """``exp`` of mean next-token NLL over all positions after the first."""
    seqs = np.asarray(sequences)
    if seqs.ndim != 2 or seqs.shape[0] == 0 or seqs.shape[1] < 2:
        raise ArgumentError("corpus must hold at least one sequence of length >= 2")
    ctx = seqs[:, :-1].reshape(-1)
    tgt = seqs[:, 1:].reshape(-1)
    logp = log_softmax(model.logits(ctx))
    return math.exp(-float(np.mean(logp[np.arange(tgt.size), tgt])))


def _backward(model: ToyLM, ctx, acts, dz, w1, w2):
    e, h = acts
    grads = {
        "W2": h.T @ dz,
        "b2": dz.sum(axis=0),
    }
    da = (dz @ w2.astype(np.float64).T) * (1.0 - h * h)
    grads["W1"] = e.T @ da
    grads["b1"] = da.sum(axis=0)
    de = da @ w1.astype(np.float64).T
    dE = np.zeros((VOCAB, EMBED))
    np.add.at(dE, ctx, de)
    grads["E"] = dE
    return grads


def _sgd(model: ToyLM, grads, lr: float) -> None:
    for name, g in grads.items():
        p = getattr(model, name)
        setattr(model, name, (p.astype(np.float64) - lr * g).astype(np.float32))


def _batch(rng: Rng, train: np.ndarray, size: int):
    idx = np.minimum((rng.uniform(size) * train.shape[0]).astype(np.int64), train.shape[0] - 1)
    seqs = train[idx]
    return seqs[:, :-1].reshape(-1), seqs[:, 1:].reshape(-1)


def _ce_grad(z, tgt):
    n = tgt.size
    p = np.exp(log_softmax(z))
    p[np.arange(n), tgt] -= 1.0
    return p / n


def train_teacher(config: QatConfig, corpus: Corpus | None = None) -> ToyLM:
    """Full-precision SGD on next-token cross-entropy; deterministic per seed."""
    corpus = corpus or make_corpus(config.seed, config.corpus)
    _, rng, _ = _rngs(config.seed)
    model = ToyLM.init(rng)
    model.corpus_key = (config.seed, config.corpus)
    for _ in range(config.teacher_steps):
        ctx, tgt = _batch(rng, corpus.train, config.batch)
        z, acts = model.forward(ctx)
        _sgd(model, _backward(model, ctx, acts, _ce_grad(z, tgt), model.W1, model.W2), config.lr)
    return model


@dataclass(frozen=True)
class QatReport:
    seed: int
    codec: str
    kl_mode: str
    steps: int
    lam: float
    unigram_ppl: float
    teacher_ppl: float
    ptq_ppl: float
    qat_ppl: float

    @property
    def qat_beats_ptq(self) -> bool:
        return self.qat_ppl <= self.ptq_ppl

    def table(self) -> str:
        rows = [
            ("unigram", self.unigram_ppl),
            ("teacher (fp32)", self.teacher_ppl),
            (f"PTQ student ({self.codec})", self.ptq_ppl),
            (f"QAT student ({self.codec}, {self.kl_mode})", self.qat_ppl),
        ]
        w = max(len(r[0]) for r in rows)
        lines = [f"{'model':<{w}}  eval_ppl"]
        lines += [f"{name:<{w}}  {ppl:.6f}" for name, ppl in rows]
        lines.append(f"QAT <= PTQ: {'PASS' if self.qat_beats_ptq else 'FAIL'}")
        return "\n".join(lines)

    def record(self) -> str:
        return (
            f"seed={self.seed} codec={self.codec} kl_mode={self.kl_mode} steps={self.steps} "
            f"lambda={self.lam:g} unigram_ppl={self.unigram_ppl:.6f} teacher_ppl={self.teacher_ppl:.6f} "
            f"ptq_ppl={self.ptq_ppl:.6f} qat_ppl={self.qat_ppl:.6f} "
            f"qat_beats_ptq={int(self.qat_beats_ptq)}"
        )


def _confidence(p_t, confidence_to: str):
    c = p_t.max(axis=-1)
    return c if confidence_to == "forward" else 1.0 - c


def _distill_grad(mode: KLMode, p_t, z, confidence_to: str = "forward"):
    if mode is KLMode.FKL:
        return _fkl(p_t, z)[1]
    if mode is KLMode.RKL:
        return _rkl(p_t, z)[1]
    c = _confidence(p_t, confidence_to)[..., None]
    return c * _fkl(p_t, z)[1] + (1.0 - c) * _rkl(p_t, z)[1]


def train_student_qat(
    config: QatConfig, teacher: ToyLM, corpus: Corpus | None = None
) -> tuple[ToyLM, QatReport]:
    """Distill ``teacher`` into a fake-quantized student with straight-through updates."""
    if teacher.corpus_key != (config.seed, config.corpus):
        raise ArgumentError("teacher was trained on a different corpus spec or seed")
    corpus = corpus or make_corpus(config.seed, config.corpus)
    spec = config.quant_spec
    _, _, rng = _rngs(config.seed)
    ptq = teacher.copy(quant=spec)
    student = teacher.copy(quant=spec)
    for _ in range(config.steps):
        ctx, tgt = _batch(rng, corpus.train, config.batch)
        w1, w2, m1, m2 = student.effective_weights()
        z, acts = student.forward(ctx, (w1, w2))
        dz = _ce_grad(z, tgt)
        if config.lam > 0:
            p_t = np.exp(log_softmax(teacher.logits(ctx)))
            dz = dz + config.lam * _distill_grad(config.kl_mode, p_t, z, config.confidence_to) / tgt.size
        grads = _backward(student, ctx, acts, dz, w1, w2)
        grads["W1"] = grads["W1"] * m1
        grads["W2"] = grads["W2"] * m2
        _sgd(student, grads, config.lr)
    report = QatReport(
        seed=config.seed,
        codec=config.codec.name,
        kl_mode=config.kl_mode.value,
        steps=config.steps,
        lam=config.lam,
        unigram_ppl=unigram_perplexity(corpus),
        teacher_ppl=perplexity(teacher, corpus.eval),
        ptq_ppl=perplexity(ptq, corpus.eval),
        qat_ppl=perplexity(student, corpus.eval),
    )
    return student, report


def run_qat_demo(config: QatConfig) -> QatReport:
    corpus = make_corpus(config.seed, config.corpus)
    teacher = train_teacher(config, corpus)
    return train_student_qat(config, teacher, corpus)[1]


def qat_loss(config: QatConfig, teacher: ToyLM, student: ToyLM, ctx, tgt) -> float:
    """Mean ``CE + lambda * KL`` of a student on one batch (diagnostics and tests)."""
    z = student.logits(ctx)
    logp = log_softmax(z)
    ce = -float(np.mean(logp[np.arange(tgt.size), tgt]))
    if config.lam == 0:
        return ce
    p_t = np.exp(log_softmax(teacher.logits(ctx)))
    if config.kl_mode is KLMode.FKL:
        kl = _fkl(p_t, z)[0]
    elif config.kl_mode is KLMode.RKL:
        kl = _rkl(p_t, z)[0]
    else:
        c = _confidence(p_t, config.confidence_to)
        kl = c * _fkl(p_t, z)[0] + (1 - c) * _rkl(p_t, z)[0]
    return ce + config.lam * float(np.mean(kl))


__all__ = [
    "CorpusSpec",
    "QatConfig",
    "QatReport",
    "ToyLM",
    "make_corpus",
    "perplexity",
    "run_qat_demo",
    "train_student_qat",
    "train_teacher",
    "unigram_perplexity",
]
