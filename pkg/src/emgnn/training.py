"""Training loop, Adam, evaluation, and the ablation harness."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import data as D
from . import gnn
from .autodiff import Tape, Tensor
from .config import RunConfig
from .encoder import (EncoderParams, Vocabulary, build_vocab, encode_batch,
                      encode_sequence, fuse, tokenize)
from .metrics import MetricsReport, compute_metrics, ranking_auc

MAX_CAPTION_LEN = 40
MAX_QA_LEN = 20


# ---------------------------------------------------------------------------
# model = shared text encoder + GNN


@dataclass
class Model:
    cfg: RunConfig
    vocab: Vocabulary
    enc: EncoderParams
    gnn: gnn.GnnParams

    @staticmethod
    def init(cfg: RunConfig, vocab: Vocabulary, rng: np.random.Generator,
             ctx_dim: int = 0) -> "Model":
        enc = EncoderParams.init(len(vocab), cfg.embed_dim, cfg.dim, rng, ctx_dim=ctx_dim)
        g = gnn.GnnParams.init(cfg.dim, cfg.fc_dim, rng)
        return Model(cfg, vocab, enc, g)

    def params(self) -> dict[str, Tensor]:
        out = dict(self.enc.named_tensors())
        out.update(self.gnn.named_tensors())
        return out

    # -- forward -----------------------------------------------------------

    def _encode_text(self, text: str, max_len: int) -> Tensor:
        return encode_sequence(self.vocab.encode(tokenize(text, max_len)), self.enc)

    def build_graph(self, view: D.RoundView) -> gnn.DialogGraph:
        ctx = None
        if view.context_feature is not None:
            ctx = np.asarray(view.context_feature, dtype=np.float64)
        nodes = [fuse(self._encode_text(view.caption, MAX_CAPTION_LEN), ctx, self.enc)]
        labels = ["caption"]
        for k, (q, a) in enumerate(view.history):
            text = f"{q} | {a}" if a else q
            nodes.append(fuse(self._encode_text(text, 2 * MAX_QA_LEN + 1), ctx, self.enc))
            labels.append(f"qa{k + 1}")
        if self.cfg.mode == "visdialq":
            # the next-question task seeds the query node from the caption
            query = self._encode_text(view.caption, MAX_CAPTION_LEN)
        else:
            query = self._encode_text(view.question, MAX_QA_LEN)
        nodes.append(fuse(query, ctx, self.enc))
        labels.append("query")
        observed = [True] * (len(nodes) - 1) + [False]
        return gnn.DialogGraph(hidden=nodes, observed=observed, labels=labels)

    def forward(self, view: D.RoundView) -> "ForwardResult":
        g = self.build_graph(view)
        variant = self.cfg.variant
        outer = 0 if variant == "no_iter" else self.cfg.outer_iters
        gnn.em_infer(g, self.gnn, outer, self.cfg.inner_steps,
                     constant_graph=(variant == "const_graph"))
        opt_ids = [self.vocab.encode(tokenize(o, MAX_QA_LEN)) for o in view.options]
        options = encode_batch(opt_ids, self.enc)
        h_z = g.hidden[g.query_index]
        scores, probs = gnn.score_options(h_z, options)
        loss = ad.cross_entropy(scores, view.gt_index)
        return ForwardResult(
            loss=loss,
            scores=scores.values.copy(),
            probs=probs.values.copy(),
            rank=gnn.rank_of(scores.values, view.gt_index),
            graph=g,
        )


@dataclass
class ForwardResult:
    loss: Tensor
    scores: np.ndarray
    probs: np.ndarray
    rank: int
    graph: gnn.DialogGraph


def vocab_from_dataset(ds: D.DialogDataset) -> Vocabulary:
    corpus = []
    for d in ds.dialogs:
        corpus.append(tokenize(d.caption, MAX_CAPTION_LEN))
        for r in d.rounds:
            corpus.append(tokenize(r.question, 2 * MAX_QA_LEN + 1))
            corpus.append(tokenize(r.answer, MAX_QA_LEN))
            for o in r.options:
                corpus.append(tokenize(o, MAX_QA_LEN))
    corpus.append(["|"])
    return build_vocab(corpus, min_count=1)


# ---------------------------------------------------------------------------
# Adam with linear learning-rate decay


@dataclass
class OptimizerState:
    lr_base: float
    lr_floor: float
    total_steps: int
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    rejected: int = 0

    def lr(self) -> float:
        if self.total_steps <= 1:
            return self.lr_base
        frac = min(1.0, self.step_count / (self.total_steps - 1))
        return self.lr_base + frac * (self.lr_floor - self.lr_base)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              st: OptimizerState) -> bool:
    """One bias-corrected Adam step; a non-finite gradient rejects the
    whole step (parameters untouched).  Returns whether it applied."""
    for name, g in grads.items():
        if g.shape != params[name].values.shape:
            raise ad.ShapeError(f"gradient for {name} has shape {g.shape}, "
                                f"expected {params[name].values.shape}")
        if not np.all(np.isfinite(g)):
            st.rejected += 1
            return False
    lr = st.lr()
    st.step_count += 1
    t = st.step_count
    for name, g in grads.items():
        if name not in st.m:
            st.m[name] = np.zeros_like(g)
            st.v[name] = np.zeros_like(g)
        st.m[name] = st.beta1 * st.m[name] + (1 - st.beta1) * g
        st.v[name] = st.beta2 * st.v[name] + (1 - st.beta2) * g * g
        mhat = st.m[name] / (1 - st.beta1 ** t)
        vhat = st.v[name] / (1 - st.beta2 ** t)
        params[name].values -= lr * mhat / (np.sqrt(vhat) + st.eps)
    return True


# ---------------------------------------------------------------------------
# training


def split_indices(n_dialogs: int) -> tuple[list[int], list[int]]:
    """Fixed validation split: the last 10% of dialogs by index."""
    n_val = max(1, n_dialogs // 10) if n_dialogs > 1 else 0
    cut = n_dialogs - n_val
    return list(range(cut)), list(range(cut, n_dialogs))


def train(ds: D.DialogDataset, cfg: RunConfig, log=None,
          eval_val: bool = True) -> tuple[Model, list[dict]]:
    if len(ds.dialogs) == 0:
        raise D.DatasetError("dataset is empty")
    if ds.mode != cfg.mode:
        raise D.DatasetError(f"dataset mode {ds.mode!r} does not match config mode "
                             f"{cfg.mode!r}")
    rng = np.random.default_rng(cfg.seed)
    vocab = vocab_from_dataset(ds)
    ctx_dim = 0
    if ds.dialogs[0].context_feature is not None:
        ctx_dim = len(ds.dialogs[0].context_feature)
    model = Model.init(cfg, vocab, rng, ctx_dim=ctx_dim)
    params = model.params()

    train_idx, val_idx = split_indices(len(ds.dialogs))
    examples = [(di, ri) for di in train_idx for ri in range(len(ds.dialogs[di].rounds))]
    steps_per_epoch = max(1, math.ceil(len(examples) / cfg.batch_size))
    st = OptimizerState(cfg.lr_base, cfg.lr_floor,
                        total_steps=cfg.epochs * steps_per_epoch)

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(examples))
        losses = []
        for b0 in range(0, len(examples), cfg.batch_size):
            batch = [examples[i] for i in order[b0:b0 + cfg.batch_size]]
            for t in params.values():
                t.zero_grad()
            batch_loss = 0.0
            for di, ri in batch:
                view = D.model_view(ds, di, ri)
                with Tape() as tape:
                    res = model.forward(view)
                tape.backward(res.loss)
                batch_loss += res.loss.item()
            grads = {
                name: (t.grad if t.grad is not None else np.zeros_like(t.values)) / len(batch)
                for name, t in params.items()
            }
            adam_step(params, grads, st)
            model.enc.embedding.values[0] = 0.0  # PAD row stays frozen
            losses.append(batch_loss / len(batch))
        record = {"epoch": epoch, "train_loss": float(np.mean(losses)),
                  "lr": st.lr(), "rejected_steps": st.rejected}
        if eval_val and val_idx:
            report, _ = evaluate(model, ds, val_idx)
            record["val"] = report.to_dict()
        history.append(record)
        if log is not None:
            log(record)
    return model, history


# ---------------------------------------------------------------------------
# evaluation


def evaluate(model: Model, ds: D.DialogDataset,
             dialog_indices: Optional[Sequence[int]] = None
             ) -> tuple[MetricsReport, dict[int, MetricsReport]]:
    """Metrics over the given dialogs plus a per-round breakdown."""
    if dialog_indices is None:
        dialog_indices = range(len(ds.dialogs))
    ranks = []
    rels = []
    by_round: dict[int, list[tuple[int, Optional[list[float]]]]] = {}
    for di in dialog_indices:
        for ri in range(len(ds.dialogs[di].rounds)):
            view = D.model_view(ds, di, ri)
            res = model.forward(view)
            rel = None
            round_rel = ds.dialogs[di].rounds[ri].relevance
            if round_rel is not None:
                order = np.argsort(-res.scores, kind="stable")
                rel = [round_rel[j] for j in order]
            ranks.append(res.rank)
            rels.append(rel)
            by_round.setdefault(ri + 1, []).append((res.rank, rel))
    report = compute_metrics(ranks, rels)
    per_round = {
        t: compute_metrics([r for r, _ in items], [rel for _, rel in items])
        for t, items in sorted(by_round.items())
    }
    return report, per_round


def structure_auc(model: Model, ds: D.DialogDataset,
                  dialog_indices: Optional[Sequence[int]] = None,
                  permute_labels_rng: Optional[np.random.Generator] = None
                  ) -> tuple[float, int]:
    """Mean AUC of the query node's incoming normalized weights against
    the planted dependencies, over rounds where both classes exist.

    ``permute_labels_rng`` shuffles the labels to sample the null."""
    if dialog_indices is None:
        dialog_indices = range(len(ds.dialogs))
    aucs = []
    for di in dialog_indices:
        d = ds.dialogs[di]
        for ri in range(len(d.rounds)):
            deps = d.rounds[ri].planted_deps
            if deps is None:
                continue
            view = D.model_view(ds, di, ri)
            res = model.forward(view)
            g = res.graph
            if g.norm is None:
                continue
            q = g.query_index
            weights = [float(g.norm[q].values[k]) for k, _ in enumerate(g.senders(q))]
            labels = [1 if j in set(deps) else 0 for j in g.senders(q)]
            if permute_labels_rng is not None:
                labels = list(permute_labels_rng.permutation(labels))
            auc = ranking_auc(weights, labels)
            if auc is not None:
                aucs.append(auc)
    if not aucs:
        return float("nan"), 0
    return float(np.mean(aucs)), len(aucs)


# ---------------------------------------------------------------------------
# ablation harness


VARIANTS = ("full", "const_graph", "no_iter")


def run_ablation(ds: D.DialogDataset, cfg: RunConfig,
                 variants: Sequence[str] = VARIANTS,
                 seeds: Sequence[int] = (0,),
                 eval_count: Optional[int] = None,
                 log=None) -> dict[str, dict[int, MetricsReport]]:
    """Train each variant from the same seed and data; evaluate on the
    held-out tail of the dataset (last ``eval_count`` dialogs)."""
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown ablation variant {v!r}")
    n = len(ds.dialogs)
    if eval_count is None:
        eval_count = max(1, n // 10)
    train_ds = D.DialogDataset(ds.dialogs[:n - eval_count], mode=ds.mode)
    eval_idx = list(range(n - eval_count, n))
    results: dict[str, dict[int, MetricsReport]] = {}
    for variant in variants:
        results[variant] = {}
        for seed in seeds:
            run_cfg = RunConfig(**{**cfg.to_dict(), "variant": variant, "seed": seed})
            model, _ = train(train_ds, run_cfg, eval_val=False)
            report, _ = evaluate(model, ds, eval_idx)
            results[variant][seed] = report
            if log is not None:
                log({"variant": variant, "seed": seed, **report.to_dict()})
    return results


def ablation_table(results: dict[str, dict[int, MetricsReport]]) -> str:
    """Aligned plain-text table, one row per (variant, seed) plus means."""
    cols = ("variant", "seed", "mrr", "r_at_1", "r_at_5", "r_at_10",
            "mean_rank", "ndcg")
    rows = []
    for variant, by_seed in results.items():
        for seed, rep in sorted(by_seed.items()):
            rows.append((variant, str(seed), f"{rep.mrr:.4f}", f"{rep.r_at_1:.4f}",
                         f"{rep.r_at_5:.4f}", f"{rep.r_at_10:.4f}",
                         f"{rep.mean_rank:.4f}", f"{rep.ndcg:.4f}"))
        mrr = np.mean([r.mrr for r in by_seed.values()])
        rows.append((variant, "mean", f"{mrr:.4f}", "", "", "", "", ""))
    widths = [max(len(c), max((len(r[i]) for r in rows), default=0))
              for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# checkpoint round trip

_CONFIG_INT_KEYS = ("dim", "embed_dim", "fc_dim", "outer_iters", "inner_steps",
                    "batch_size", "epochs", "seed", "k_options")
_VARIANT_CODE = {"full": 0, "const_graph": 1, "no_iter": 2}
_MODE_CODE = {"visdial": 0, "visdialq": 1}


def model_to_tensors(model: Model) -> dict[str, np.ndarray]:
    out = {name: t.values for name, t in model.params().items()}
    for key in _CONFIG_INT_KEYS:
        out[f"config.{key}"] = np.array(float(getattr(model.cfg, key)))
    out["config.lr_base"] = np.array(model.cfg.lr_base)
    out["config.lr_floor"] = np.array(model.cfg.lr_floor)
    out["config.variant"] = np.array(float(_VARIANT_CODE[model.cfg.variant]))
    out["config.mode"] = np.array(float(_MODE_CODE[model.cfg.mode]))
    return out


def model_from_tensors(vocab_tokens: list[str],
                       tensors: dict[str, np.ndarray]) -> Model:
    from .checkpoint import CheckpointError

    cfg_kwargs = {key: int(tensors[f"config.{key}"]) for key in _CONFIG_INT_KEYS}
    cfg_kwargs["lr_base"] = float(tensors["config.lr_base"])
    cfg_kwargs["lr_floor"] = float(tensors["config.lr_floor"])
    cfg_kwargs["variant"] = {v: k for k, v in _VARIANT_CODE.items()}[
        int(tensors["config.variant"])]
    cfg_kwargs["mode"] = {v: k for k, v in _MODE_CODE.items()}[
        int(tensors["config.mode"])]
    cfg = RunConfig(**cfg_kwargs)

    if vocab_tokens[:2] != ["<pad>", "<unk>"]:
        raise CheckpointError("vocabulary is missing reserved tokens")
    vocab = Vocabulary(vocab_tokens[2:])
    ctx_dim = 0
    if "encoder.fuse.w" in tensors:
        ctx_dim = tensors["encoder.fuse.w"].shape[1] - cfg.dim
    model = Model.init(cfg, vocab, np.random.default_rng(0), ctx_dim=ctx_dim)
    params = model.params()
    expected = set(params) | {k for k in tensors if k.startswith("config.")}
    unknown = set(tensors) - expected
    if unknown:
        raise CheckpointError(f"unknown tensor names in checkpoint: {sorted(unknown)}")
    missing = set(params) - set(tensors)
    if missing:
        raise CheckpointError(f"checkpoint missing tensors: {sorted(missing)}")
    for name, t in params.items():
        if tensors[name].shape != t.values.shape:
            raise CheckpointError(f"tensor {name} has shape {tensors[name].shape}, "
                                  f"expected {t.values.shape}")
        t.values = tensors[name].astype(np.float64).copy()
    return model
