"""Report rendering: JSON metrics, delimited per-round tables, figures."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import MetricsReport  # noqa: E402

_ROUND_COLS = ("round", "mrr", "r_at_1", "r_at_5", "r_at_10", "mean_rank",
               "ndcg", "n_examples")


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-report-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def eval_report_json(report: MetricsReport,
                     per_round: dict[int, MetricsReport]) -> str:
    doc = report.to_dict()
    doc["per_round"] = {str(t): r.to_dict() for t, r in per_round.items()}
    return json.dumps(doc, indent=2)


def per_round_csv(per_round: dict[int, MetricsReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(_ROUND_COLS)
    for t, r in sorted(per_round.items()):
        w.writerow([t, r.mrr, r.r_at_1, r.r_at_5, r.r_at_10, r.mean_rank,
                    r.ndcg, r.n_examples])
    return buf.getvalue()


def render_per_round_figure(per_round: dict[int, MetricsReport], path: str) -> None:
    rounds = sorted(per_round)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rounds, [per_round[t].mrr for t in rounds], "o-", label="MRR")
    ax.plot(rounds, [per_round[t].r_at_1 for t in rounds], "s--", label="R@1")
    ax.plot(rounds, [per_round[t].r_at_5 for t in rounds], "^--", label="R@5")
    ax.set_xlabel("dialog round")
    ax.set_ylabel("metric")
    ax.set_ylim(0, 1)
    ax.set_xticks(rounds)
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def ablation_json(results: dict[str, dict[int, MetricsReport]]) -> str:
    doc = {
        variant: {str(seed): rep.to_dict() for seed, rep in by_seed.items()}
        for variant, by_seed in results.items()
    }
    return json.dumps(doc, indent=2)


def render_ablation_figure(results: dict[str, dict[int, MetricsReport]],
                           path: str) -> None:
    variants = list(results)
    means = [sum(r.mrr for r in results[v].values()) / len(results[v])
             for v in variants]
    fig, ax = plt.subplots(figsize=(6, 4))
    bars = ax.bar(variants, means, color="#2a9d8f")
    for b, m in zip(bars, means):
        ax.text(b.get_x() + b.get_width() / 2, m, f"{m:.4f}",
                ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("MRR (mean over seeds)")
    ax.set_title("Ablation: graph variants")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
