"""Dialog dataset schema, loader, and a synthetic benchmark generator.

The synthetic generator plants dependency structure: each round's
question names the entities of a random subset of earlier nodes, and
the correct answer is the (index-ordered) list of those nodes' attribute
tokens.  Answering therefore requires aggregating exactly the planted
dependencies, which makes structure inference measurable.
"""

from __future__ import annotations

import gzip
import json
from dataclasses import dataclass, field
from itertools import combinations, product
from typing import Optional

import numpy as np


class DatasetError(ValueError):
    pass


@dataclass
class DialogRound:
    question: str
    answer: str
    options: list[str]
    gt_index: int
    relevance: Optional[list[float]] = None
    planted_deps: Optional[list[int]] = None


@dataclass
class Dialog:
    caption: str
    rounds: list[DialogRound]
    context_feature: Optional[list[float]] = None


@dataclass
class DialogDataset:
    dialogs: list[Dialog]
    mode: str = "visdial"   # or "visdialq" after to_visdialq

    def __len__(self) -> int:
        return len(self.dialogs)


@dataclass
class RoundView:
    """What the model is allowed to see: no planted deps, no relevance."""

    caption: str
    history: list[tuple[str, str]]   # (question, answer) of earlier rounds
    question: str
    options: list[str]
    gt_index: int
    context_feature: Optional[list[float]] = None


def model_view(ds: DialogDataset, dialog_idx: int, round_idx: int) -> RoundView:
    d = ds.dialogs[dialog_idx]
    r = d.rounds[round_idx]
    if ds.mode == "visdialq":
        # in the next-question task every given QA pair is history,
        # including the current round's own pair
        history = [(d.rounds[k].question, "") for k in range(round_idx + 1)]
        question = ""
    else:
        history = [(d.rounds[k].question, d.rounds[k].answer) for k in range(round_idx)]
        question = r.question
    return RoundView(
        caption=d.caption,
        history=history,
        question=question,
        options=list(r.options),
        gt_index=r.gt_index,
        context_feature=d.context_feature,
    )


def validate(ds: DialogDataset) -> None:
    for di, d in enumerate(ds.dialogs):
        if not isinstance(d.caption, str):
            raise DatasetError(f"dialog {di}: caption must be a string")
        for ri, r in enumerate(d.rounds):
            where = f"dialog {di} round {ri}"
            k = len(r.options)
            if k < 1:
                raise DatasetError(f"{where}: field options is empty")
            if not 0 <= r.gt_index < k:
                raise DatasetError(f"{where}: field gt_index={r.gt_index} out of range "
                                   f"for {k} options")
            if r.options[r.gt_index] != r.answer:
                raise DatasetError(f"{where}: field options[gt_index] does not equal answer")
            if r.relevance is not None:
                if len(r.relevance) != k:
                    raise DatasetError(f"{where}: field relevance has length "
                                       f"{len(r.relevance)}, expected {k}")
                for v in r.relevance:
                    if not 0.0 <= v <= 1.0:
                        raise DatasetError(f"{where}: field relevance entry {v} outside [0,1]")
            if r.planted_deps is not None:
                # node indices: 0 = caption, j = round j (1-based)
                for dep in r.planted_deps:
                    if not 0 <= dep <= ri:
                        raise DatasetError(f"{where}: field planted_deps index {dep} "
                                           f"outside this round's node range")


def to_dict(ds: DialogDataset) -> dict:
    return {
        "mode": ds.mode,
        "dialogs": [
            {
                "caption": d.caption,
                "context_feature": d.context_feature,
                "rounds": [
                    {
                        "question": r.question,
                        "answer": r.answer,
                        "options": r.options,
                        "gt_index": r.gt_index,
                        "relevance": r.relevance,
                        "planted_deps": r.planted_deps,
                    }
                    for r in d.rounds
                ],
            }
            for d in ds.dialogs
        ],
    }


def from_dict(doc: dict) -> DialogDataset:
    if "dialogs" not in doc:
        raise DatasetError("missing top-level field dialogs")
    dialogs = []
    for di, dd in enumerate(doc["dialogs"]):
        rounds = []
        for ri, rd in enumerate(dd.get("rounds", [])):
            for key in ("question", "answer", "options", "gt_index"):
                if key not in rd:
                    raise DatasetError(f"dialog {di} round {ri}: missing field {key}")
            rounds.append(DialogRound(
                question=rd["question"],
                answer=rd["answer"],
                options=list(rd["options"]),
                gt_index=int(rd["gt_index"]),
                relevance=rd.get("relevance"),
                planted_deps=rd.get("planted_deps"),
            ))
        if "caption" not in dd:
            raise DatasetError(f"dialog {di}: missing field caption")
        dialogs.append(Dialog(
            caption=dd["caption"],
            rounds=rounds,
            context_feature=dd.get("context_feature"),
        ))
    ds = DialogDataset(dialogs, mode=doc.get("mode", "visdial"))
    validate(ds)
    return ds


def save_dataset(ds: DialogDataset, path: str) -> None:
    text = json.dumps(to_dict(ds), indent=1)
    if path.endswith(".gz"):
        with gzip.open(path, "wt", encoding="utf-8") as f:
            f.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def load_dataset(path: str) -> DialogDataset:
    if path.endswith(".gz"):
        with gzip.open(path, "rt", encoding="utf-8") as f:
            doc = json.load(f)
    else:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    return from_dict(doc)


# ---------------------------------------------------------------------------
# synthetic benchmark with planted structure


@dataclass
class SyntheticSpec:
    n_dialogs: int = 100
    n_rounds: int = 3
    n_entities: int = 40
    n_attributes: int = 25
    dep_prob: float = 0.5
    k_options: int = 20
    seed: int = 0
    # when set, each round depends on a uniform-size subset (1..max_deps)
    # of the earlier nodes instead of independent dep_prob coin flips;
    # small dependency sets over long histories require selective
    # attention rather than mixing everything
    max_deps: Optional[int] = None
    # when set (0 < locality < 1), dependency subsets are drawn with
    # probability proportional to locality**distance from the current
    # round instead of uniformly: references mostly point at recent
    # turns, the way coreference behaves in real dialogs
    locality: Optional[float] = None


def _letters(i: int) -> str:
    """Base-26 letter rendering so each name stays a single token."""
    s = ""
    i = int(i)
    while True:
        s = chr(ord("a") + i % 26) + s
        i //= 26
        if i == 0:
            return s


def _entity(i: int) -> str:
    return f"ent{_letters(i)}"


def _attribute(i: int) -> str:
    return f"attr{_letters(i)}"


def _turn_tag(node: int) -> str:
    """Per-node turn marker token; transcripts carry turn identity, and
    the marker is what lets a link function express position-dependent
    weighting (the weighting itself still has to be learned)."""
    return f"t{_letters(node)}"


def answer_for_deps(deps: list[int], attrs: list[int]) -> str:
    """The generator's answer function: attribute tokens of the planted
    dependencies, in node-index order."""
    return " ".join(_attribute(attrs[d]) for d in sorted(deps))


def _with_fact(prefix: str, fact: str) -> str:
    """Answers carry the round's own fact as a shared suffix.  Every
    option of the round gets the same suffix, so it never discriminates;
    it makes the history node text end with the node's own identity,
    which is what later rounds' link weights must match against."""
    return f"{prefix} ; {fact}"


def gen_synthetic(spec: SyntheticSpec) -> DialogDataset:
    rng = np.random.default_rng(spec.seed)
    dialogs = []
    for _ in range(spec.n_dialogs):
        ents = rng.choice(spec.n_entities, size=spec.n_rounds + 1, replace=False)
        attrs = [int(rng.integers(spec.n_attributes)) for _ in range(spec.n_rounds + 1)]
        # facts are telegraphic "<attr> <ent>" pairs ending on the entity
        # token: a recurrent encoder's final state weights trailing tokens
        # most, the entity is what later rounds' referrals must be matched
        # against, and every filler word dilutes the token-overlap signal
        # that link-weight learning bootstraps from
        caption = f"{_attribute(attrs[0])} {_entity(ents[0])} {_turn_tag(0)}"
        rounds = []
        for k in range(1, spec.n_rounds + 1):
            if spec.max_deps is not None:
                size = int(rng.integers(1, min(spec.max_deps, k) + 1))
                if spec.locality is not None:
                    if not 0.0 < spec.locality < 1.0:
                        raise DatasetError("locality must be in (0, 1)")
                    p = spec.locality ** np.arange(k, 0, -1, dtype=float)
                    p /= p.sum()
                else:
                    p = None
                deps = sorted(int(i)
                              for i in rng.choice(k, size=size, replace=False, p=p))
            else:
                deps = [d for d in range(k) if rng.random() < spec.dep_prob]
                if not deps:
                    deps = [0]
            referred = " ".join(_entity(ents[d]) for d in sorted(deps))
            # the question is the bare referral plus the round's turn
            # marker; the round's own fact rides on the answer as a shared
            # suffix (see _with_fact), carrying its entity and turn marker
            question = f"{referred} {_turn_tag(k)}"
            fact = f"{_attribute(attrs[k])} {_entity(ents[k])} {_turn_tag(k)}"
            answer = _with_fact(answer_for_deps(deps, attrs), fact)
            # hard distractors first: readouts of the *wrong* dependency
            # subsets, indistinguishable without knowing the structure
            if spec.n_attributes ** len(deps) < spec.k_options:
                raise DatasetError("k_options too large for the attribute space")
            options = {answer}
            alts = list(combinations(range(k), len(deps)))
            rng.shuffle(alts)
            for alt in alts:
                if len(options) >= spec.k_options:
                    break
                options.add(_with_fact(answer_for_deps(list(alt), attrs), fact))
            # pad with attribute tuples drawn from the dialog's own
            # attributes: an option whose tokens all occur in the history
            # cannot be ruled out by bag-of-history knowledge alone, so
            # ranking requires knowing which node carries which attribute
            pool = sorted(set(attrs[:k + 1]))
            if len(pool) ** len(deps) <= 4 * spec.k_options:
                in_dialog = [" ".join(_attribute(a) for a in tup)
                             for tup in product(pool, repeat=len(deps))]
                rng.shuffle(in_dialog)
            else:
                in_dialog = [" ".join(_attribute(int(a))
                                      for a in rng.choice(pool, size=len(deps)))
                             for _ in range(4 * spec.k_options)]
            for cand in in_dialog:
                if len(options) >= spec.k_options:
                    break
                options.add(_with_fact(cand, fact))
            # only when the in-dialog pool is exhausted, fall back to
            # random attributes
            while len(options) < spec.k_options:
                cand = " ".join(
                    _attribute(int(rng.integers(spec.n_attributes)))
                    for _ in range(len(deps)))
                options.add(_with_fact(cand, fact))
            opt_list = sorted(options - {answer})
            order = rng.permutation(spec.k_options)
            slots: list[str] = [""] * spec.k_options
            gt_index = int(order[0])
            slots[gt_index] = answer
            for pos, opt in zip(order[1:], opt_list):
                slots[int(pos)] = opt
            rounds.append(DialogRound(
                question=question,
                answer=answer,
                options=slots,
                gt_index=gt_index,
                planted_deps=sorted(deps),
            ))
        dialogs.append(Dialog(caption=caption, rounds=rounds))
    ds = DialogDataset(dialogs)
    validate(ds)
    return ds


# ---------------------------------------------------------------------------
# oracles over the synthetic data (evaluation-side only)


def _node_attr_token(d: Dialog, node: int) -> str:
    # the caption and every answer end with "... attrY entX tZ"
    text = d.caption if node == 0 else d.rounds[node - 1].answer
    return text.split()[-3]


def oracle_full_ranks(ds: DialogDataset) -> list[int]:
    """Reads planted deps and reapplies the answer function; rank is 1
    everywhere by construction."""
    ranks = []
    for d in ds.dialogs:
        for r in d.rounds:
            prefix = " ".join(_node_attr_token(d, dep) for dep in sorted(r.planted_deps))
            fact = r.answer.split(" ; ", 1)[1]
            answer = _with_fact(prefix, fact)
            scores = np.array([1.0 if o == answer else 0.0 for o in r.options])
            from .gnn import rank_of
            ranks.append(rank_of(scores, r.gt_index))
    return ranks


def oracle_history_blind_ranks(ds: DialogDataset, seed: int = 0) -> list[int]:
    """Sees only the caption and the current question: it can pin down the
    caption's attribute but must guess any other dependency."""
    from .gnn import rank_of
    rng = np.random.default_rng(seed)
    ranks = []
    for d in ds.dialogs:
        cap_attr = _node_attr_token(d, 0)
        for r in d.rounds:
            deps = sorted(r.planted_deps)
            known = {pos: cap_attr for pos, dep in enumerate(deps) if dep == 0}
            scores = np.zeros(len(r.options))
            for oi, opt in enumerate(r.options):
                toks = opt.split()
                consistent = all(pos < len(toks) and toks[pos] == attr
                                 for pos, attr in known.items())
                scores[oi] = (1.0 if consistent else 0.0) + rng.uniform(0, 1e-6)
            ranks.append(rank_of(scores, r.gt_index))
    return ranks


# ---------------------------------------------------------------------------
# VisDial-Q style relabeling: predict the next question


def to_visdialq(ds: DialogDataset, n_candidates: int = 20,
                seed: int = 0) -> tuple[DialogDataset, int]:
    """Re-label: given rounds 1..t, the target is the question of round
    t+1.  A dialog with R rounds yields R-1 examples; dialogs with fewer
    than 2 rounds are skipped (count returned)."""
    rng = np.random.default_rng(seed)
    all_questions = sorted({r.question for d in ds.dialogs for r in d.rounds})
    skipped = 0
    dialogs = []
    for d in ds.dialogs:
        if len(d.rounds) < 2:
            skipped += 1
            continue
        rounds = []
        for k in range(len(d.rounds) - 1):
            target = d.rounds[k + 1].question
            pool = [q for q in all_questions if q != target]
            n_dis = min(n_candidates - 1, len(pool))
            dis = list(rng.choice(len(pool), size=n_dis, replace=False))
            options = [target] + [pool[i] for i in dis]
            order = rng.permutation(len(options))
            slots = [options[i] for i in np.argsort(order)]
            gt_index = int(np.argsort(order).tolist().index(0))
            # history text for this round: the full QA pair, composed
            composed = f"{d.rounds[k].question} | {d.rounds[k].answer}"
            rounds.append(DialogRound(
                question=composed,
                answer=target,
                options=slots,
                gt_index=gt_index,
            ))
        dialogs.append(Dialog(caption=d.caption, rounds=rounds,
                              context_feature=d.context_feature))
    out = DialogDataset(dialogs, mode="visdialq")
    validate(out)
    return out, skipped
