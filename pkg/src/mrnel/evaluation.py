"""Evaluation: micro-F1, baseline and oracle-conditioned decoding,
multi-seed confidence intervals and attention-weight dumps.

In the in-KB setting every scored mention gets exactly one prediction, so
micro precision = recall = F1 = accuracy over scored mentions.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tape
from .model import forward_document, prior_only_predict

__all__ = ["EvalReport", "micro_f1", "evaluate_corpus", "oracle_eval",
           "multi_seed_report", "alpha_histogram", "dump_alpha",
           "dump_beliefs"]


@dataclass
class EvalReport:
    micro_f1: float | None
    mode: str
    scored: int = 0
    correct: int = 0
    skipped: int = 0
    per_document: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({
            "micro_f1": self.micro_f1, "mode": self.mode,
            "scored": self.scored, "correct": self.correct,
            "skipped": self.skipped, "per_document": self.per_document,
        }, sort_keys=True, indent=2)


def micro_f1(predictions, golds):
    """Fraction correct over scored mentions; None when nothing is scored."""
    if len(predictions) != len(golds):
        raise ValueError("predictions/golds length mismatch")
    if not predictions:
        return None
    correct = sum(1 for p, g in zip(predictions, golds) if p == g)
    return correct / len(predictions)


def _tally(report, doc_id, preds, golds):
    correct = sum(1 for p, g in zip(preds, golds) if p == g)
    report.scored += len(preds)
    report.correct += correct
    report.per_document[doc_id] = (correct / len(preds)) if preds else None


def evaluate_corpus(corpus, params, mode="lbp"):
    """Micro-F1 over all linkable mentions.

    mode: "lbp", "exact" or "prior-only"; unlinkable mentions are excluded
    from scoring, empty-candidate mentions additionally counted as skipped.
    """
    report = EvalReport(micro_f1=None, mode=mode)
    for doc in corpus:
        if mode == "prior-only":
            preds_all = prior_only_predict(doc)
            pairs = [(p, m.gold) for p, m in zip(preds_all, doc.mentions)
                     if not m.unlinkable]
            report.skipped += sum(1 for m in doc.mentions if not m.candidates)
        else:
            tape = Tape(recording=False)
            result = forward_document(tape, doc, params, inference=mode)
            preds_all = result.predictions()
            pairs = [(p, m.gold) for p, m in zip(preds_all, result.mentions)
                     if not m.unlinkable]
            report.skipped += result.skipped
        preds = [p for p, _ in pairs]
        golds = [g for _, g in pairs]
        _tally(report, doc.doc_id, preds, golds)
    if report.scored:
        report.micro_f1 = report.correct / report.scored
    return report


def _clamped_document(doc, keep_idx):
    """Collapse every mention except keep_idx to its gold candidate."""
    clamped = copy.deepcopy(doc)
    for j, m in enumerate(clamped.mentions):
        if j == keep_idx or m.unlinkable:
            continue
        gi = m.gold_index()
        m.candidates = [m.candidates[gi]]
    return clamped


def oracle_eval(corpus, params, mode="lbp"):
    """Oracle-conditioned evaluation.

    For each linkable mention the other mentions' candidate sets are
    collapsed to their gold entities, inference reruns, and only that
    mention's prediction is scored.
    """
    report = EvalReport(micro_f1=None, mode="oracle")
    for doc in corpus:
        preds, golds = [], []
        for i, mention in enumerate(doc.mentions):
            if mention.unlinkable:
                continue
            clamped = _clamped_document(doc, i)
            tape = Tape(recording=False)
            result = forward_document(tape, clamped, params, inference=mode)
            target = clamped.mentions[i]
            idx = next(ii for ii, m2 in enumerate(result.mentions)
                       if m2 is target)
            preds.append(result.predictions()[idx])
            golds.append(mention.gold)
        report.skipped += sum(1 for m in doc.mentions if not m.candidates)
        _tally(report, doc.doc_id, preds, golds)
    if report.scored:
        report.micro_f1 = report.correct / report.scored
    return report


def multi_seed_report(values):
    """Mean and normal-approximation 95% CI half-width over seed runs."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        raise ValueError("need at least two runs")
    mean = float(values.mean())
    half = float(1.96 * values.std(ddof=1) / np.sqrt(len(values)))
    return mean, half


def _alpha_entries(corpus, params):
    for doc in corpus:
        tape = Tape(recording=False)
        result = forward_document(tape, doc, params)
        a = result.alpha.value
        if a.size == 0:
            continue
        yield doc.doc_id, a


def alpha_histogram(corpus, params, bucket=0.05, threshold=0.25):
    """Bucketed counts of high attention weights per relation.

    Mirrors the alpha-inspection histograms: only weights above the
    threshold are counted. Returns [(k, lo, hi, count)].
    """
    k_count = params.config.num_relations
    n_buckets = int(np.ceil((1.0 + 1e-12) / bucket))
    counts = np.zeros((k_count, n_buckets), dtype=int)
    for _, a in _alpha_entries(corpus, params):
        for k in range(k_count):
            vals = a[..., k].ravel()
            vals = vals[vals > threshold]
            idx = np.minimum((vals / bucket).astype(int), n_buckets - 1)
            np.add.at(counts[k], idx, 1)
    rows = []
    for k in range(k_count):
        for b in range(n_buckets):
            lo = b * bucket
            if lo + bucket <= threshold:
                continue
            rows.append((k, lo, lo + bucket, int(counts[k, b])))
    return rows


def dump_alpha(corpus, params, path):
    """TSV "doc_id, i, j, k, alpha" for attention inspection."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("doc_id\ti\tj\tk\talpha\n")
        for doc_id, a in _alpha_entries(corpus, params):
            n, nj, kk = a.shape
            for i in range(n):
                for j in range(nj):
                    for k in range(kk):
                        fh.write(f"{doc_id}\t{i}\t{j}\t{k}\t{a[i, j, k]:.6g}\n")


def dump_beliefs(corpus, params, path, mode="lbp"):
    """TSV "doc_id, mention_idx, entity, q_hat, rho"."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("doc_id\tmention_idx\tentity\tq_hat\trho\n")
        for doc in corpus:
            tape = Tape(recording=False)
            result = forward_document(tape, doc, params, inference=mode)
            q, rho = result.qhat.value, result.rho.value
            for i in range(len(result.mentions)):
                for c in range(result.mask.shape[1]):
                    if not result.mask[i, c]:
                        continue
                    fh.write(f"{doc.doc_id}\t{i}\t{result.ids[i][c]}"
                             f"\t{q[i, c]:.6g}\t{rho[i, c]:.6g}\n")
