"""Evaluation metrics: RMSE, Pearson CC, and Lin's concordance (CCC).

All correlation-style metrics use population (divide-by-n) moments, the
convention of the continuous affect challenges. ``EvalReport`` carries a
per-sequence breakdown plus a pooled row computed over the concatenation
of all sequences.
"""

import csv
import json
from dataclasses import dataclass

import numpy as np


def _pair(pred, gold):
    pred = np.asarray(pred, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if pred.shape != gold.shape or pred.ndim != 1:
        raise ValueError(
            f"metric inputs must be equal-length vectors, got {pred.shape} "
            f"and {gold.shape}"
        )
    if pred.size == 0:
        raise ValueError("metric inputs must be non-empty")
    return pred, gold


def rmse(pred, gold) -> float:
    pred, gold = _pair(pred, gold)
    return float(np.sqrt(np.mean((pred - gold) ** 2)))


def pearson_cc(pred, gold) -> float:
    pred, gold = _pair(pred, gold)
    if pred.size < 2:
        raise ValueError("pearson_cc requires at least 2 samples")
    sp, sg = pred.std(), gold.std()
    if sp == 0.0 or sg == 0.0:
        raise ValueError("undefined correlation: constant input")
    cov = np.mean((pred - pred.mean()) * (gold - gold.mean()))
    return float(cov / (sp * sg))


def ccc(pred, gold) -> float:
    """Lin's concordance: 2*cov / (var_p + var_g + (mean_p - mean_g)^2)."""
    pred, gold = _pair(pred, gold)
    if pred.size < 2:
        raise ValueError("ccc requires at least 2 samples")
    mp, mg = pred.mean(), gold.mean()
    vp, vg = pred.var(), gold.var()
    denom = vp + vg + (mp - mg) ** 2
    if denom == 0.0:
        raise ValueError("undefined CCC: both inputs constant with equal means")
    cov = np.mean((pred - mp) * (gold - mg))
    return float(2.0 * cov / denom)


@dataclass
class SeqScore:
    sequence_id: str
    n: int
    rmse: float
    cc: float
    ccc: float


@dataclass
class EvalReport:
    per_sequence: list
    pooled: SeqScore

    @property
    def rmse(self) -> float:
        return self.pooled.rmse

    @property
    def cc(self) -> float:
        return self.pooled.cc

    @property
    def ccc(self) -> float:
        return self.pooled.ccc

    @property
    def n(self) -> int:
        return self.pooled.n

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sequence_id", "n", "rmse", "cc", "ccc"])
            for row in self.per_sequence + [self.pooled]:
                writer.writerow(
                    [row.sequence_id, row.n, repr(row.rmse), repr(row.cc), repr(row.ccc)]
                )

    def to_dict(self) -> dict:
        def row(s):
            return {
                "sequence_id": s.sequence_id,
                "n": s.n,
                "rmse": s.rmse,
                "cc": s.cc,
                "ccc": s.ccc,
            }

        return {
            "per_sequence": [row(s) for s in self.per_sequence],
            "pooled": row(self.pooled),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _score(seq_id, pred, gold) -> SeqScore:
    return SeqScore(seq_id, len(pred), rmse(pred, gold), pearson_cc(pred, gold),
                    ccc(pred, gold))


def evaluate_timeline(pred, gold, mask=None, sequence_id="seq") -> EvalReport:
    """Score a single prediction timeline against gold.

    Gap-filled gold frames (mask = 1) count toward the metrics like any
    other frame; the mask is accepted for interface symmetry and length
    checking only.
    """
    pred, gold = _pair(pred, gold)
    if mask is not None and len(mask) != len(pred):
        raise ValueError(
            f"mask length {len(mask)} does not match timeline length {len(pred)}"
        )
    row = _score(sequence_id, pred, gold)
    return EvalReport([row], SeqScore("__pooled__", row.n, row.rmse, row.cc, row.ccc))


def evaluate_sequences(preds_by_seq, golds_by_seq) -> EvalReport:
    """Per-sequence scores plus a pooled score over the concatenation."""
    if set(preds_by_seq) != set(golds_by_seq):
        raise ValueError("prediction and gold sequence ids differ")
    rows = []
    all_pred, all_gold = [], []
    for seq_id in sorted(preds_by_seq):
        p, g = _pair(preds_by_seq[seq_id], golds_by_seq[seq_id])
        rows.append(_score(seq_id, p, g))
        all_pred.append(p)
        all_gold.append(g)
    pooled = _score("__pooled__", np.concatenate(all_pred), np.concatenate(all_gold))
    return EvalReport(rows, pooled)
