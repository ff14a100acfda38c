"""Combined prediction, accuracy/gain metrics, and hyperparameter sweeps.

The combined scorer adds the temperature-scaled base probabilities and the
weighted neighbor residual; the label is the argmax (ties toward the lower
class index). Gain decomposes into TPR (base wrong, combined right) minus
FPR (base right, combined wrong) as an identity on integer counts.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from resmem import knn, model, residual
from resmem.datastore import EmbeddingDataset
from resmem.errors import NoFeasiblePoint, ShapeMismatch, TemperatureMismatch
from resmem.parallel import ordered_map
from resmem.residual import HyperParams, SparseResidualStore

_CHUNK = 64  # fixed so results never depend on the thread count


@dataclass(frozen=True)
class Metrics:
    acc_base: float
    acc_resmem: float
    gain: float
    tpr: float
    fpr: float
    n_eval: int
    # integer tallies, present when computed from an evaluation run
    n_base_correct: Optional[int] = None
    n_resmem_correct: Optional[int] = None
    n_tp: Optional[int] = None
    n_fp: Optional[int] = None

    @classmethod
    def from_counts(
        cls, n_base_correct: int, n_resmem_correct: int, n_tp: int, n_fp: int, n_eval: int
    ) -> "Metrics":
        if n_eval < 1:
            raise ShapeMismatch("n_eval must be >= 1")
        n = float(n_eval)
        return cls(
            acc_base=n_base_correct / n,
            acc_resmem=n_resmem_correct / n,
            gain=(n_resmem_correct - n_base_correct) / n,
            tpr=n_tp / n,
            fpr=n_fp / n,
            n_eval=n_eval,
            n_base_correct=n_base_correct,
            n_resmem_correct=n_resmem_correct,
            n_tp=n_tp,
            n_fp=n_fp,
        )

    @classmethod
    def from_rates(cls, acc_base: float, tpr: float, fpr: float, n_eval: int = 0) -> "Metrics":
        """Metrics from published rates; gain is forced to tpr - fpr."""
        gain = tpr - fpr
        return cls(
            acc_base=acc_base,
            acc_resmem=acc_base + gain,
            gain=gain,
            tpr=tpr,
            fpr=fpr,
            n_eval=n_eval,
        )


@dataclass(frozen=True)
class MaxAccuracy:
    """Pick the grid row with the highest combined accuracy."""


@dataclass(frozen=True)
class MaxTprFprCap:
    """Pick the highest-TPR row among rows with FPR strictly below the cap."""

    cap: float = 0.05


SelectionRule = Union[MaxAccuracy, MaxTprFprCap]


@dataclass(frozen=True)
class SweepRow:
    hp: HyperParams
    n_probe: int
    metrics: Metrics


@dataclass(frozen=True)
class SweepResult:
    rows: List[SweepRow]
    selected: int
    rule: SelectionRule

    @property
    def best(self) -> SweepRow:
        return self.rows[self.selected]


def predict_base(p: model.MlpParams, x: np.ndarray, T: float = 1.0):
    """Base probabilities at temperature T and the argmax label."""
    _, logits = model.forward(p, x)
    probs = residual.softmax_temp(logits, T)
    return probs, int(np.argmax(probs))


def _check_temperature(store: SparseResidualStore, hp: HyperParams) -> float:
    if np.float32(hp.temperature) != np.float32(store.temperature):
        raise TemperatureMismatch(
            f"store was built at T={store.temperature}, requested T={hp.temperature}"
        )
    return store.temperature


def predict_resmem(
    p: model.MlpParams,
    index,
    store: SparseResidualStore,
    x: np.ndarray,
    hp: HyperParams,
    n_probe: int = 1,
):
    """Combined scores softmax(logits/T) + residual regression, and the label."""
    T = _check_temperature(store, hp)
    hidden, logits = model.forward(p, x)
    scores = residual.softmax_temp(logits, T) + knn.knn_residual(
        index, store, hidden.astype(np.float32), hp, n_probe
    )
    return scores, int(np.argmax(scores))


def model_outputs(p: model.MlpParams, ds: EmbeddingDataset) -> Tuple[np.ndarray, np.ndarray]:
    """Embeddings (float32) and logits (float64) for every dataset row."""
    hidden, logits = model.forward_batch(p, ds.embeddings)
    return hidden.astype(np.float32), logits


def make_store(
    p: model.MlpParams, ds: EmbeddingDataset, T: float, m: Optional[int] = None
) -> SparseResidualStore:
    """Residual store for a labeled dataset, logits taken from the model."""
    if ds.labels is None:
        raise ShapeMismatch("residual store requires labels")
    _, logits = model.forward_batch(p, ds.embeddings)
    dense = residual.dense_residuals(logits, ds.labels, T)
    return residual.build_store(dense, residual.default_top_m(ds.c) if m is None else m, T)


def evaluate(
    p: model.MlpParams,
    index,
    store: SparseResidualStore,
    eval_set: EmbeddingDataset,
    hp: HyperParams,
    n_probe: int = 1,
    threads: int = 1,
) -> Metrics:
    """Base vs combined accuracy on eval_set, with the TPR/FPR tallies."""
    if eval_set.labels is None:
        raise ShapeMismatch("evaluation requires labels")
    T = _check_temperature(store, hp)
    emb, logits = model_outputs(p, eval_set)
    labels = eval_set.labels.astype(np.int64)
    base_pred = np.argmax(logits, axis=1)
    probs = residual.softmax_temp(logits, T)

    def chunk_labels(start: int) -> np.ndarray:
        stop = min(start + _CHUNK, eval_set.n)
        out = np.empty(stop - start, dtype=np.int64)
        for i in range(start, stop):
            r = knn.knn_residual(index, store, emb[i], hp, n_probe)
            out[i - start] = int(np.argmax(probs[i] + r))
        return out

    starts = range(0, eval_set.n, _CHUNK)
    resmem_pred = np.concatenate(ordered_map(chunk_labels, list(starts), threads))

    base_ok = base_pred == labels
    res_ok = resmem_pred == labels
    return Metrics.from_counts(
        n_base_correct=int(base_ok.sum()),
        n_resmem_correct=int(res_ok.sum()),
        n_tp=int((~base_ok & res_ok).sum()),
        n_fp=int((base_ok & ~res_ok).sum()),
        n_eval=eval_set.n,
    )


def _rule_select(rows: List[SweepRow], rule: SelectionRule) -> int:
    def tie_key(i: int) -> Tuple[float, float, float, int]:
        r = rows[i]
        return (r.hp.k, r.hp.sigma, r.hp.temperature, r.n_probe)

    if isinstance(rule, MaxTprFprCap):
        feasible = [i for i, r in enumerate(rows) if r.metrics.fpr < rule.cap]
        if not feasible:
            raise NoFeasiblePoint(f"no grid row has fpr < {rule.cap}")
        best_tpr = max(rows[i].metrics.tpr for i in feasible)
        tied = [i for i in feasible if rows[i].metrics.tpr == best_tpr]
    else:
        best_acc = max(r.metrics.acc_resmem for r in rows)
        tied = [i for i, r in enumerate(rows) if r.metrics.acc_resmem == best_acc]
    return min(tied, key=tie_key)


def sweep(
    p: model.MlpParams,
    train_set: EmbeddingDataset,
    val_set: EmbeddingDataset,
    ks: Sequence[int],
    sigmas: Sequence[float],
    temps: Sequence[float],
    rule: SelectionRule,
    n_probes: Sequence[int] = (1,),
    m: Optional[int] = None,
    threads: int = 1,
) -> SweepResult:
    """Evaluate every (T, k, sigma, n_probe) grid point on the validation set.

    The train-set embeddings and the exact index are built once; only the
    residual store is rebuilt per temperature.
    """
    if not (len(ks) and len(sigmas) and len(temps) and len(n_probes)):
        raise ShapeMismatch("sweep grid must be nonempty")
    train_emb, _ = model_outputs(p, train_set)
    index = knn.build_exact_index(train_emb)
    rows: List[SweepRow] = []
    for T in temps:
        store = make_store(p, train_set, T, m=m)
        for k in ks:
            for sigma in sigmas:
                for n_probe in n_probes:
                    hp = HyperParams(k=k, sigma=sigma, temperature=float(T))
                    metrics = evaluate(p, index, store, val_set, hp, n_probe, threads)
                    rows.append(SweepRow(hp=hp, n_probe=n_probe, metrics=metrics))
    return SweepResult(rows=rows, selected=_rule_select(rows, rule), rule=rule)
