"""Training loops: seeded sessions, early stopping, metric histories.

Classifiers train with cross-entropy (Adam, learning rate 1e-4) in
batches of 30 graphs, reshuffled every epoch with the session seed.
Segmenters train at learning rate 1e-3, first on binary cross-entropy
and then, once that converges, continue on focal loss to dig out the
hard negatives.  Convergence means no test-metric improvement for 20
consecutive epochs (300 epochs cap); the parameters from the best test
epoch are kept.  A non-finite loss aborts with TrainingDivergedError.
"""

from __future__ import annotations

import csv
import random
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import datagen, gnnmodels, graphenc, lang, metrics

CLASSIFIER_LR = 1e-4
SEGMENTER_LR = 1e-3
RECURRENT_LR = 1e-3
BATCH_SIZE = 30
MAX_EPOCHS = 300
PATIENCE = 20
FOCAL_GAMMA = 2.0
FOCAL_ALPHA = 0.25

GRAPH_KINDS = ("gcn-clf", "gat-clf", "gcn-seg", "gat-seg")
RECURRENT_KINDS = ("rnn", "gru")


class TrainingDivergedError(Exception):
    pass


@dataclass
class EpochStats:
    epoch: int
    phase: str
    train_loss: float
    test_score: float
    seconds: float


@dataclass
class SessionResult:
    seed: int
    model: object
    history: list[EpochStats]
    best_score: float


def encode_graphs(records, vocab) -> list[graphenc.FeatureGraph]:
    return [graphenc.ast_to_graph(lang.parse(r.source), vocab) for r in records]


def encode_sequences(records, line_vocab) -> list[np.ndarray]:
    return [graphenc.lines_to_indices(lang.parse(r.source), line_vocab) for r in records]


def _batches(n, batch_size, rng):
    idx = list(range(n))
    rng.shuffle(idx)
    return [idx[i : i + batch_size] for i in range(0, n, batch_size)]


def classifier_scores(model, graphs, batch_size=BATCH_SIZE) -> np.ndarray:
    """Class probabilities, one row per graph."""
    rows = []
    for i in range(0, len(graphs), batch_size):
        chunk = graphenc.batch(graphs[i : i + batch_size])
        rows.append(model.forward(chunk).values)
    return np.vstack(rows)


def recurrent_scores(model, sequences, batch_size=BATCH_SIZE) -> np.ndarray:
    rows = []
    for i in range(0, len(sequences), batch_size):
        rows.append(model.forward_sequences(sequences[i : i + batch_size]).values)
    return np.vstack(rows)


def segmenter_confidences(model, graphs) -> list[np.ndarray]:
    return [model.forward(graphenc.batch([g])).values for g in graphs]


def test_roc_auc(scores, labels) -> float:
    return metrics.roc(scores[:, 1], labels, positive_class=1).area


def test_mean_dice(model, graphs, masks) -> float:
    vals = []
    for g, truth in zip(graphs, masks):
        conf = model.forward(graphenc.batch([g])).values
        vals.append(metrics.seg_scores((conf >= 0.5).astype(int), truth).dice)
    return float(np.mean(vals))


def _snapshot(params):
    return {k: t.values.copy() for k, t in params.items()}


def _restore(params, snap):
    for k, t in params.items():
        t.values = snap[k].copy()


def _check_finite(loss_value):
    if not np.isfinite(loss_value):
        raise TrainingDivergedError(f"non-finite training loss: {loss_value}")


def train_classifier(
    kind: str,
    train_records,
    test_records,
    vocab: graphenc.Vocabulary,
    seed: int = 0,
    learning_rate: float = CLASSIFIER_LR,
    batch_size: int = BATCH_SIZE,
    max_epochs: int = MAX_EPOCHS,
    patience: int = PATIENCE,
    hidden_dim=None,
) -> SessionResult:
    """One seeded session of a graph termination classifier."""
    assert kind in ("gcn-clf", "gat-clf")
    train_graphs = encode_graphs(train_records, vocab)
    test_graphs = encode_graphs(test_records, vocab)
    y_train = np.array([r.graph_label for r in train_records], dtype=np.float64)
    y_test = np.array([r.graph_label for r in test_records], dtype=np.int64)
    model = gnnmodels.build_model(kind, vocab.size, hidden_dim=hidden_dim, seed=seed)
    params = model.parameters()
    state = ad.AdamState(params, learning_rate)
    rng = random.Random(seed)
    history: list[EpochStats] = []
    best = -1.0
    best_snap = _snapshot(params)
    since_best = 0
    t0 = time.time()
    for epoch in range(max_epochs):
        losses = []
        for batch_idx in _batches(len(train_graphs), batch_size, rng):
            chunk = graphenc.batch([train_graphs[i] for i in batch_idx])
            probs = model.forward(chunk)
            loss = ad.cross_entropy(y_train[batch_idx], ad.select_column(probs, 1))
            _check_finite(float(loss.values))
            losses.append(float(loss.values))
            ad.zero_grads(params)
            ad.backward(loss)
            ad.apply_grads(params, state)
        score = test_roc_auc(classifier_scores(model, test_graphs, batch_size), y_test)
        history.append(EpochStats(epoch, "ce", float(np.mean(losses)), score, time.time() - t0))
        if score > best:
            best = score
            best_snap = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    _restore(params, best_snap)
    return SessionResult(seed=seed, model=model, history=history, best_score=best)


def train_recurrent(
    kind: str,
    train_records,
    test_records,
    line_vocab: graphenc.Vocabulary,
    seed: int = 0,
    learning_rate: float = RECURRENT_LR,
    batch_size: int = BATCH_SIZE,
    max_epochs: int = MAX_EPOCHS,
    patience: int = PATIENCE,
    hidden_dim=None,
) -> SessionResult:
    """One seeded session of an RNN/GRU baseline on instruction sequences."""
    assert kind in RECURRENT_KINDS
    train_seqs = encode_sequences(train_records, line_vocab)
    test_seqs = encode_sequences(test_records, line_vocab)
    y_train = np.array([r.graph_label for r in train_records], dtype=np.float64)
    y_test = np.array([r.graph_label for r in test_records], dtype=np.int64)
    model = gnnmodels.build_model(kind, line_vocab.size, hidden_dim=hidden_dim, seed=seed)
    params = model.parameters()
    state = ad.AdamState(params, learning_rate)
    rng = random.Random(seed)
    history: list[EpochStats] = []
    best = -1.0
    best_snap = _snapshot(params)
    since_best = 0
    t0 = time.time()
    for epoch in range(max_epochs):
        losses = []
        for batch_idx in _batches(len(train_seqs), batch_size, rng):
            probs = model.forward_sequences([train_seqs[i] for i in batch_idx])
            loss = ad.cross_entropy(y_train[batch_idx], ad.select_column(probs, 1))
            _check_finite(float(loss.values))
            losses.append(float(loss.values))
            ad.zero_grads(params)
            ad.backward(loss)
            ad.apply_grads(params, state)
        score = test_roc_auc(recurrent_scores(model, test_seqs, batch_size), y_test)
        history.append(EpochStats(epoch, "ce", float(np.mean(losses)), score, time.time() - t0))
        if score > best:
            best = score
            best_snap = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                break
    _restore(params, best_snap)
    return SessionResult(seed=seed, model=model, history=history, best_score=best)


def _mask_vector(record, n_nodes) -> np.ndarray:
    mask = np.zeros(n_nodes, dtype=np.int64)
    for node_id, v in record.seg_mask.items():
        mask[node_id] = v
    return mask


def train_segmenter(
    kind: str,
    train_records,
    test_records,
    vocab: graphenc.Vocabulary,
    seed: int = 0,
    learning_rate: float = SEGMENTER_LR,
    batch_size: int = BATCH_SIZE,
    max_epochs: int = MAX_EPOCHS,
    patience: int = PATIENCE,
    focal_gamma: float = FOCAL_GAMMA,
    focal_alpha: float = FOCAL_ALPHA,
    hidden_dim=None,
) -> SessionResult:
    """One seeded session of a nontermination-cause segmenter.

    Phase one trains on cross-entropy; when the test Dice stops improving
    the loss switches to focal and training continues until it converges
    again (or the epoch cap).
    """
    assert kind in ("gcn-seg", "gat-seg")
    train_graphs = encode_graphs(train_records, vocab)
    test_graphs = encode_graphs(test_records, vocab)
    train_masks = [_mask_vector(r, g.n_nodes) for r, g in zip(train_records, train_graphs)]
    test_masks = [_mask_vector(r, g.n_nodes) for r, g in zip(test_records, test_graphs)]
    model = gnnmodels.build_model(kind, vocab.size, hidden_dim=hidden_dim, seed=seed)
    params = model.parameters()
    state = ad.AdamState(params, learning_rate)
    rng = random.Random(seed)
    history: list[EpochStats] = []
    best = -1.0
    best_snap = _snapshot(params)
    since_best = 0
    phase = "ce"
    t0 = time.time()
    for epoch in range(max_epochs):
        losses = []
        for batch_idx in _batches(len(train_graphs), batch_size, rng):
            chunk = graphenc.batch([train_graphs[i] for i in batch_idx])
            y = np.concatenate([train_masks[i] for i in batch_idx]).astype(np.float64)
            conf = model.forward(chunk)
            if phase == "ce":
                loss = ad.cross_entropy(y, conf)
            else:
                loss = ad.focal_loss(y, conf, gamma=focal_gamma, alpha=focal_alpha)
            _check_finite(float(loss.values))
            losses.append(float(loss.values))
            ad.zero_grads(params)
            ad.backward(loss)
            ad.apply_grads(params, state)
        score = test_mean_dice(model, test_graphs, test_masks)
        history.append(EpochStats(epoch, phase, float(np.mean(losses)), score, time.time() - t0))
        if score > best:
            best = score
            best_snap = _snapshot(params)
            since_best = 0
        else:
            since_best += 1
            if since_best >= patience:
                if phase == "ce":
                    phase = "focal"
                    since_best = 0
                else:
                    break
    _restore(params, best_snap)
    return SessionResult(seed=seed, model=model, history=history, best_score=best)


def train_session(kind, train_records, test_records, vocab, line_vocab, seed, **kwargs) -> SessionResult:
    if kind in ("gcn-clf", "gat-clf"):
        return train_classifier(kind, train_records, test_records, vocab, seed, **kwargs)
    if kind in ("gcn-seg", "gat-seg"):
        return train_segmenter(kind, train_records, test_records, vocab, seed, **kwargs)
    if kind in RECURRENT_KINDS:
        return train_recurrent(kind, train_records, test_records, line_vocab, seed, **kwargs)
    raise ValueError(f"unknown model kind {kind!r}")


def write_history_csv(history: list[EpochStats], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "phase", "train_loss", "test_score", "seconds"])
        for h in history:
            writer.writerow([h.epoch, h.phase, f"{h.train_loss:.8f}", f"{h.test_score:.8f}", f"{h.seconds:.2f}"])


def run_sessions(kind, datadir, out_dir, sessions: int = 10, base_seed: int = 0, **kwargs):
    """Train several seeded sessions and persist models plus metric CSVs."""
    records, vocab, line_vocab, meta = datagen.load_dataset(datadir)
    train_records = [r for r in records if r.split == "train"]
    test_records = [r for r in records if r.split == "test"]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    used_vocab = line_vocab if kind in RECURRENT_KINDS else vocab
    vocab_file = meta["line_vocab_file"] if kind in RECURRENT_KINDS else meta["vocab_file"]
    used_vocab.save(out_dir / vocab_file)
    results = []
    for k in range(sessions):
        seed = base_seed + k
        result = train_session(kind, train_records, test_records, vocab, line_vocab, seed, **kwargs)
        model_path = out_dir / f"model_{kind}_s{k:02d}.tgnn"
        gnnmodels.save_model(
            result.model,
            model_path,
            vocab_file=vocab_file,
            vocab_sha256=used_vocab.sha256(),
            extra={"seed": seed, "epochs": len(result.history), "best_test_score": result.best_score},
        )
        write_history_csv(result.history, out_dir / f"metrics_{kind}_s{k:02d}.csv")
        results.append(result)
    return results


# ---------------------------------------------------------------------------
# Evaluation reports


def eval_classifier_records(model, records, vocab) -> dict:
    graphs = encode_graphs(records, vocab)
    labels = np.array([r.graph_label for r in records], dtype=np.int64)
    scores = classifier_scores(model, graphs)
    return _classification_report(scores[:, 1], labels)


def eval_recurrent_records(model, records, line_vocab) -> dict:
    seqs = encode_sequences(records, line_vocab)
    labels = np.array([r.graph_label for r in records], dtype=np.int64)
    scores = recurrent_scores(model, seqs)
    return _classification_report(scores[:, 1], labels)


def _classification_report(p_class1, labels) -> dict:
    roc0, roc1 = metrics.per_class_reports(p_class1, labels, kind="roc")
    pr0, pr1 = metrics.per_class_reports(p_class1, labels, kind="pr")
    return {
        "roc_auc_nonterminating": roc0.area,
        "roc_auc_terminating": roc1.area,
        "roc_mean_auc": (roc0.area + roc1.area) / 2.0,
        "pr_ap_nonterminating": pr0.area,
        "pr_ap_terminating": pr1.area,
        "pr_map": metrics.mean_average_precision([pr0, pr1]),
    }


def eval_segmenter_records(model, records, vocab) -> dict:
    graphs = encode_graphs(records, vocab)
    masks = [_mask_vector(r, g.n_nodes) for r, g in zip(records, graphs)]
    dice, iou, acc = [], [], []
    for g, truth in zip(graphs, masks):
        conf = model.forward(graphenc.batch([g])).values
        report = metrics.seg_scores((conf >= 0.5).astype(int), truth)
        dice.append(report.dice)
        iou.append(report.iou)
        acc.append(report.node_accuracy)
    return {
        "dice": float(np.mean(dice)),
        "iou": float(np.mean(iou)),
        "node_accuracy": float(np.mean(acc)),
    }
