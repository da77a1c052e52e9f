"""Orchestration between dataio, the models, and the metrics.

These are the in-process versions of the CLI workflows: feature
extraction over whole datasets, and timeline evaluation of the two models
with gap filling applied to predictions at face-miss frames through the
same code path used for gold labels.
"""

import csv

import numpy as np

from . import dataio, metrics, models


def extract_timelines(cnn: models.CnnModel, dataset: dataio.SequenceDataset,
                      template: dataio.LandmarkTemplate):
    """One FeatureTimeline per sequence, in sorted sequence order.

    Frames without a detected face get linearly interpolated features and
    a set mask bit.
    """
    timelines = []
    for seq_id in dataset.sequence_ids:
        records = dataset.sequences[seq_id]
        missing = np.array([not r.face_found for r in records])
        labels = np.array([r.valence for r in records])
        dim = cnn.spec.fc_units
        feats = np.zeros((len(records), dim))
        present_frames = [dataio.preprocess_frame(r, template)
                          for r in records if r.face_found]
        if not present_frames:
            raise ValueError(f"sequence {seq_id}: no frames with detected faces")
        feats[~missing] = models.extract_features(cnn, present_frames)
        feats, mask = dataio.fill_gaps_2d(feats, missing)
        timelines.append(dataio.FeatureTimeline(seq_id, feats, labels, mask))
    return timelines


def predict_cnn_timeline(cnn: models.CnnModel, records,
                         template: dataio.LandmarkTemplate) -> np.ndarray:
    """Per-frame CNN predictions; face-miss frames are gap-filled."""
    missing = np.array([not r.face_found for r in records])
    preds = np.zeros(len(records))
    for i, r in enumerate(records):
        if r.face_found:
            preds[i], _, _ = models.cnn_forward(cnn, dataio.preprocess_frame(r, template))
    filled, _ = dataio.fill_gaps(preds, missing)
    return filled


def evaluate_models(cnn: models.CnnModel, rnn: models.RnnModel,
                    dataset: dataio.SequenceDataset,
                    template: dataio.LandmarkTemplate):
    """Full evaluation of both models over a dataset.

    Returns (timeline_rows, cnn_report, rnn_report). Timeline rows are
    (sequence_id, frame_index, gold, pred_cnn, pred_cnn_rnn, interpolated);
    predictions at face_found=0 frames are re-filled by interpolation, the
    identical op used for gold gap filling.
    """
    timelines = extract_timelines(cnn, dataset, template)
    rows = []
    preds_cnn, preds_rnn, golds = {}, {}, {}
    for tl in timelines:
        records = dataset.sequences[tl.sequence_id]
        missing = tl.mask.astype(bool)
        p_cnn = predict_cnn_timeline(cnn, records, template)
        p_rnn = models.predict_timeline(rnn, tl.features)
        p_rnn, _ = dataio.fill_gaps(p_rnn, missing)
        preds_cnn[tl.sequence_id] = p_cnn
        preds_rnn[tl.sequence_id] = p_rnn
        golds[tl.sequence_id] = tl.labels
        for i, r in enumerate(records):
            rows.append((tl.sequence_id, r.frame_index, tl.labels[i],
                         p_cnn[i], p_rnn[i], int(tl.mask[i])))
    report_cnn = metrics.evaluate_sequences(preds_cnn, golds)
    report_rnn = metrics.evaluate_sequences(preds_rnn, golds)
    return rows, report_cnn, report_rnn


def write_timeline_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence_id", "frame_index", "gold", "pred_cnn",
                         "pred_cnn_rnn", "interpolated"])
        for seq_id, idx, gold, p_cnn, p_rnn, interp in rows:
            writer.writerow([seq_id, idx, repr(float(gold)), repr(float(p_cnn)),
                             repr(float(p_rnn)), interp])
