"""Diffable prediction records and attention heatmaps.

Records are versioned plain text with fixed-precision numbers so two
runs can be compared with standard diff tools.  Heatmaps are 8-bit
binary portable graymaps with one pixel per attention cell, scaled per
row: zero mass renders white and the row maximum renders black.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .entailment import LABELS, node_confidences, predict
from .trees import node_phrases

RECORD_VERSION = 1
_FLOAT = "%.9f"


@dataclass
class InspectionRecord:
    predicted: str
    distribution: np.ndarray
    forward_attention: np.ndarray
    reverse_attention: np.ndarray
    final_attention: np.ndarray
    relation_confidences: np.ndarray
    premise_phrases: list
    hypothesis_phrases: list


def build_record(pair, vocab, table, params, use_dual=False, dtype=np.float64):
    run = predict(pair.premise, pair.hypothesis, vocab, table, params,
                  use_dual=use_dual, dtype=dtype)
    return InspectionRecord(
        predicted=run.label,
        distribution=run.distribution,
        forward_attention=run.forward_attention,
        reverse_attention=run.reverse_attention,
        final_attention=run.final_attention,
        relation_confidences=node_confidences(run.relations, params.classifier),
        premise_phrases=node_phrases(pair.premise),
        hypothesis_phrases=node_phrases(pair.hypothesis),
    )


def _matrix_lines(name, matrix):
    rows, cols = matrix.shape
    lines = [f"{name}: {rows}x{cols}"]
    for row in matrix:
        lines.append(" ".join(_FLOAT % x for x in row))
    return lines


def format_record(record):
    """Render one record as versioned, line-oriented text."""
    lines = [f"treentail-inspection {RECORD_VERSION}"]
    lines.append("labels: " + " ".join(LABELS))
    lines.append("predicted: " + record.predicted)
    lines.append("distribution: " + " ".join(_FLOAT % x for x in record.distribution))
    lines.append(f"premise-nodes: {len(record.premise_phrases)}")
    for i, phrase in enumerate(record.premise_phrases):
        lines.append(f"p{i}: {phrase}")
    lines.append(f"hypothesis-nodes: {len(record.hypothesis_phrases)}")
    for i, phrase in enumerate(record.hypothesis_phrases):
        lines.append(f"h{i}: {phrase}")
    lines.extend(_matrix_lines("attention-final", record.final_attention))
    lines.extend(_matrix_lines("attention-forward", record.forward_attention))
    lines.extend(_matrix_lines("attention-reverse", record.reverse_attention))
    lines.extend(_matrix_lines("relation-confidences", record.relation_confidences))
    return "\n".join(lines) + "\n"


def write_pgm(path, matrix):
    """Write an attention matrix as a binary PGM, scaled per row."""
    m = np.asarray(matrix, dtype=float)
    rows, cols = m.shape
    row_max = m.max(axis=1, keepdims=True)
    scaled = np.divide(m, row_max, out=np.zeros_like(m), where=row_max > 0)
    pixels = np.rint(255.0 * (1.0 - scaled)).astype(np.uint8)
    with open(path, "wb") as handle:
        handle.write(b"P5\n%d %d\n255\n" % (cols, rows))
        handle.write(pixels.tobytes())


def read_pgm(path):
    """Read back a binary PGM written by :func:`write_pgm`."""
    with open(path, "rb") as handle:
        if handle.readline().strip() != b"P5":
            raise ValueError("not a binary PGM")
        cols, rows = map(int, handle.readline().split())
        if handle.readline().strip() != b"255":
            raise ValueError("expected 8-bit maxval")
        data = handle.read(rows * cols)
    return np.frombuffer(data, dtype=np.uint8).reshape(rows, cols)
