"""Activation PCA and attention-map diagnostics for trained models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encodings as enc
from . import tasks
from .errors import InvalidArgument, InvalidState, NumericDomainError
from .model import Capture, ModelConfig, forward, make_batch
from .optim import ParameterStore
from .tensor import no_grad

DUMP_SEQUENCES = 30


class DegenerateBasis(NumericDomainError):
    pass


@dataclass
class ActivationDump:
    """Activations of one layer (0 = embeddings) for sequences of one length, one row per slot."""

    layer: int
    length: int
    padded_length: int
    rows: np.ndarray  # (sequences * padded_length, d_model)


def capture_run(params: ParameterStore, config: ModelConfig, task: str, length: int, count: int,
                rng: np.random.Generator) -> tuple[Capture, np.ndarray]:
    """Forward ``count`` sampled instances of one length with capture on; returns the capture and mask."""
    spec = tasks.get_task(task)
    x, y = spec.sample_batch(length, count, rng)
    n = x.shape[1] + y.shape[1]
    batch = make_batch(x, y, spec.pad_id, enc.sample_positions(n, config.scheme, rng))
    with no_grad():
        _, cap = forward(params, config, batch, capture=True)
    return cap, batch.mask


def activation_dumps(params, config: ModelConfig, task: str, length: int, rng,
                     count: int = DUMP_SEQUENCES) -> list[ActivationDump]:
    cap, mask = capture_run(params, config, task, length, count, rng)
    n = mask.shape[1]
    return [ActivationDump(i, length, n, a.reshape(-1, a.shape[-1]).astype(np.float64))
            for i, a in enumerate(cap.activations)]


@dataclass
class PCAProjection:
    mean: np.ndarray
    basis: np.ndarray  # (d, 2), columns by decreasing variance
    variances: np.ndarray  # (2,)
    fit: np.ndarray  # (rows, 2)
    projected: np.ndarray  # (rows, 2)

    def transform(self, rows) -> np.ndarray:
        return (np.asarray(rows, dtype=np.float64) - self.mean) @ self.basis


def pca_fit_project(fit, project) -> PCAProjection:
    """Two-component PCA fitted on ``fit`` only (centred, not whitened) and applied to both inputs."""
    fit_rows = np.asarray(fit.rows if isinstance(fit, ActivationDump) else fit, dtype=np.float64)
    proj_rows = np.asarray(project.rows if isinstance(project, ActivationDump) else project, dtype=np.float64)
    if isinstance(fit, ActivationDump) and isinstance(project, ActivationDump) and fit.layer != project.layer:
        raise InvalidArgument(f"pca: fit layer {fit.layer} differs from projected layer {project.layer}")
    if fit_rows.ndim != 2 or fit_rows.shape[0] < 2:
        raise InvalidArgument("pca: fit data needs at least two rows")
    if proj_rows.ndim != 2 or proj_rows.shape[1] != fit_rows.shape[1]:
        raise InvalidArgument(f"pca: projected width {proj_rows.shape} does not match fit {fit_rows.shape}")
    mean = fit_rows.mean(axis=0)
    centred = fit_rows - mean
    cov = centred.T @ centred / (fit_rows.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:2]
    vals, vecs = vals[order], vecs[:, order]
    if vals.shape[0] < 2 or vals[1] <= 1e-12 * max(vals[0], 1e-300):
        raise DegenerateBasis("pca: fit data has rank < 2")
    # sign convention: largest-magnitude loading of each component is positive
    signs = np.sign(vecs[np.abs(vecs).argmax(axis=0), np.arange(2)])
    vecs = vecs * signs
    return PCAProjection(mean, vecs, vals, centred @ vecs, (proj_rows - mean) @ vecs)


def out_of_support(fit_coords, projected_coords, inflate: float = 0.1) -> float:
    """Fraction of projected points outside the fit points' bounding box, widened by ``inflate`` per side."""
    fit_coords = np.asarray(fit_coords)
    projected_coords = np.asarray(projected_coords)
    lo, hi = fit_coords.min(axis=0), fit_coords.max(axis=0)
    pad = (hi - lo) * inflate
    inside = np.all((projected_coords >= lo - pad) & (projected_coords <= hi + pad), axis=1)
    return float(1.0 - inside.mean())


def attention_summary(capture: Capture | None, layer: int) -> np.ndarray:
    """Elementwise max over heads of the post-softmax attention of ``layer``; shape (..., n, n)."""
    if capture is None or not capture.attention:
        raise InvalidState("attention_summary: forward was run without capture")
    if not 0 <= layer < len(capture.attention):
        raise InvalidArgument(f"attention_summary: layer {layer} not in 0..{len(capture.attention) - 1}")
    return capture.attention[layer].max(axis=-3)


def anti_diagonal_contrast(summary, input_length: int, bandwidth: int = 2) -> tuple[float, float]:
    """Mean attention near the reversal anti-diagonal of the answer block, and the mean of the whole map.

    The answer block pairs answer slot ``j`` (row ``input_length + j``) with input
    slot ``c``; the anti-diagonal is ``c = input_length - 1 - j``.
    """
    summary = np.asarray(summary)
    if summary.ndim == 3:
        summary = summary.mean(axis=0)
    n = summary.shape[-1]
    ell = input_length
    if n < 2 * ell:
        raise InvalidArgument(f"anti_diagonal_contrast: map of {n} slots too small for length {ell}")
    block = summary[ell:2 * ell, :ell]
    j, c = np.indices(block.shape)
    band = np.abs(c - (ell - 1 - j)) <= bandwidth
    return float(block[band].mean()), float(summary.mean())
