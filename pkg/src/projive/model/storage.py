"""Fit output directories.

A fit directory holds::

    manifest.json        run provenance (version, seed, config hash)
    summary.json         loglik, aic, bic, iterations, convergence
    loglik_trace.csv     one row per EM iteration
    w_joint_<k>.csv      W_Jk, features x r_J        (k = 1..K)
    w_indiv_<k>.csv      W_Ik, features x r_Ik
    noise_<k>.csv        diagonal of D_k, one row per feature
    joint_scores.csv     posterior mean joint scores, subjects x r_J
    indiv_scores_<k>.csv posterior mean individual scores, subjects x r_Ik
"""

from __future__ import annotations

from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from projive.core.data import (
    DiagonalNoise,
    FloatArray,
    IsotropicNoise,
    MultiBlockData,
    Noise,
    NoiseModel,
    ProjiveParams,
)
from projive.core.io import (
    default_feature_names,
    default_subject_ids,
    read_json,
    read_matrix_csv,
    write_frame,
    write_json,
    write_matrix_csv,
)
from projive.model.em import FitResult, extract_scores

MANIFEST_FILE = "manifest.json"
SUMMARY_FILE = "summary.json"
TRACE_FILE = "loglik_trace.csv"


def _block_file(stem: str, k: int) -> str:
    return f"{stem}_{k + 1}.csv"


def _columns(prefix: str, r: int) -> list[str]:
    return [f"{prefix}_{j + 1}" for j in range(r)]


def save_fit(
    result: FitResult,
    data: MultiBlockData,
    directory: str | Path,
    manifest: Mapping[str, Any],
) -> Path:
    """Write every output of a fit to a directory.

    Args:
        result: The fit.
        data: Data that was fit (for subject ids and feature names).
        directory: Output directory, created if needed.
        manifest: Provenance written to manifest.json.

    Returns:
        The output directory.
    """
    directory = Path(directory)
    ids = data.subject_ids or default_subject_ids(data.n_subjects)
    groups = extract_scores(result)
    params = result.params
    r_j = params.ranks.r_j

    write_json(directory / MANIFEST_FILE, manifest)
    write_json(directory / SUMMARY_FILE, result.summary())
    trace = pd.DataFrame(
        {"iteration": np.arange(1, result.iterations + 1), "loglik": np.asarray(result.loglik_trace)}
    )
    write_frame(directory / TRACE_FILE, trace, index=False)

    write_matrix_csv(directory / "joint_scores.csv", groups.joint, ids, _columns("joint", r_j), index_name="subject_id")
    for k in range(params.n_blocks):
        names = data.feature_names[k] if data.feature_names else default_feature_names(params.dims[k])
        write_matrix_csv(
            directory / _block_file("w_joint", k),
            params.w_joint[k],
            names,
            _columns("joint", r_j),
            index_name="feature",
        )
        write_matrix_csv(
            directory / _block_file("w_indiv", k),
            params.w_indiv[k],
            names,
            _columns("indiv", params.ranks.r_i[k]),
            index_name="feature",
        )
        write_matrix_csv(
            directory / _block_file("noise", k),
            params.noise_diagonal(k)[:, None],
            names,
            ["variance"],
            index_name="feature",
        )
        write_matrix_csv(
            directory / _block_file("indiv_scores", k),
            groups.individual[k],
            ids,
            _columns("indiv", params.ranks.r_i[k]),
            index_name="subject_id",
        )
    return directory


@dataclass(frozen=True)
class LoadedFit:
    """Fit outputs read back from a directory.

    Attributes:
        params: Fitted parameters.
        joint_scores: Posterior mean joint scores, (n, r_J).
        indiv_scores: Posterior mean individual scores per block.
        subject_ids: Row labels of the score files.
        summary: Contents of summary.json.
    """

    params: ProjiveParams
    joint_scores: FloatArray
    indiv_scores: tuple[FloatArray, ...]
    subject_ids: tuple[str, ...]
    summary: dict[str, Any]


def load_fit(directory: str | Path) -> LoadedFit:
    """Read a directory written by `save_fit`.

    Raises:
        FileNotFoundError: If an expected file is missing.
    """
    directory = Path(directory)
    summary = read_json(directory / SUMMARY_FILE)
    noise_model = NoiseModel(summary["noise_model"])
    n_blocks = len(str(summary["ranks"]).partition(":")[2].split(","))

    joint_scores, ids, _ = read_matrix_csv(directory / "joint_scores.csv")
    w_joint: list[FloatArray] = []
    w_indiv: list[FloatArray] = []
    noise: list[Noise] = []
    indiv_scores: list[FloatArray] = []
    for k in range(n_blocks):
        w_joint.append(read_matrix_csv(directory / _block_file("w_joint", k))[0])
        w_indiv.append(read_matrix_csv(directory / _block_file("w_indiv", k))[0])
        variances = read_matrix_csv(directory / _block_file("noise", k))[0][:, 0]
        noise.append(
            IsotropicNoise(float(variances[0])) if noise_model is NoiseModel.ISOTROPIC else DiagonalNoise(variances)
        )
        indiv_scores.append(read_matrix_csv(directory / _block_file("indiv_scores", k))[0])

    params = ProjiveParams(w_joint=tuple(w_joint), w_indiv=tuple(w_indiv), noise=tuple(noise))
    return LoadedFit(
        params=params,
        joint_scores=joint_scores,
        indiv_scores=tuple(indiv_scores),
        subject_ids=ids,
        summary=summary,
    )
