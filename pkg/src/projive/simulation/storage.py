"""SimTruth directories.

A truth directory holds::

    truth.json                 label, scenario, seed, noise_sd, achieved R^2,
                               scale constants, ranks
    block_<k>.csv              X_k, subjects x features   (k = 1..K)
    noise_<k>.csv              E_k, subjects x features
    joint_scores.csv           Z, subjects x r_J
    indiv_scores_<k>.csv       B_k, subjects x r_Ik
    joint_loadings_<k>.csv     d_k W_Jk, features x r_J
    indiv_loadings_<k>.csv     c_k W_Ik, features x r_Ik

The joint and individual signal matrices are products of the stored loadings
and scores, so they are rebuilt on load rather than written out.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Any

from projive import __version__
from projive.core.data import FloatArray, MultiBlockData
from projive.core.io import (
    default_feature_names,
    default_subject_ids,
    find_manifests,
    read_blocks,
    read_json,
    read_matrix_csv,
    write_block_csv,
    write_json,
    write_matrix_csv,
)
from projive.simulation.calibration import ScaleConstants
from projive.simulation.scenarios import SimScenario, SimTruth

logger = logging.getLogger(__name__)

TRUTH_FILE = "truth.json"


def _block_file(stem: str, k: int) -> str:
    return f"{stem}_{k + 1}.csv"


def block_paths(directory: str | Path, n_blocks: int) -> list[Path]:
    """Paths of the data block files of a truth directory."""
    return [Path(directory) / _block_file("block", k) for k in range(n_blocks)]


def truth_manifest(truth: SimTruth) -> dict[str, Any]:
    """JSON-friendly description of a truth (everything except the matrices)."""
    r_j = truth.joint_scores.shape[1]
    r_i = [b.shape[1] for b in truth.indiv_scores]
    return {
        "label": truth.label,
        "version": __version__,
        "n_blocks": truth.n_blocks,
        "ranks": f"{r_j}:{','.join(str(r) for r in r_i)}",
        "seed": truth.seed,
        "scenario": truth.scenario.model_dump(mode="json") if truth.scenario is not None else None,
        "noise_sd": truth.noise_sd,
        "achieved_r2": [list(pair) for pair in truth.achieved_r2],
        "scale_constants": [{"d": sc.d, "c": sc.c} for sc in truth.scale_constants],
    }


def save_truth(truth: SimTruth, directory: str | Path) -> Path:
    """Write a SimTruth to a directory (created if needed).

    Returns:
        The directory.
    """
    directory = Path(directory)
    data = truth.data
    ids = data.subject_ids or default_subject_ids(data.n_subjects)
    r_j = truth.joint_scores.shape[1]

    write_matrix_csv(
        directory / "joint_scores.csv",
        truth.joint_scores,
        ids,
        [f"joint_{j + 1}" for j in range(r_j)],
        index_name="subject_id",
    )
    for k, block in enumerate(data.blocks):
        names = data.feature_names[k] if data.feature_names else default_feature_names(block.shape[0])
        indiv_columns = [f"indiv_{j + 1}" for j in range(truth.indiv_scores[k].shape[1])]
        write_block_csv(directory / _block_file("block", k), block, ids, names)
        write_block_csv(directory / _block_file("noise", k), truth.noise[k], ids, names)
        write_matrix_csv(
            directory / _block_file("indiv_scores", k),
            truth.indiv_scores[k],
            ids,
            indiv_columns,
            index_name="subject_id",
        )
        write_matrix_csv(
            directory / _block_file("joint_loadings", k),
            truth.joint_loadings[k],
            names,
            [f"joint_{j + 1}" for j in range(r_j)],
            index_name="feature",
        )
        write_matrix_csv(
            directory / _block_file("indiv_loadings", k),
            truth.indiv_loadings[k],
            names,
            indiv_columns,
            index_name="feature",
        )
    # manifest last: its presence marks a complete directory
    write_json(directory / TRUTH_FILE, truth_manifest(truth))
    return directory


def load_truth(directory: str | Path) -> SimTruth:
    """Read a directory written by `save_truth`.

    Raises:
        FileNotFoundError: If truth.json or a component file is missing.
    """
    directory = Path(directory)
    manifest = read_json(directory / TRUTH_FILE)
    n_blocks = int(manifest["n_blocks"])
    data: MultiBlockData = read_blocks(block_paths(directory, n_blocks))

    joint_scores = read_matrix_csv(directory / "joint_scores.csv")[0]
    indiv_scores: list[FloatArray] = []
    joint_loadings: list[FloatArray] = []
    indiv_loadings: list[FloatArray] = []
    noise: list[FloatArray] = []
    for k in range(n_blocks):
        indiv_scores.append(read_matrix_csv(directory / _block_file("indiv_scores", k))[0])
        joint_loadings.append(read_matrix_csv(directory / _block_file("joint_loadings", k))[0])
        indiv_loadings.append(read_matrix_csv(directory / _block_file("indiv_loadings", k))[0])
        noise.append(read_matrix_csv(directory / _block_file("noise", k))[0].T)

    scenario = manifest.get("scenario")
    return SimTruth(
        data=data,
        joint_scores=joint_scores,
        indiv_scores=tuple(indiv_scores),
        joint_loadings=tuple(joint_loadings),
        indiv_loadings=tuple(indiv_loadings),
        joint_matrices=tuple(w @ joint_scores.T for w in joint_loadings),
        indiv_matrices=tuple(w @ b.T for w, b in zip(indiv_loadings, indiv_scores, strict=True)),
        noise=tuple(noise),
        achieved_r2=tuple((float(a), float(b)) for a, b in manifest["achieved_r2"]),
        scale_constants=tuple(ScaleConstants(d=float(s["d"]), c=float(s["c"])) for s in manifest["scale_constants"]),
        noise_sd=float(manifest.get("noise_sd", 1.0)),
        scenario=SimScenario.model_validate(scenario) if scenario is not None else None,
        label=str(manifest.get("label", "")),
        seed=None if manifest.get("seed") is None else int(manifest["seed"]),
    )


def discover_truth_dirs(root: str | Path) -> list[Path]:
    """Truth directories under root (root included), sorted by path."""
    dirs = find_manifests(root, TRUTH_FILE)
    logger.debug("Found %d truth directories under %s", len(dirs), root)
    return dirs
