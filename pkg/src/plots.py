"""
Static SVG charts of run outputs

Plotting never fails a run: errors are logged as warnings and None is returned.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)

def _save(fig, file_path: Union[str, Path]) -> Path:
    path = Path(file_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="svg", bbox_inches="tight")
    plt.close(fig)
    return path

def energy_plot(times: Sequence[float], energy: Sequence[float], file_path: Union[str, Path],
                grad2: Optional[Sequence[float]] = None, title: str = "Perturbation energy") -> Optional[Path]:
    """E(t), and ||grad u||^2 when given; log scale unless the data are all zero"""
    try:
        fig, ax = plt.subplots(figsize=(8, 5))
        t = np.asarray(times)
        E = np.asarray(energy)
        ax.plot(t, E, label="E(t)")
        if grad2 is not None:
            ax.plot(t, np.asarray(grad2), label="||grad u||^2", linestyle="--")
        if np.all(E > 0):
            ax.set_yscale("log")
        ax.set_xlabel("t")
        ax.set_title(title)
        ax.grid(True, alpha=0.3)
        ax.legend()
        return _save(fig, file_path)
    except Exception as e:
        plt.close("all")
        logger.warning(f"Energy plot failed: {e}")
        return None

def branch_plot(lambdas: Sequence[float], drag: Sequence[float], chi: Sequence[float],
                file_path: Union[str, Path]) -> Optional[Path]:
    try:
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
        ax1.plot(lambdas, drag, marker="o")
        ax1.set_xlabel("lambda")
        ax1.set_ylabel("drag")
        ax2.plot(lambdas, chi, marker="o", color="tab:orange")
        ax2.set_xlabel("lambda")
        ax2.set_ylabel("chi0_x")
        for ax in (ax1, ax2):
            ax.grid(True, alpha=0.3)
        return _save(fig, file_path)
    except Exception as e:
        plt.close("all")
        logger.warning(f"Branch plot failed: {e}")
        return None

def threshold_plot(lambdas: Sequence[float], lambda1: Sequence[float], lambda2: Sequence[float],
                   file_path: Union[str, Path]) -> Optional[Path]:
    """Inverse thresholds (0 for inf) against lambda"""
    try:
        inv = lambda v: np.array([0.0 if not np.isfinite(x) else 1.0 / x for x in v])
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.plot(lambdas, inv(lambda1), marker="o", label="1/lambda1")
        ax.plot(lambdas, inv(lambda2), marker="s", label="1/lambda2")
        ax.set_xlabel("lambda")
        ax.grid(True, alpha=0.3)
        ax.legend()
        return _save(fig, file_path)
    except Exception as e:
        plt.close("all")
        logger.warning(f"Threshold plot failed: {e}")
        return None

def eigenpath_plot(lambdas: Sequence[float], mu_real: Sequence[float], file_path: Union[str, Path],
                   crossings: Sequence[float] = ()) -> Optional[Path]:
    try:
        fig, ax = plt.subplots(figsize=(8, 5))
        ax.plot(lambdas, mu_real, marker="o", label="Re mu")
        ax.axhline(1.0, color="gray", linestyle=":")
        for lam in crossings:
            ax.axvline(lam, color="tab:red", linestyle="--")
        ax.set_xlabel("lambda")
        ax.grid(True, alpha=0.3)
        ax.legend()
        return _save(fig, file_path)
    except Exception as e:
        plt.close("all")
        logger.warning(f"Eigenpath plot failed: {e}")
        return None
