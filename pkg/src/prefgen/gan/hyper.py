import numpy as np

from ..exceptions import EmptyDatasetError

KAPPA_FACTOR = 5.0


def rule_of_thumb_hyperparams(normalized_labels, n_images: int, kappa_factor: float = KAPPA_FACTOR,
                              bandwidth: str = "silverman"):
    """Label-noise std ``sigma`` and vicinity half-width ``kappa``.

    ``sigma`` is a kernel bandwidth over the distinct label values with
    ``n_images`` as the sample size. ``"silverman"`` is the robust rule
    ``0.9 * min(sd, IQR / 1.34) * n^(-1/5)`` (sample sd); ``"normal"`` is the
    normal-reference rule ``sd * (4 / (3 n))^(1/5)`` (population sd).
    ``kappa`` is ``kappa_factor`` times the largest gap between adjacent
    distinct labels.
    """
    distinct = np.unique(np.asarray(normalized_labels, dtype=float))
    if distinct.size < 2:
        raise EmptyDatasetError("rule-of-thumb hyperparameters need at least two distinct labels")
    if n_images < 1:
        raise ValueError("n_images must be positive")
    if bandwidth == "silverman":
        q75, q25 = np.percentile(distinct, [75, 25])
        spread = min(distinct.std(ddof=1), (q75 - q25) / 1.34)
        sigma = 0.9 * spread * n_images ** (-0.2)
    elif bandwidth == "normal":
        sigma = distinct.std() * (4.0 / (3.0 * n_images)) ** 0.2
    else:
        raise ValueError(f"unknown bandwidth rule {bandwidth!r}")
    kappa = kappa_factor * float(np.max(np.diff(distinct)))
    return float(sigma), kappa
