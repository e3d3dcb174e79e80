"""Glue between training, generation and certification, plus the on-disk formats.

Ensemble files are ``.npz`` archives written with fixed zip timestamps, so
the same seed and checkpoint always give byte-identical files. Arrays:
``amplitudes`` (count, 2**n) complex, ``thetas`` (count, n_p), ``energies``
(count,) and ``meta``, a UTF-8 JSON document holding the training config,
the generation seed and the count.
"""
import json

import numpy as np

from . import generator as gen
from .exceptions import ContractError, MissingCacheError
from .features import FeatureSpec, compute_features_batch, similarity_matrix
from .models import model_ground_space
from .spanlab import Thresholds, certify, overlap_distribution
from .trainer import TrainConfig

# certification cut-offs and span tolerances per model family
CERTIFY_DEFAULTS = {
    "MG": {"energy_rel": 0.005, "overlap": 0.995, "variant": "AMP_SUM", "rank_eps": 0.05},
    "AKLT": {"energy_rel": 0.02, "overlap": 0.995, "variant": "AMP_SUM", "rank_eps": 0.05},
    "XXZ": {"energy_rel": 0.017, "overlap": 0.995, "variant": "AMP_SUM", "rank_eps": 0.03},
}


def certification_settings(config):
    out = dict(CERTIFY_DEFAULTS[config.model])
    out["subset_cap"] = None
    out.update({k: v for k, v in (config.certification or {}).items()})
    return out


def _json_array(obj):
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8)


def _read_json_array(arr):
    return json.loads(bytes(arr).decode())


def load_generator(path):
    """(params, config) from a training checkpoint."""
    try:
        params, _, _, meta = gen.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise MissingCacheError(f"checkpoint not found: {path}") from exc
    if "config" not in meta:
        raise ContractError(f"{path} carries no training configuration")
    config = TrainConfig.from_dict(meta["config"])
    if config.network != params.shape:
        raise ContractError("checkpoint weights do not match the circuit template of its configuration")
    return params, config


def generate_ensemble(params, config, count, seed):
    """Decode ``count`` latent samples and simulate the circuits."""
    count = int(count)
    if count < 0:
        raise ValueError("count must be >= 0")
    template = config.template
    if params.shape.n_params != template.n_params:
        raise ContractError(
            f"generator emits {params.shape.n_params} angles, template needs {template.n_params}"
        )
    hamiltonian = config.spec.hamiltonian()
    thetas = gen.generate(params, count, seed)
    if count == 0:
        amps = np.zeros((0, template.dim), dtype=complex)
        energies = np.zeros(0)
    else:
        amps = template.prepare_batch(thetas)
        energies = hamiltonian.table.expectations(amps) @ hamiltonian.coefficients
    return {"amplitudes": amps, "thetas": thetas, "energies": energies}


def save_ensemble(path, ensemble, config, seed):
    meta = {"config": config.to_dict(), "seed": int(seed), "count": int(ensemble["thetas"].shape[0])}
    gen.write_npz(path, {
        "amplitudes": ensemble["amplitudes"],
        "thetas": ensemble["thetas"],
        "energies": ensemble["energies"],
        "meta": _json_array(meta),
    })


def load_ensemble(path):
    try:
        data = np.load(path, allow_pickle=False)
    except FileNotFoundError as exc:
        raise MissingCacheError(f"ensemble file not found: {path}") from exc
    with data:
        missing = [k for k in ("amplitudes", "thetas", "energies", "meta") if k not in data.files]
        if missing:
            raise ContractError(f"{path} is not an ensemble file (missing {missing[0]!r})")
        meta = _read_json_array(data["meta"])
        ens = {k: data[k].copy() for k in ("amplitudes", "thetas", "energies")}
    config = TrainConfig.from_dict(meta["config"])
    if ens["amplitudes"].shape[1:] != (1 << config.spec.n_qubits,):
        raise ContractError("ensemble amplitudes do not match the model size")
    return ens, config, meta


def certify_ensemble(ensemble, config, settings=None):
    """Certification report (dict) and the accepted-state matrix."""
    settings = settings or certification_settings(config)
    ground = model_ground_space(config.spec)
    amps = ensemble["amplitudes"]
    if amps.shape[1] != ground.basis.shape[0]:
        raise ContractError("ensemble states and model Hilbert space differ in dimension")
    thresholds = Thresholds(settings["energy_rel"], settings["overlap"], settings["variant"])
    report, accepted = certify(amps, ensemble["energies"], ground, thresholds, settings["rank_eps"],
                               settings.get("subset_cap"), ensemble["thetas"])
    report["model"] = config.model
    report["n_sites"] = config.n_sites
    report["n_qubits"] = config.spec.n_qubits
    return report, accepted, ground


def overlap_rows(accepted, ground):
    if accepted.empty:
        return np.zeros((0, ground.degeneracy))
    return overlap_distribution(accepted.C.T, ground.basis)


def heatmaps(accepted, ground, config, subset=None):
    """Similarity matrices (exact basis and representative generated states) per feature family."""
    exact = ground.basis.T
    if subset:
        reps = accepted.C.T[[list(accepted.indices).index(i) for i in subset]]
    else:
        reps = accepted.C.T[: ground.degeneracy]
    out = {}
    for kind in config.features:
        spec = FeatureSpec(kind, config.spec.n_qubits)
        out[("exact", kind)] = similarity_matrix(compute_features_batch(exact, spec))
        if reps.shape[0]:
            out[("generated", kind)] = similarity_matrix(compute_features_batch(reps, spec))
    return out
