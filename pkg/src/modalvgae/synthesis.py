"""End-to-end dataset synthesis: trusses -> modal truth -> PSD graphs.

Generation is two-pass.  Pass one draws every truss and solves its modes, so
the population-wide maximum target frequency fixes a single sampling rate and
a common Welch frequency axis (per-feature normalization across samples needs
aligned bins).  Pass two simulates responses, estimates PSDs, and assembles
graph samples.  All randomness is derived from (master seed, truss index,
stream tag), so any truss can be re-simulated in isolation, e.g. for noise
studies.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import truss as ts
from .data import (
    DatasetManifest,
    GraphSample,
    build_graph,
    fit_normalization,
)
from .response import (
    ExcitationSpec,
    NodePSDMatrix,
    WelchConfig,
    add_noise,
    choose_sampling_rate,
    downsample_psd,
    duration_for_segments,
    node_psd_matrix,
    simulate_response,
)
from .util import STREAM_EXCITATION, STREAM_NOISE, digest

MAX_TRUSS_RETRIES = 20


@dataclass(frozen=True)
class SynthesisConfig:
    """Everything needed to rebuild a dataset bit-for-bit."""

    truss: ts.TrussGenConfig = ts.TrussGenConfig()
    welch: WelchConfig = WelchConfig()
    force_std: float = 1e5
    n_segments: int = 16
    fs_factor: float = 8.0
    n_train: int = 200
    n_val: int = 50
    n_test: int = 50

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_val + self.n_test

    @property
    def seed(self) -> int:
        return self.truss.seed

    def validate(self) -> None:
        self.truss.validate()
        self.welch.validate()
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("every split needs at least one sample")
        if self.force_std <= 0 or self.n_segments < 4 or self.fs_factor <= 2.0:
            raise ValueError("invalid excitation/sampling settings")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["truss"]["corners"] = [list(c) for c in self.truss.corners]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthesisConfig":
        t = dict(d["truss"])
        t["corners"] = tuple(tuple(c) for c in t["corners"])
        for key in ("n_nodes", "youngs_modulus", "area", "density",
                    "rayleigh_a0", "rayleigh_a1", "support_nodes", "damping_window"):
            t[key] = tuple(t[key])
        return cls(
            truss=ts.TrussGenConfig(**t),
            welch=WelchConfig(**d["welch"]),
            force_std=float(d["force_std"]),
            n_segments=int(d["n_segments"]),
            fs_factor=float(d["fs_factor"]),
            n_train=int(d["n_train"]),
            n_val=int(d["n_val"]),
            n_test=int(d["n_test"]),
        )


def _truss_seed(master: int, index: int, attempt: int) -> int:
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index), 0, int(attempt)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _rayleigh_rng(master: int, index: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(master) & 0xFFFFFFFFFFFFFFFF, int(index), 1])
    )


def draw_truss(cfg: SynthesisConfig, index: int) -> tuple[ts.TrussModel, ts.ModalSolution]:
    """Deterministically produce truss #index with damping in the window."""
    for attempt in range(MAX_TRUSS_RETRIES):
        model = ts.generate_truss(_truss_seed(cfg.seed, index, attempt), cfg.truss)
        sys = ts.assemble_system(model)
        freqs, omegas, vectors = ts.solve_modes(sys, cfg.truss.n_modes)
        try:
            shapes = ts.node_shapes_from_vectors(vectors, sys.dof_map)
        except ts.GenerationError:
            continue
        try:
            a0, a1, _ = ts.sample_rayleigh(_rayleigh_rng(cfg.seed, index), omegas, cfg.truss)
        except ts.GenerationError:
            continue
        model = ts.with_damping(model, a0, a1)
        modal = ts.analyze(model, cfg.truss.n_modes)
        del shapes, freqs
        return model, modal
    raise ts.GenerationError(f"truss {index}: no valid draw in {MAX_TRUSS_RETRIES} attempts")


def excitation_for(cfg: SynthesisConfig, index: int, fs: float, duration: float) -> ExcitationSpec:
    seed = int(
        np.random.SeedSequence(
            [cfg.seed & 0xFFFFFFFFFFFFFFFF, int(index), STREAM_EXCITATION]
        ).generate_state(1, dtype=np.uint64)[0]
    )
    return ExcitationSpec(force_std=cfg.force_std, fs=fs, duration=duration, seed=seed)


def features_for_truss(
    cfg: SynthesisConfig,
    index: int,
    model: ts.TrussModel,
    modal: ts.ModalSolution,
    fs: float,
    duration: float,
    snr_db=None,
) -> NodePSDMatrix:
    """Simulate, optionally add measurement noise, Welch, downsample to 512."""
    exc = excitation_for(cfg, index, fs, duration)
    exc.validate(f_max=float(modal.freqs[-1]), welch=cfg.welch)
    series = simulate_response(modal, model, exc)
    if snr_db is not None and not (isinstance(snr_db, str) and snr_db == "clean"):
        noise_seed = int(
            np.random.SeedSequence(
                [cfg.seed & 0xFFFFFFFFFFFFFFFF, int(index), STREAM_NOISE]
            ).generate_state(1, dtype=np.uint64)[0]
        )
        series = add_noise(series, snr_db, noise_seed)
    raw = node_psd_matrix(series, cfg.welch, fs)
    values, freqs = downsample_psd(raw.values, raw.freqs)
    down = NodePSDMatrix(values=values, freqs=freqs)
    down.validate(zero_start=False)
    return down


def synthesize_dataset(cfg: SynthesisConfig) -> tuple[list[GraphSample], DatasetManifest]:
    """Generate the full dataset; normalization stats come from train only."""
    cfg.validate()
    trusses = [draw_truss(cfg, i) for i in range(cfg.n_total)]

    f_max = max(float(modal.freqs[-1]) for _, modal in trusses)
    fs = choose_sampling_rate(f_max, cfg.fs_factor)
    duration = duration_for_segments(cfg.welch, fs, cfg.n_segments)

    samples = []
    for i, (model, modal) in enumerate(trusses):
        psd = features_for_truss(cfg, i, model, modal, fs, duration)
        samples.append(
            build_graph(model, psd, modal, sample_id=i, meta={"seed": cfg.seed, "truss_index": i})
        )

    splits = {
        "train": list(range(cfg.n_train)),
        "val": list(range(cfg.n_train, cfg.n_train + cfg.n_val)),
        "test": list(range(cfg.n_train + cfg.n_val, cfg.n_total)),
    }
    generation = cfg.to_dict()
    generation["seed"] = cfg.seed
    generation["fs"] = fs
    generation["duration"] = duration
    manifest = DatasetManifest(
        n_total=cfg.n_total,
        splits=splits,
        n_modes=cfg.truss.n_modes,
        feature_dim=samples[0].features.shape[1],
        config_digest=digest(generation),
        generation=generation,
        norm_stats=fit_normalization([samples[i] for i in splits["train"]]),
    )
    manifest.validate()
    return samples, manifest


def resimulate_sample(manifest: DatasetManifest, index: int, snr_db=None) -> GraphSample:
    """Rebuild one sample's features from scratch, optionally with noise.

    Noise is injected into the time series before Welch, matching how noisy
    measurements would enter a real pipeline.  Targets are identical to the
    stored sample's because truss generation is deterministic.
    """
    cfg = SynthesisConfig.from_dict(manifest.generation)
    fs = float(manifest.generation["fs"])
    duration = float(manifest.generation["duration"])
    model, modal = draw_truss(cfg, index)
    psd = features_for_truss(cfg, index, model, modal, fs, duration, snr_db=snr_db)
    return build_graph(model, psd, modal, sample_id=index,
                       meta={"seed": cfg.seed, "truss_index": index, "snr_db": snr_db})
