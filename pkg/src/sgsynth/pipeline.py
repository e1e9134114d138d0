"""End-to-end orchestration: configs, the dealer side, and full runs.

A run takes a plaintext cohort, splits it 80/20 into train/test, deals
the training rows to M data holders, executes the three-party protocol
stack (in-process harness or TCP), and hands the revealed noisy tables
to the generator. Fixed seeds make every stage reproducible; the M
holder partition never changes the result because submissions are
shared row-by-row under a per-global-row key before concatenation.

Reproducibility note: with ``seed`` set, data holders derive their share
randomness from it, which is what tests and the holder-invariance
guarantee rely on. Leave the seed unset in adversarial deployments so
each holder draws fresh OS randomness.
"""
from __future__ import annotations

import json
import secrets
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import CohortTable, ingest, make_demo_cohort, split_holders, split_train_test
from .errors import ParameterError
from .generator import calibrate, estimate_model, inverse_bin, sample
from .metrics import MetricsReport, evaluate_pair
from .prf import derive_key, generator_from_key
from .primitives import Engine
from .protocols import ReleasedTables, execute_sdg
from .ring import FixedPointCodec
from .sharing import SharedVector
from .transport import run_three_party_local

__all__ = [
    "RunConfig",
    "RunResult",
    "load_config",
    "make_submissions",
    "share_rows",
    "run_end_to_end",
    "generate_synthetic",
    "released_to_json",
    "released_from_json",
    "party_seed",
]

_U64 = np.uint64


@dataclass
class RunConfig:
    """Flat key-value protocol-run manifest; every key has a CLI flag."""

    input: str | None = None        # cohort CSV; None uses the demo generator
    epsilon: float = 4.0
    delta: float = 1e-5
    sigma: float | None = None      # explicit noise scale override
    classes: int | None = None      # inferred from the data when omitted
    bins: int = 4                   # quartile binning is fixed at 4
    seed: int = 0
    holders: int = 1
    noise_bin_means: bool = True
    ring_bits: int = 64
    frac_bits: int = 16
    n_syn: int | None = None        # default: training-set size
    test_fraction: float = 0.2
    log1p: bool = False
    timeout: float = 60.0
    party1: str = "127.0.0.1:7011"
    party2: str = "127.0.0.1:7012"
    party3: str = "127.0.0.1:7013"
    outdir: str = "out"
    figures: bool = True
    de_top_k: int = 50
    demo_n: int = 800
    demo_d: int = 50
    demo_classes: int = 4

    def validate(self) -> "RunConfig":
        if self.bins != 4:
            raise ParameterError("quartile binning is fixed at 4 bins")
        if self.sigma is not None and self.sigma < 0:
            raise ParameterError("sigma must be >= 0")
        if self.holders < 1:
            raise ParameterError("holders must be >= 1")
        return self

    def endpoints(self) -> dict[int, tuple[str, int]]:
        out = {}
        for p, spec in ((1, self.party1), (2, self.party2), (3, self.party3)):
            host, _, port = spec.rpartition(":")
            try:
                out[p] = (host or "127.0.0.1", int(port))
            except ValueError:
                raise ParameterError(f"bad endpoint for party {p}: {spec!r}") from None
        return out

    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.frac_bits, self.ring_bits)

    def noise_sigma(self, d: int) -> float:
        if self.sigma is not None:
            return self.sigma
        return calibrate(self.epsilon, self.delta, d).sigma


_BOOL_KEYS = {"noise_bin_means", "log1p", "figures"}
_INT_KEYS = {"classes", "bins", "seed", "holders", "ring_bits", "frac_bits",
             "n_syn", "de_top_k", "demo_n", "demo_d", "demo_classes"}
_FLOAT_KEYS = {"epsilon", "delta", "sigma", "test_fraction", "timeout"}


def _coerce(key: str, raw: str):
    raw = raw.strip()
    if raw == "" or raw.lower() == "none":
        return None
    if key in _BOOL_KEYS:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"config key {key}: expected a boolean, got {raw!r}")
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
    except ValueError:
        raise ParameterError(f"config key {key}: bad value {raw!r}") from None
    return raw


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Parse a flat ``key = value`` config file and apply CLI overrides."""
    known = {f.name for f in fields(RunConfig)}
    values: dict = {}
    if path is not None:
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParameterError(f"{path}:{lineno}: expected key = value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in known:
                raise ParameterError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _coerce(key, raw)
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in known:
            raise ParameterError(f"unknown config key {key!r}")
        values[key] = _coerce(key, str(val)) if isinstance(val, str) else val
    return RunConfig(**values).validate()


# --- dealer side -------------------------------------------------------------


def share_rows(values: np.ndarray, labels: np.ndarray, codec: FixedPointCodec,
               seed: int | None, row_offset: int = 0) -> list[SharedVector]:
    """Share one holder's (N_i, d+1) matrix for the three parties.

    Gene columns are fixed-point encoded, the label column stays raw.
    Share randomness is keyed per global row index, so any partition of
    the same cohort produces identical share triples.
    """
    enc = codec.encode_array(values)
    matrix = np.concatenate([enc, labels.astype(np.int64).astype(_U64)[:, None]], axis=1)
    n, cols = matrix.shape
    x1 = np.empty((n, cols), dtype=_U64)
    x2 = np.empty((n, cols), dtype=_U64)
    for i in range(n):
        if seed is None:
            row_seed = secrets.token_bytes(16)
        else:
            row_seed = derive_key(seed, "row-share", row_offset + i)
        rng = generator_from_key(row_seed)
        draws = rng.integers(0, 2 ** 64, size=(2, cols), dtype=_U64)
        x1[i], x2[i] = draws[0], draws[1]
    ring = codec.ring
    x1 = ring.wrap_array(x1)
    x2 = ring.wrap_array(x2)
    x3 = ring.wrap_array(matrix - x1 - x2)
    return [SharedVector(x1, x2), SharedVector(x2.copy(), x3),
            SharedVector(x3.copy(), x1.copy())]


def make_submissions(train: CohortTable, cfg: RunConfig) -> list[list[SharedVector]]:
    """Per-party lists of holder submissions (outer index = party - 1)."""
    codec = cfg.codec()
    parts = split_holders(train, cfg.holders)
    per_party: list[list[SharedVector]] = [[], [], []]
    offset = 0
    for part in parts:
        triple = share_rows(part.values, part.labels, codec, cfg.seed, row_offset=offset)
        for p in range(3):
            per_party[p].append(triple[p])
        offset += part.n
    return per_party


def party_seed(seed: int, party: int) -> int:
    return int.from_bytes(derive_key(seed, "party-seed", party)[:8], "little")


def _party_protocol(links, party: int, submissions: list[SharedVector],
                    classes: int, sigma: float, noise_bin_means: bool,
                    frac_bits: int, ring_bits: int, seed: int):
    eng = Engine(links, FixedPointCodec(frac_bits, ring_bits), seed=party_seed(seed, party))
    eng.setup()
    return execute_sdg(eng, submissions, classes, sigma, noise_bin_means)


# --- full runs ---------------------------------------------------------------


@dataclass
class RunResult:
    synthetic: CohortTable
    report: MetricsReport
    released: ReleasedTables
    train: CohortTable
    test: CohortTable
    config: RunConfig = field(repr=False, default=None)


def generate_synthetic(released: ReleasedTables, gene_names: list[str],
                       classes: int, n_syn: int, seed: int) -> CohortTable:
    """Phase 4: fit the star model, sample rows, map bins back to values."""
    model = estimate_model(released)
    bins, labels = sample(model, n_syn, seed)
    values = inverse_bin(bins, released.bin_means)
    return CohortTable(values, labels, list(gene_names), classes)


def load_cohort(cfg: RunConfig) -> CohortTable:
    if cfg.input:
        return ingest(cfg.input, log1p=cfg.log1p, classes=cfg.classes)
    return make_demo_cohort(cfg.demo_n, cfg.demo_d, cfg.demo_classes, cfg.seed)


def run_end_to_end(cfg: RunConfig, table: CohortTable | None = None) -> RunResult:
    """Share, run the three parties locally, generate, and score one run."""
    cfg.validate()
    if table is None:
        table = load_cohort(cfg)
    classes = cfg.classes or table.classes
    train, test = split_train_test(table, cfg.test_fraction, cfg.seed)
    sigma = cfg.noise_sigma(table.d)
    submissions = make_submissions(train, cfg)
    results = run_three_party_local(
        _party_protocol,
        [(submissions[p - 1], classes, sigma, cfg.noise_bin_means,
          cfg.frac_bits, cfg.ring_bits, cfg.seed) for p in (1, 2, 3)],
        timeout=cfg.timeout,
    )
    released = results[0]
    n_syn = cfg.n_syn or train.n
    synthetic = generate_synthetic(released, table.gene_names, classes, n_syn, cfg.seed)
    report = evaluate_pair(train, test, synthetic, epsilon=cfg.epsilon,
                           sigma=sigma, seed=cfg.seed, de_top_k=cfg.de_top_k)
    return RunResult(synthetic=synthetic, report=report, released=released,
                     train=train, test=test, config=cfg)


# --- released-table serialization ---------------------------------------------


def released_to_json(released: ReleasedTables, gene_names: list[str],
                     classes: int, n_train: int, epsilon: float, seed: int) -> str:
    payload = {
        "sigma": released.sigma,
        "epsilon": epsilon,
        "classes": classes,
        "n_train": n_train,
        "seed": seed,
        "gene_names": list(gene_names),
        "mu_gene": released.mu_gene.tolist(),
        "mu_label": released.mu_label.tolist(),
        "mu_pair": released.mu_pair.tolist(),
        "bin_means": released.bin_means.tolist(),
    }
    return json.dumps(payload, indent=2)


def released_from_json(text: str) -> tuple[ReleasedTables, dict]:
    payload = json.loads(text)
    released = ReleasedTables(
        mu_gene=np.asarray(payload["mu_gene"], dtype=np.float64),
        mu_label=np.asarray(payload["mu_label"], dtype=np.float64),
        mu_pair=np.asarray(payload["mu_pair"], dtype=np.float64),
        bin_means=np.asarray(payload["bin_means"], dtype=np.float64),
        sigma=float(payload["sigma"]),
    )
    meta = {k: payload[k] for k in ("epsilon", "classes", "n_train", "seed", "gene_names")}
    return released, meta
