"""Run ledgers: canonical stage records, content hashing, run verification.

Every pipeline stage emits a StageLedger holding counts, parameters,
metrics, and 64-bit content hashes of the files it read and wrote. Ledgers
serialize to canonical JSON (sorted keys, fixed separators, no NaN) and to
a one-row RFC-4180 CSV; wall-clock timing lives in a separate sidecar so
the canonical artifacts are byte-reproducible across reruns.

verify_run recomputes every recorded hash and checks hash/count chaining
between consecutive stages, reporting one named check per property.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from splatforge._kernels import CONTENT_HASH_NAME, content_hash64
from splatforge.errors import InvalidInput, VerificationFailed

SCHEMA_VERSION = 1
PIPELINE_VERSION = "0.1.0"
MANIFEST_NAME = "run_manifest.json"


def hash_bytes(data: bytes) -> str:
    """Content hash as a fixed-width lowercase hex string."""
    return f"{content_hash64(data):016x}"


def hash_file(path: str) -> str:
    with open(path, "rb") as fh:
        return hash_bytes(fh.read())


def _check_scalar(key: str, value):
    if isinstance(value, (bool, int, str)) or value is None:
        return value
    if isinstance(value, float):
        if not np.isfinite(value):
            raise InvalidInput(f"ledger value {key}={value} is not finite")
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _check_scalar(key, float(value))
    raise InvalidInput(f"ledger value {key}={value!r} is not a scalar")


def _clean_map(name: str, mapping: dict) -> dict:
    out = {}
    for key, value in mapping.items():
        if not isinstance(key, str):
            raise InvalidInput(f"{name} keys must be strings, got {key!r}")
        out[key] = _check_scalar(f"{name}.{key}", value)
    return out


@dataclass(frozen=True)
class StageLedger:
    stage: str
    seed: int
    input_counts: dict = field(default_factory=dict)
    output_counts: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    input_hashes: dict = field(default_factory=dict)  # rel path -> hex hash
    output_hashes: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        for name in ("input_counts", "output_counts", "params", "metrics",
                     "input_hashes", "output_hashes"):
            object.__setattr__(self, name, _clean_map(name, getattr(self, name)))

    def to_dict(self) -> dict:
        return asdict(self)


def canonical_json(obj) -> bytes:
    """Deterministic JSON bytes: sorted keys, compact, ASCII, no NaN."""
    return (
        json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)
        + "\n"
    ).encode("ascii")


def flatten_ledger(ledger: StageLedger) -> dict:
    """Flat string map of the ledger for the CSV row, dotted keys sorted."""
    flat: dict[str, str] = {"stage": ledger.stage, "seed": str(ledger.seed),
                            "schema_version": str(ledger.schema_version)}
    for section in ("input_counts", "output_counts", "params", "metrics",
                    "input_hashes", "output_hashes"):
        for key, value in getattr(ledger, section).items():
            if isinstance(value, bool):
                text = "true" if value else "false"
            elif isinstance(value, float):
                text = repr(value)
            elif value is None:
                text = ""
            else:
                text = str(value)
            flat[f"{section}.{key}"] = text
    return dict(sorted(flat.items()))


def ledger_csv_bytes(ledger: StageLedger) -> bytes:
    flat = flatten_ledger(ledger)
    buf = io.StringIO()
    writer = csv.writer(buf)  # RFC-4180 quoting and CRLF line ends
    writer.writerow(flat.keys())
    writer.writerow(flat.values())
    return buf.getvalue().encode("utf-8")


def read_ledger_csv(path: str) -> dict:
    """Parse a ledger CSV back into its flat string map."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) != 2 or len(rows[0]) != len(rows[1]):
        raise InvalidInput(f"{path} is not a one-row ledger CSV")
    return dict(zip(rows[0], rows[1]))


def write_ledger(ledger: StageLedger, run_dir: str,
                 started_at: float | None = None,
                 duration_s: float | None = None) -> str:
    """Write <stage>.json, <stage>.csv and a timing sidecar; returns json path."""
    json_path = os.path.join(run_dir, f"{ledger.stage}.json")
    with open(json_path, "wb") as fh:
        fh.write(canonical_json(ledger.to_dict()))
    with open(os.path.join(run_dir, f"{ledger.stage}.csv"), "wb") as fh:
        fh.write(ledger_csv_bytes(ledger))
    if started_at is not None:
        timing = {"stage": ledger.stage, "started_at": started_at,
                  "duration_s": duration_s}
        with open(os.path.join(run_dir, f"{ledger.stage}.timing.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(timing, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return json_path


def load_ledger(path: str) -> StageLedger:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    return StageLedger(**raw)


# ---------------------------------------------------------------------------
# Run manifest
# ---------------------------------------------------------------------------

def write_manifest(run_dir: str, config: dict, seed: int, stages: list,
                   gates: list | None = None) -> str:
    """Write run_manifest.json listing stage ledgers with their hashes."""
    entries = []
    for ledger in stages:
        rel = f"{ledger.stage}.json"
        entries.append(
            {"stage": ledger.stage, "ledger": rel,
             "ledger_hash": hash_file(os.path.join(run_dir, rel))}
        )
    manifest = {
        "pipeline_version": PIPELINE_VERSION,
        "schema_version": SCHEMA_VERSION,
        "hash_algorithm": CONTENT_HASH_NAME,
        "seed": seed,
        "config": config,
        "config_hash": hash_bytes(canonical_json(config)),
        "stages": entries,
        "gates": gates or [],
    }
    path = os.path.join(run_dir, MANIFEST_NAME)
    with open(path, "wb") as fh:
        fh.write(canonical_json(manifest))
    return path


def load_manifest(run_dir: str) -> dict:
    path = os.path.join(run_dir, MANIFEST_NAME)
    if not os.path.isfile(path):
        raise VerificationFailed(f"missing {MANIFEST_NAME} in {run_dir}")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise VerificationFailed(f"unreadable manifest: {exc}") from None


# ---------------------------------------------------------------------------
# Verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VerificationCheck:
    stage: str
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    checks: list

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]


def verify_run(run_dir: str) -> VerificationReport:
    """Recompute every hash a run recorded and check inter-stage chaining.

    Raises VerificationFailed only when the manifest itself is missing or
    unreadable; individual problems come back as failed checks.
    """
    manifest = load_manifest(run_dir)
    checks: list[VerificationCheck] = []
    ledgers: list[StageLedger | None] = []

    for entry in manifest.get("stages", []):
        stage = entry["stage"]
        path = os.path.join(run_dir, entry["ledger"])
        if not os.path.isfile(path):
            checks.append(VerificationCheck(stage, "ledger_present", False,
                                            f"{entry['ledger']} missing"))
            ledgers.append(None)
            continue
        checks.append(VerificationCheck(stage, "ledger_present", True))
        actual = hash_file(path)
        ok = actual == entry["ledger_hash"]
        checks.append(VerificationCheck(
            stage, "ledger_intact", ok,
            "" if ok else f"hash {actual} != recorded {entry['ledger_hash']}"))
        if not ok:
            ledgers.append(None)
            continue
        ledgers.append(load_ledger(path))

    for ledger in ledgers:
        if ledger is None:
            continue
        for kind in ("input_hashes", "output_hashes"):
            for rel, recorded in getattr(ledger, kind).items():
                target = os.path.join(run_dir, rel)
                label = f"{kind[:-2]}:{rel}"
                if not os.path.isfile(target):
                    checks.append(VerificationCheck(ledger.stage, label, False,
                                                    "file missing"))
                    continue
                actual = hash_file(target)
                ok = actual == recorded
                checks.append(VerificationCheck(
                    ledger.stage, label, ok,
                    "" if ok else f"hash {actual} != recorded {recorded}"))

    # Chaining: artifacts shared between stages must agree on hash, and
    # shared count keys must agree on value, in pipeline order.
    for a, b in zip(ledgers, ledgers[1:]):
        if a is None or b is None:
            continue
        shared = set(a.output_hashes) & set(b.input_hashes)
        for rel in sorted(shared):
            ok = a.output_hashes[rel] == b.input_hashes[rel]
            checks.append(VerificationCheck(
                b.stage, f"chain_hash:{rel}", ok,
                "" if ok else f"{a.stage} wrote {a.output_hashes[rel]}, "
                              f"{b.stage} read {b.input_hashes[rel]}"))
        for key in sorted(set(a.output_counts) & set(b.input_counts)):
            ok = a.output_counts[key] == b.input_counts[key]
            checks.append(VerificationCheck(
                b.stage, f"chain_count:{key}", ok,
                "" if ok else f"{a.output_counts[key]} != {b.input_counts[key]}"))

    return VerificationReport(checks)


# ---------------------------------------------------------------------------
# Metric key registry
# ---------------------------------------------------------------------------

# Every externally reported pipeline number maps to (stage, metrics key);
# "{k}" expands per PRISM capacity. Used by the schema-completeness test
# and by readers locating metrics without grepping stage internals.
LEDGER_KEY_REGISTRY = {
    "frame_reuse": [
        ("keyframes", "total_frames"),
        ("keyframes", "keyframe_count"),
        ("keyframes", "kf_reuse_ratio"),
        ("ingest_sfm", "registered_images"),
        ("ingest_sfm", "sfm_reconstruction_ratio"),
    ],
    "aggregate_counts": [
        ("odometry", "map_points_raw"),
        ("odometry", "map_points"),
        ("ingest_sfm", "sfm_cloud_points"),
        ("colorize", "colored_points"),
    ],
    "alignment_diagnostics": [
        ("align", "global_fitness_k{k}"),
        ("align", "icp_fitness_k{k}"),
        ("align", "inlier_rmse_k{k}"),
        ("align", "scale_k{k}"),
    ],
    "downsampling": [
        ("prism", "input_points"),
        ("prism", "output_points_k{k}"),
        ("prism", "reduction_vs_raw_k{k}"),
        ("prism", "reduction_vs_input_k{k}"),
    ],
}


def registry_keys(k_values) -> list:
    """Concrete (stage, key) pairs the registry requires for a run."""
    pairs = []
    for group in LEDGER_KEY_REGISTRY.values():
        for stage, template in group:
            if "{k}" in template:
                pairs.extend((stage, template.format(k=k)) for k in k_values)
            else:
                pairs.append((stage, template))
    return pairs


def missing_registry_keys(run_dir: str, k_values) -> list:
    """Registry entries absent from a run's stage ledgers."""
    manifest = load_manifest(run_dir)
    metrics_by_stage: dict[str, set] = {}
    for entry in manifest.get("stages", []):
        ledger = load_ledger(os.path.join(run_dir, entry["ledger"]))
        metrics_by_stage.setdefault(ledger.stage, set()).update(ledger.metrics)
    return [
        (stage, key)
        for stage, key in registry_keys(k_values)
        if key not in metrics_by_stage.get(stage, set())
    ]
