"""Batch pipeline: data generation, expert training, sweeps, and reports.

Every stage is deterministic given the config document: all randomness flows
through substreams derived from the config seed, sweep cells use disjoint
streams (safe to parallelize), and output rows are sorted before writing.
Set ``CHEST_THREADS`` to cap sweep parallelism (default: serial).
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - optional accelerator knob
    from contextlib import nullcontext

    def threadpool_limits(*args, **kwargs):
        return nullcontext()

from .api import (
    DiffusionChannelEstimator,
    DMVBChannelEstimator,
    LangevinChannelEstimator,
    LassoChannelEstimator,
    RLSChannelEstimator,
)
from .channelgen import (
    Dataset,
    MeasurementSetup,
    generate_dataset,
    load_dataset,
    make_pilots,
    nmse,
    save_dataset,
    simulate_measurement,
    snr_to_noise_var,
)
from .config import ExperimentConfig, config_hash, load_config
from .denoiser import DenoiserNetwork
from .diffusion import linear_schedule
from .experts import DenoiserPrior, load_expert_weights, save_expert_weights, train_expert
from .numerics import RngStream

__all__ = [
    "AGGREGATED_ID",
    "CSV_COLUMNS",
    "generate_data",
    "train_models",
    "run_sweep",
    "write_report",
]

AGGREGATED_ID = "aggregated"

CSV_COLUMNS = [
    "config_hash",
    "method",
    "environment",
    "snr_db",
    "alpha",
    "seed",
    "nmse_db",
    "iters",
    "reverse_steps",
    "wall_ms",
    "rho_argmax",
    "rho_max",
]


def _schedule(config: ExperimentConfig):
    s = config.schedule
    return linear_schedule(s.steps, s.beta_start, s.beta_end)


def _train_path(config: ExperimentConfig, name: str) -> Path:
    return config.data_dir / f"{name}.chds"


def _test_path(config: ExperimentConfig, name: str) -> Path:
    return config.data_dir / f"{name}_test.chds"


def _weights_path(config: ExperimentConfig, name: str) -> Path:
    return config.weights_dir / f"{name}.dmwt"


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def generate_data(config: ExperimentConfig, log=print) -> dict[str, Path]:
    """Write one train and one test CHDS file per environment.

    Train and test samples are drawn in a single pass per environment so both
    share the dataset-level power normalization.
    """
    config.data_dir.mkdir(parents=True, exist_ok=True)
    root = RngStream(config.seed)
    paths = {}
    for env in config.environments:
        full = generate_dataset(
            env.channel, env.train_samples + config.test_samples,
            root.derive("data", env.name),
        )
        train = Dataset(env.channel, full.samples[: env.train_samples],
                        seed=full.seed, stream_id=full.stream_id)
        test = Dataset(env.channel, full.samples[env.train_samples:],
                       seed=full.seed, stream_id=full.stream_id)
        tr_path, te_path = _train_path(config, env.name), _test_path(config, env.name)
        save_dataset(tr_path, train)
        save_dataset(te_path, test)
        paths[env.name] = tr_path
        log(f"{tr_path}  sha256={_sha256(tr_path)}")
        log(f"{te_path}  sha256={_sha256(te_path)}")
    return paths


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise FileNotFoundError(f"missing {path} -- run `chest {hint}` first")
    return path


def train_models(
    config: ExperimentConfig,
    expert: str | None = None,
    aggregated: bool = False,
    log=print,
) -> dict[str, Path]:
    """Train expert denoisers and/or the aggregated one; write DMWT files.

    With no selector, trains everything: one expert per environment plus the
    aggregated model on the union of every environment's training set.
    """
    config.weights_dir.mkdir(parents=True, exist_ok=True)
    schedule = _schedule(config)
    root = RngStream(config.seed)
    if expert is not None and aggregated:
        raise ValueError("choose either one expert or --aggregated, not both")
    if expert is not None:
        names = [expert]
    elif aggregated:
        names = [AGGREGATED_ID]
    else:
        names = [env.name for env in config.environments] + [AGGREGATED_ID]

    out = {}
    with threadpool_limits(limits=1):
        for name in names:
            t0 = time.perf_counter()
            if name == AGGREGATED_ID:
                parts = [
                    load_dataset(_require(_train_path(config, env.name), "gen-data")).samples
                    for env in config.environments
                ]
                samples = np.concatenate(parts, axis=0)
                net_cfg = config.aggregated_network
                epochs = config.training.aggregated_epochs or config.training.epochs
            else:
                env = config.environment(name)
                samples = load_dataset(_require(_train_path(config, name), "gen-data")).samples
                net_cfg = config.expert_network
                epochs = config.training.epochs
            if samples.shape[1:] != (config.nr, config.nt):
                raise ValueError(
                    f"dataset {name} dims {samples.shape[1:]} do not match config "
                    f"({config.nr}, {config.nt})"
                )
            net = DenoiserNetwork(
                config.nr, config.nt, s_init=net_cfg.s_init,
                widths=net_cfg.widths, rng=root.derive("init", name),
            )
            history = train_expert(
                samples, net, schedule, epochs=epochs,
                batch_size=config.training.batch_size,
                learning_rate=config.training.learning_rate,
                rng=root.derive("train", name),
            )
            path = _weights_path(config, name)
            save_expert_weights(path, net, schedule, expert_id=name,
                                training_seed=config.seed)
            loss_path = config.weights_dir / f"loss_{name}.csv"
            with open(loss_path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["epoch", "mean_loss"])
                for i, value in enumerate(history, start=1):
                    writer.writerow([i, f"{value:.8f}"])
            out[name] = path
            log(
                f"trained {name}: {net.num_params} params, {epochs} epochs, "
                f"final loss {history[-1]:.4f}, {time.perf_counter() - t0:.1f}s "
                f"-> {path}  sha256={_sha256(path)}"
            )
    return out


def _load_prior(config: ExperimentConfig, name: str) -> DenoiserPrior:
    net, header = load_expert_weights(_require(_weights_path(config, name), "train"))
    return DenoiserPrior(net, _schedule(config), expert_id=header["expert_id"])


def _build_estimator(config: ExperimentConfig, est_cfg: dict):
    kind = est_cfg["method"]
    kwargs = {k: v for k, v in est_cfg.items() if k != "method"}
    if kind == "rls":
        return RLSChannelEstimator(**kwargs)
    if kind == "lasso":
        return LassoChannelEstimator(**kwargs)
    if kind == "dm":
        return DiffusionChannelEstimator([_load_prior(config, AGGREGATED_ID)], **kwargs)
    if kind == "langevin":
        return LangevinChannelEstimator(_load_prior(config, AGGREGATED_ID), **kwargs)
    if kind == "dmvb":
        priors = [_load_prior(config, env.name) for env in config.environments]
        return DMVBChannelEstimator(priors, **kwargs)
    raise ValueError(f"unknown method {kind!r}")


def _run_cell(raw_config: dict, base_dir: str, method_idx: int,
              env_name: str, snr_db: float, alpha: float) -> dict:
    """One sweep cell: (method, environment, snr, alpha) over the test set."""
    from .config import parse_config  # local import keeps workers lightweight

    config = parse_config(raw_config, base_dir=Path(base_dir))
    est_cfg = config.estimators[method_idx]
    root = RngStream(config.seed)
    with threadpool_limits(limits=1):
        estimator = _build_estimator(config, est_cfg)
        test = load_dataset(_require(_test_path(config, env_name), "gen-data"))
        n_pilots = config.n_pilots(alpha)
        pilots = make_pilots(config.nt, n_pilots, root.derive("pilots", alpha))
        setup = MeasurementSetup(pilots, snr_to_noise_var(config.nt, snr_db))
        Y = simulate_measurement(
            test.samples, setup, root.derive("noise", env_name, snr_db, alpha)
        )
        t0 = time.perf_counter()
        ratios, iters, steps, argmaxes, rho_maxes = [], [], 0, [], []
        for i in range(len(test)):
            report = estimator.estimate(
                Y[i], setup,
                root.derive("est", est_cfg["method"], env_name, snr_db, alpha, i),
            )
            ratios.append(nmse(test.samples[i], report.h_hat))
            iters.append(report.iterations)
            steps += report.reverse_steps
            rho = report.rho
            argmaxes.append(int(np.argmax(rho)))
            rho_maxes.append(float(np.max(rho)))
        wall_ms = (time.perf_counter() - t0) * 1e3
    counts = np.bincount(argmaxes)
    return {
        "config_hash": config_hash(raw_config),
        "method": est_cfg["method"],
        "environment": env_name,
        "snr_db": f"{snr_db:g}",
        "alpha": f"{alpha:g}",
        "seed": str(config.seed),
        "nmse_db": f"{10.0 * np.log10(np.mean(ratios)):.6f}",
        "iters": f"{np.mean(iters):.3f}",
        "reverse_steps": str(steps),
        "wall_ms": f"{wall_ms:.1f}" if config.record_wall_time else "0.0",
        "rho_argmax": str(int(np.argmax(counts))),
        "rho_max": f"{np.mean(rho_maxes):.6f}",
    }


def run_sweep(config: ExperimentConfig, out_csv, log=print) -> Path:
    """Evaluate every (method, environment, snr, alpha) cell and write a CSV.

    Cells run in parallel when ``CHEST_THREADS`` allows; rows are sorted
    before writing so output bytes do not depend on scheduling.
    """
    for env in config.environments:
        _require(_test_path(config, env.name), "gen-data")
    methods = {est["method"] for est in config.estimators}
    if "dm" in methods or "langevin" in methods:
        _require(_weights_path(config, AGGREGATED_ID), "train --aggregated")
    if "dmvb" in methods:
        for env in config.environments:
            _require(_weights_path(config, env.name), f"train --expert {env.name}")

    cells = [
        (i, env.name, snr, alpha)
        for i in range(len(config.estimators))
        for env in config.environments
        for snr in config.snr_db
        for alpha in config.pilot_density
    ]
    workers = min(len(cells), max(1, int(os.environ.get("CHEST_THREADS", "1"))))
    base_dir = str(config.base_dir)

    t0 = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(
                pool.map(
                    _run_cell,
                    *zip(*[(config.raw, base_dir, *cell) for cell in cells]),
                )
            )
    else:
        rows = [_run_cell(config.raw, base_dir, *cell) for cell in cells]
    rows.sort(key=lambda r: (r["method"], r["environment"],
                             float(r["snr_db"]), float(r["alpha"])))
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    log(f"swept {len(cells)} cells in {time.perf_counter() - t0:.1f}s -> {out_csv}")
    return out_csv


def _read_results(in_csv) -> list[dict]:
    rows = []
    with open(in_csv, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(CSV_COLUMNS) - set(reader.fieldnames):
            raise ValueError(f"{in_csv}: missing columns "
                             f"{sorted(set(CSV_COLUMNS) - set(reader.fieldnames or []))}")
        for line_no, row in enumerate(reader, start=2):
            try:
                row["snr_db"] = float(row["snr_db"])
                row["alpha"] = float(row["alpha"])
                row["nmse_db"] = float(row["nmse_db"])
                row["rho_max"] = float(row["rho_max"])
                row["iters"] = float(row["iters"])
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{in_csv}: malformed row at line {line_no}: {exc}")
            rows.append(row)
    if not rows:
        raise ValueError(f"{in_csv}: no data rows")
    return rows


def _aggregate(rows: list[dict], key_fields: tuple[str, ...]) -> list[tuple]:
    """Mean linear NMSE per key, converted back to dB."""
    groups: dict[tuple, list[float]] = {}
    for row in rows:
        key = tuple(row[f] for f in key_fields)
        groups.setdefault(key, []).append(10.0 ** (row["nmse_db"] / 10.0))
    out = []
    for key in sorted(groups):
        out.append(key + (10.0 * np.log10(np.mean(groups[key])),))
    return out


def write_report(in_csv, out_dir, log=print) -> dict[str, Path]:
    """Aggregate a sweep CSV into plot-ready TSV tables.

    dB values are averaged in the linear domain and converted back.  Raises
    on malformed rows (with the line number) and on empty inputs.
    """
    rows = _read_results(in_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = {}

    by_snr = _aggregate(rows, ("method", "snr_db"))
    path = out_dir / "nmse_by_snr.tsv"
    with open(path, "w", newline="") as fh:
        fh.write("method\tsnr_db\tnmse_db\n")
        for method, snr, value in by_snr:
            fh.write(f"{method}\t{snr:g}\t{value:.4f}\n")
    outputs["nmse_by_snr"] = path

    by_alpha = _aggregate(rows, ("method", "alpha"))
    path = out_dir / "nmse_by_alpha.tsv"
    with open(path, "w", newline="") as fh:
        fh.write("method\talpha\tnmse_db\n")
        for method, alpha, value in by_alpha:
            fh.write(f"{method}\t{alpha:g}\t{value:.4f}\n")
    outputs["nmse_by_alpha"] = path

    path = out_dir / "rho_summary.tsv"
    groups: dict[tuple, list] = {}
    for row in rows:
        groups.setdefault((row["method"], row["environment"]), []).append(row)
    with open(path, "w", newline="") as fh:
        fh.write("method\tenvironment\tmean_rho_max\tmodal_rho_argmax\tmean_iters\n")
        for (method, env), grp in sorted(groups.items()):
            mean_rho = np.mean([r["rho_max"] for r in grp])
            argmaxes = [int(r["rho_argmax"]) for r in grp]
            modal = int(np.argmax(np.bincount(argmaxes)))
            mean_iters = np.mean([r["iters"] for r in grp])
            fh.write(f"{method}\t{env}\t{mean_rho:.4f}\t{modal}\t{mean_iters:.2f}\n")
    outputs["rho_summary"] = path

    for name, p in outputs.items():
        log(f"wrote {p}")
    return outputs
