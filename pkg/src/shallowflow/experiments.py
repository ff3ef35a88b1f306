"""Desk-scale experiment drivers behind the CLI: the parameter-efficiency
sweep, the two randomized region-detection replications, the Two Moons
stabilization study, and the MNIST-subset robustness run.

Each run resolves a flat key=value configuration, serializes it next to the
outputs, and stamps every CSV with the configuration hash, so reruns with the
same configuration are bitwise identical.
"""

import hashlib
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import bounds as boundsmod
from . import flow as flowmod
from . import nets as netsmod
from . import training as trainmod
from .errors import ConvergenceError, PreconditionError
from .spectral import OmegaBox, delta_star, stabilize

ALPHA_DEFAULT = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seeds: tuple = (0,)
    out_dir: str = "."
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.seeds:
            raise PreconditionError("seeds must be non-empty")


def seed_for(*parts):
    """Stable derived seed from heterogeneous parts."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode()).digest()
    return int.from_bytes(digest[:4], "big")


def config_hash(mapping):
    text = "".join(f"{k} = {mapping[k]}\n" for k in sorted(mapping))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def write_config(out_dir, mapping):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.txt")
    with open(path, "w") as fh:
        for k in sorted(mapping):
            fh.write(f"{k} = {mapping[k]}\n")
    return config_hash(mapping)


def parse_config_file(path):
    mapping = {}
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise PreconditionError(f"{path}: expected key = value at line {ln}")
            key, _, value = line.partition("=")
            mapping[key.strip()] = value.strip()
    return mapping


def resolve_config(defaults, overrides):
    """Merge string overrides into typed defaults; unknown keys are errors."""
    resolved = dict(defaults)
    for key, raw in overrides.items():
        if key not in defaults:
            raise PreconditionError(f"unknown configuration key {key!r}")
        ref = defaults[key]
        if isinstance(ref, bool):
            resolved[key] = str(raw).lower() in ("1", "true", "yes")
        elif isinstance(ref, int):
            resolved[key] = int(raw)
        elif isinstance(ref, float):
            resolved[key] = float(raw)
        elif isinstance(ref, tuple):
            parts = [p for p in str(raw).replace(";", ",").split(",") if p.strip()]
            kind = type(ref[0]) if ref else float
            resolved[key] = tuple(kind(p) for p in parts)
        else:
            resolved[key] = str(raw)
    return resolved


def _fmt_cell(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_csv(path, header, rows, cfg_hash):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")
        fh.write(f"# config-hash={cfg_hash}\n")


# ---------------------------------------------------------------------------
# Parameter-efficiency sweep: three architectures on the sine task.

EFFICIENCY_DEFAULTS = {
    "train_sizes": (10, 50, 100, 500, 1000),
    "widths": (5, 10, 50, 100),
    "epochs": 1000,
    "alpha": ALPHA_DEFAULT,
    "euler_steps": 20,
    "lr_max": 1e-2,
    "lr_min": 1e-4,
    "cycle_len": 100,
}


def _make_net(arch, m, d, n, activation, euler_steps, seed):
    if arch == netsmod.ARCH_FLOW:
        return netsmod.init_flow_net(m, d, n, activation, euler_steps, seed)
    if arch == netsmod.ARCH_SHALLOW:
        return netsmod.init_sigma_net(m, d, n, activation, seed)
    return netsmod.matched_two_hidden(m, d, n, activation, seed)


def run_efficiency(config: ExperimentConfig):
    """Train all three architectures for every (N, d) pair on shared data."""
    cfg = resolve_config(EFFICIENCY_DEFAULTS, config.overrides)
    cfg["experiment"] = "efficiency"
    cfg["seeds"] = ",".join(str(s) for s in config.seeds)
    hash_ = write_config(config.out_dir, cfg)
    activation = flowmod.leaky_relu(cfg["alpha"])
    test = trainmod.sine_test_set()
    rows = []
    for seed in config.seeds:
        for n_train in cfg["train_sizes"]:
            for d in cfg["widths"]:
                data = trainmod.gen_sine(n_train, seed_for("sine", seed, n_train, d))
                for arch in (
                    netsmod.ARCH_SHALLOW,
                    netsmod.ARCH_FLOW,
                    netsmod.ARCH_TWO_HIDDEN,
                ):
                    net = _make_net(
                        arch, 1, d, 1, activation, cfg["euler_steps"],
                        seed_for("init", arch, seed, n_train, d),
                    )
                    tc = trainmod.TrainConfig(
                        epochs=cfg["epochs"],
                        lr_max=cfg["lr_max"],
                        lr_min=cfg["lr_min"],
                        cycle_len=cfg["cycle_len"],
                        seed=seed_for("train", arch, seed, n_train, d),
                    )
                    try:
                        net, _ = trainmod.train(net, data, tc)
                        test_mse = trainmod.evaluate_loss(net, test)
                    except ConvergenceError:
                        test_mse = math.nan
                    rows.append((arch, n_train, d, seed, test_mse))
    write_csv(
        os.path.join(config.out_dir, "efficiency.csv"),
        ["arch", "N", "d", "seed", "test_mse"],
        rows,
        hash_,
    )
    return rows


# ---------------------------------------------------------------------------
# Randomized region-detection replication on [-1, 1]^2.

EXAMPLE1_DEFAULTS = {
    "dim": 2,
    "alpha": ALPHA_DEFAULT,
    "offsets": (0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09),
    "laws": ("uniform", "normal"),
    "grid_h": 0.05,
    "tbar": 0.3,
    "tstep": 0.05,
    "euler_step": 0.05,
}


def _identity_flow_net(ode):
    d = ode.dim
    return netsmod.ShallowFlowNet(
        A1=np.eye(d), b1=np.zeros(d), ode=ode, A2=np.eye(d), b2=np.zeros(d)
    )


def draw_random_ode(law, dim, alpha, seed, euler_steps=20):
    rng = np.random.default_rng(seed)
    if law == "uniform":
        A = rng.uniform(0.0, 1.0, size=(dim, dim))
        b = rng.uniform(0.0, 1.0, size=dim)
    elif law == "normal":
        A = rng.standard_normal((dim, dim))
        b = rng.standard_normal(dim)
    else:
        raise PreconditionError(f"unknown sampling law {law!r}")
    return flowmod.NeuralOde(
        A=A, b=b, activation=flowmod.leaky_relu(alpha), euler_steps=euler_steps
    )


def run_example1(config: ExperimentConfig, verify=False):
    """Region detection across sampling laws, seeds, and stabilization offsets.

    With ``verify`` the tight-integrator bound verification runs per instance
    (raising on any violation); the CSV rows are unaffected.
    """
    cfg = resolve_config(EXAMPLE1_DEFAULTS, config.overrides)
    cfg["experiment"] = "example1"
    cfg["seeds"] = ",".join(str(s) for s in config.seeds)
    hash_ = write_config(config.out_dir, cfg)
    box = OmegaBox(dim=cfg["dim"], alpha=cfg["alpha"])
    euler_steps = int(round(1.0 / cfg["euler_step"]))
    grid = boundsmod.grid_from_box([(-1.0, 1.0)] * cfg["dim"], cfg["grid_h"])
    rows = []
    for law in cfg["laws"]:
        for seed in config.seeds:
            ode = draw_random_ode(
                law, cfg["dim"], cfg["alpha"], seed_for("ex1", law, seed), euler_steps
            )
            net = _identity_flow_net(ode)
            dstar = delta_star(ode.A, box).value
            warm = None
            for offset in cfg["offsets"]:
                try:
                    stab = stabilize(ode.A, box, dstar - offset, init_delta=warm)
                except ConvergenceError:
                    rows.append((law, seed, offset, math.nan))
                    continue
                warm = stab.Delta
                netbar = netsmod.stabilized(net, stab)
                rm = boundsmod.region_map(
                    net,
                    netbar,
                    stab.Delta,
                    grid,
                    box,
                    tbar=cfg["tbar"],
                    tstep=cfg["tstep"],
                    euler_step=cfg["euler_step"],
                )
                if verify:
                    boundsmod.verify_bounds(
                        None, net, netbar, stab.Delta, grid, box, tbar=cfg["tbar"]
                    )
                rows.append((law, seed, offset, rm.fraction_green))
    write_csv(
        os.path.join(config.out_dir, "example1.csv"),
        ["law", "seed", "delta_offset", "fraction_green"],
        rows,
        hash_,
    )
    summary = summarize_example1(rows)
    write_csv(
        os.path.join(config.out_dir, "example1_summary.csv"),
        ["law", "delta_offset", "mean_fraction_green", "std_fraction_green"],
        summary,
        hash_,
    )
    return rows, summary


def summarize_example1(rows):
    """Per (law, offset) mean and standard deviation of the green fraction."""
    groups = {}
    for law, _seed, offset, frac in rows:
        groups.setdefault((law, offset), []).append(frac)
    out = []
    for (law, offset), vals in sorted(groups.items()):
        arr = np.asarray(vals, dtype=np.float64)
        out.append((law, offset, float(arr.mean()), float(arr.std())))
    return out


# ---------------------------------------------------------------------------
# Two Moons stabilization study.

EXAMPLE2_DEFAULTS = {
    "n_points": 1000,
    "noise": 0.1,
    "test_fraction": 0.2,
    "d": 4,
    "alpha": ALPHA_DEFAULT,
    "euler_steps": 20,
    "epochs": 1000,
    "lr_max": 1e-2,
    "lr_min": 1e-4,
    "cycle_len": 100,
    "max_retries": 5,
    "near_offsets": (0.006, 0.004, 0.002),
    "far_offsets": (3.0, 2.0, 1.0),
    "tbar": 0.3,
    "tstep": 0.05,
}


def train_two_moons(cfg, base_seed):
    """Train to 100% training accuracy, retrying with fresh seeds.

    Returns (net, dataset, train split, test split, used seed).
    """
    activation = flowmod.leaky_relu(cfg["alpha"])
    for attempt in range(cfg["max_retries"]):
        seed = seed_for("ex2", base_seed, attempt)
        ds = trainmod.gen_two_moons(cfg["n_points"], cfg["noise"], seed)
        n_test = int(cfg["test_fraction"] * len(ds))
        train_ds = trainmod.Dataset(
            inputs=ds.inputs[n_test:], targets=ds.targets[n_test:],
            task=ds.task, split="train",
        )
        test_ds = trainmod.Dataset(
            inputs=ds.inputs[:n_test], targets=ds.targets[:n_test],
            task=ds.task, split="test",
        )
        net = netsmod.init_flow_net(
            2, cfg["d"], 2, activation, cfg["euler_steps"], seed_for("ex2net", seed)
        )
        tc = trainmod.TrainConfig(
            epochs=cfg["epochs"],
            lr_max=cfg["lr_max"],
            lr_min=cfg["lr_min"],
            cycle_len=cfg["cycle_len"],
            seed=seed_for("ex2train", seed),
        )
        net, _ = trainmod.train(net, train_ds, tc)
        if trainmod.accuracy(net, train_ds) == 1.0:
            return net, ds, train_ds, test_ds, seed
    raise ConvergenceError(
        f"two moons training missed 100% accuracy in {cfg['max_retries']} attempts"
    )


def run_example2(config: ExperimentConfig):
    """Stabilize the trained net at near and far targets; report the green
    fraction over the dataset points and the stabilized accuracy."""
    cfg = resolve_config(EXAMPLE2_DEFAULTS, config.overrides)
    cfg["experiment"] = "example2"
    cfg["seeds"] = ",".join(str(s) for s in config.seeds)
    hash_ = write_config(config.out_dir, cfg)
    net, ds, train_ds, test_ds, used_seed = train_two_moons(cfg, config.seeds[0])
    box = OmegaBox(dim=cfg["d"], alpha=cfg["alpha"])
    dstar = delta_star(net.ode.A, box).value
    grid = boundsmod.grid_from_points(ds.inputs)
    rows = []
    warm = None
    for offset in tuple(cfg["near_offsets"]) + tuple(cfg["far_offsets"]):
        stab = stabilize(net.ode.A, box, dstar - offset, init_delta=warm)
        warm = stab.Delta
        netbar = netsmod.stabilized(net, stab)
        rm = boundsmod.region_map(
            net, netbar, stab.Delta, grid, box, tbar=cfg["tbar"], tstep=cfg["tstep"],
            euler_step=1.0 / cfg["euler_steps"],
        )
        rows.append((dstar - offset, rm.fraction_green, trainmod.accuracy(netbar, ds)))
    write_csv(
        os.path.join(config.out_dir, "example2.csv"),
        ["delta", "fraction_green", "accuracy"],
        rows,
        hash_,
    )
    meta = [
        ("delta_star", dstar),
        ("clean_accuracy", trainmod.accuracy(net, ds)),
        ("train_accuracy", trainmod.accuracy(net, train_ds)),
        ("test_accuracy", trainmod.accuracy(net, test_ds)),
        ("used_seed", used_seed),
    ]
    write_csv(
        os.path.join(config.out_dir, "example2_meta.csv"),
        ["key", "value"],
        meta,
        hash_,
    )
    return rows, dict(meta), net, ds


# ---------------------------------------------------------------------------
# MNIST-subset robustness run.

MNIST_DESK_DEFAULTS = {
    "data_dir": "",
    "subset": 2000,
    "test_subset": 1000,
    "d": 64,
    "alpha": ALPHA_DEFAULT,
    "euler_steps": 20,
    "epochs": 60,
    "retrain_epochs": 40,
    "c1": 2.0,
    "lr_max": 1e-2,
    "lr_min": 1e-4,
    "cycle_len": 20,
    "batch": 200,
    "delta_offsets": (2.0, 1.0, 0.0),
    "etas": (0.0, 0.02, 0.04, 0.06, 0.08, 0.1, 0.12),
}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _mnist_paths(data_dir):
    paths = {}
    missing = []
    for key, name in MNIST_FILES.items():
        path = os.path.join(data_dir, name)
        if not os.path.exists(path):
            missing.append(name)
        paths[key] = path
    if missing:
        raise PreconditionError(
            "missing MNIST IDX files: "
            + ", ".join(missing)
            + f" (expected under {data_dir!r}; download the four classic IDX files, "
            "e.g. from https://ossci-datasets.s3.amazonaws.com/mnist/, gunzip them, "
            "and pass the directory via data_dir)"
        )
    return paths


def _subset(ds, count, seed):
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(ds), size=min(count, len(ds)), replace=False)
    return trainmod.Dataset(
        inputs=ds.inputs[idx], targets=ds.targets[idx], task=ds.task, split=ds.split
    )


def run_mnist_desk(config: ExperimentConfig):
    """Constrained training on an MNIST subset, attack curve, and the
    frozen-flow retraining comparison at a few stabilization targets."""
    cfg = resolve_config(MNIST_DESK_DEFAULTS, config.overrides)
    cfg["experiment"] = "mnist-desk"
    cfg["seeds"] = ",".join(str(s) for s in config.seeds)
    hash_ = write_config(config.out_dir, cfg)
    paths = _mnist_paths(cfg["data_dir"])
    seed = config.seeds[0]
    train_full = trainmod.load_idx(paths["train_images"], paths["train_labels"])
    test_full = trainmod.load_idx(
        paths["test_images"], paths["test_labels"], split="test"
    )
    train_ds = _subset(train_full, cfg["subset"], seed_for("mnist-train", seed))
    test_ds = _subset(test_full, cfg["test_subset"], seed_for("mnist-test", seed))

    activation = flowmod.leaky_relu(cfg["alpha"])
    m = train_ds.inputs.shape[1]
    n_classes = int(train_ds.targets.max()) + 1
    constraint = netsmod.NormConstraint(c1=cfg["c1"], c2=1.0)
    net = netsmod.init_flow_net(
        m, cfg["d"], n_classes, activation, cfg["euler_steps"], seed_for("mnist-net", seed)
    )
    tc = trainmod.TrainConfig(
        epochs=cfg["epochs"],
        batch=cfg["batch"],
        lr_max=cfg["lr_max"],
        lr_min=cfg["lr_min"],
        cycle_len=cfg["cycle_len"],
        seed=seed_for("mnist-sgd", seed),
        constraint=constraint,
    )
    net, _ = trainmod.train(net, train_ds, tc)

    box = OmegaBox(dim=cfg["d"], alpha=cfg["alpha"])
    dstar_res = delta_star(net.ode.A, box)
    dstar = dstar_res.value

    report = trainmod.attack_curve(net, test_ds, cfg["etas"])
    write_csv(
        os.path.join(config.out_dir, "mnist_attack.csv"),
        ["eta", "accuracy"],
        list(zip(report.etas, report.accuracies)),
        hash_,
    )

    rows = []
    for offset in cfg["delta_offsets"]:
        if offset == 0.0:
            netbar = net
            achieved = dstar
        else:
            stab = stabilize(net.ode.A, box, dstar - offset)
            netbar = netsmod.stabilized(net, stab)
            achieved = stab.delta_achieved
        rc = trainmod.TrainConfig(
            epochs=cfg["retrain_epochs"],
            batch=cfg["batch"],
            lr_max=cfg["lr_max"],
            lr_min=cfg["lr_min"],
            cycle_len=cfg["cycle_len"],
            seed=seed_for("mnist-retrain", seed, offset),
            constraint=constraint,
            freeze_ode=True,
        )
        retrained, _ = trainmod.train(netbar, train_ds, rc)
        rows.append(
            (
                achieved,
                trainmod.accuracy(netbar, test_ds),
                trainmod.accuracy(retrained, test_ds),
            )
        )
    write_csv(
        os.path.join(config.out_dir, "mnist_stabilized.csv"),
        ["delta", "acc_stabilized", "acc_retrained"],
        rows,
        hash_,
    )
    meta = [("delta_star", dstar), ("delta_star_method", dstar_res.method)]
    write_csv(
        os.path.join(config.out_dir, "mnist_meta.csv"), ["key", "value"], meta, hash_
    )
    return rows
