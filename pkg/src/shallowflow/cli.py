"""Command-line interface: spectral analysis, stabilization, training,
attacks, region detection, bound verification, and the experiment drivers.

Exit codes: 0 success, 2 precondition error, 3 convergence error, 4 bound
violation, 5 parse error.
"""

import argparse
import json
import os
import sys

from . import bounds as boundsmod
from . import experiments as expmod
from . import nets as netsmod
from . import training as trainmod
from .errors import PreconditionError, ShallowFlowError
from .linalg import load_matrix, save_matrix
from .spectral import OmegaBox, delta_prime, delta_star, stabilize


def _parse_etas(text):
    return [float(p) for p in text.split(",") if p.strip()]


def _load_dataset(spec, seed, n_points=500, noise=0.1, split="train"):
    if spec == "sine":
        if split == "test":
            return trainmod.sine_test_set()
        return trainmod.gen_sine(n_points, seed)
    if spec == "moons":
        return trainmod.gen_two_moons(n_points, noise, seed, split=split)
    if spec.startswith("csv:"):
        return trainmod.load_csv(spec[4:], split=split)
    if spec.startswith("mnist:"):
        directory = spec[6:]
        name = "t10k" if split == "test" else "train"
        return trainmod.load_idx(
            os.path.join(directory, f"{name}-images-idx3-ubyte"),
            os.path.join(directory, f"{name}-labels-idx1-ubyte"),
            split=split,
        )
    raise PreconditionError(f"unknown dataset spec {spec!r}")


def _cmd_lognorm(args):
    A = load_matrix(args.matrix)
    box = OmegaBox(dim=A.shape[0], alpha=args.alpha)
    res = delta_star(A, box)
    dprime = delta_prime(A, box)
    mask = "".join("1" if b else "0" for b in res.argmax)
    print(
        json.dumps(
            {
                "delta_star": res.value,
                "delta_prime": dprime,
                "argmax_mask": mask,
                "method": res.method,
            }
        )
    )
    return 0


def _cmd_stabilize(args):
    A = load_matrix(args.matrix)
    box = OmegaBox(dim=A.shape[0], alpha=args.alpha)
    result = stabilize(A, box, args.delta)
    save_matrix(args.out, result.Delta)
    print(
        json.dumps(
            {
                "delta_target": result.delta_target,
                "delta_achieved": result.delta_achieved,
                "frob_norm": result.frob_norm,
                "baseline_norm": result.baseline_norm,
                "iterations": result.iterations,
            }
        )
    )
    return 0


def _cmd_train(args):
    from . import flow as flowmod

    seed = args.seed
    data = _load_dataset(args.dataset, seed, n_points=args.n, noise=args.noise)
    test = None
    if args.dataset in ("sine", "moons") or args.dataset.startswith("mnist:"):
        test = _load_dataset(
            args.dataset, expmod.seed_for("cli-test", seed), n_points=args.n,
            noise=args.noise, split="test",
        )
    activation = flowmod.leaky_relu(args.alpha)
    m = data.inputs.shape[1]
    if data.task == trainmod.CLASSIFICATION:
        n_out = int(data.targets.max()) + 1
    else:
        n_out = data.targets.shape[1]
    net = expmod._make_net(
        args.arch, m, args.d, n_out, activation, args.euler_steps,
        expmod.seed_for("cli-init", args.arch, seed),
    )
    constraint = None
    if args.constraint is not None:
        constraint = netsmod.NormConstraint(c1=args.constraint[0], c2=args.constraint[1])
    tc = trainmod.TrainConfig(
        epochs=args.epochs,
        batch=args.batch,
        seed=seed,
        constraint=constraint,
        freeze_ode=args.freeze_ode,
    )
    net, history = trainmod.train(net, data, tc, test_data=test)
    netsmod.save_model(args.out, net)
    history_path = args.history or args.out + ".history.csv"
    with open(history_path, "w") as fh:
        fh.write("\n".join(trainmod.history_csv_lines(history)) + "\n")
    print(json.dumps({"model": args.out, "history": history_path,
                      "final_train_loss": history[-1][2] if history else None}))
    return 0


def _cmd_attack(args):
    net = netsmod.load_model(args.model)
    data = _load_dataset(args.dataset, args.seed, n_points=args.n, split="test")
    report = trainmod.attack_curve(net, data, _parse_etas(args.etas))
    lines = ["eta,accuracy"]
    for eta, acc in zip(report.etas, report.accuracies):
        lines.append(f"{eta:.17g},{acc:.17g}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    else:
        print("\n".join(lines))
    return 0


def _parse_grid_spec(text):
    """Grid spec 'box=lo1,hi1,lo2,hi2,...;h=0.05'."""
    box = None
    h = None
    for part in text.split(";"):
        key, _, value = part.partition("=")
        if key.strip() == "box":
            vals = [float(v) for v in value.split(",")]
            if len(vals) % 2 != 0:
                raise PreconditionError("grid box needs an even number of bounds")
            box = [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
        elif key.strip() == "h":
            h = float(value)
        else:
            raise PreconditionError(f"unknown grid field {key!r}")
    if box is None or h is None:
        raise PreconditionError("grid spec needs box=... and h=...")
    return boundsmod.grid_from_box(box, h)


def _resolve_grid(args, fallback_points=None):
    if getattr(args, "grid", None):
        return _parse_grid_spec(args.grid)
    if getattr(args, "points", None):
        ds = trainmod.load_csv(args.points)
        return boundsmod.grid_from_points(ds.inputs)
    if fallback_points is not None:
        return boundsmod.grid_from_points(fallback_points)
    raise PreconditionError("pass --grid or --points")


def _net_pair(args):
    net = netsmod.load_model(args.model)
    netbar = netsmod.load_model(args.stabilized)
    Delta = netbar.ode.A - net.ode.A
    box = OmegaBox(dim=net.ode.dim, alpha=net.ode.activation.alpha)
    return net, netbar, Delta, box


def _cmd_region(args):
    net, netbar, Delta, box = _net_pair(args)
    grid = _resolve_grid(args)
    rm = boundsmod.region_map(
        net, netbar, Delta, grid, box, tbar=args.tbar, tstep=args.tstep,
        euler_step=args.euler_step,
    )
    m = grid.points.shape[1]
    header = [f"x{i + 1}" for i in range(m)] + ["eta", "holds", "undefined"]
    lines = [",".join(header)]
    for i, x in enumerate(grid.points):
        cells = [f"{v:.17g}" for v in x]
        cells.append(f"{rm.eta[i]:.17g}")
        cells.append(str(int(rm.holds[i])))
        cells.append(str(int(rm.undefined[i])))
        lines.append(",".join(cells))
    with open(args.out, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    print(json.dumps({"points": len(grid), "fraction_green": rm.fraction_green}))
    return 0


def _cmd_bounds(args):
    net, netbar, Delta, box = _net_pair(args)
    if args.target == "self":
        oracle = None
        grid = _resolve_grid(args)
    elif args.target.startswith("csv:"):
        ds = trainmod.load_csv(args.target[4:])
        if ds.task != trainmod.REGRESSION:
            raise PreconditionError("bound targets need y columns, not labels")
        grid = boundsmod.grid_from_points(ds.inputs)
        targets = ds.targets

        def oracle(X):
            if X.shape[0] != targets.shape[0]:
                raise PreconditionError("target csv points do not match the grid")
            return targets

    else:
        raise PreconditionError(f"unknown target {args.target!r}")
    report = boundsmod.verify_bounds(
        oracle, net, netbar, Delta, grid, box, tbar=args.tbar
    )
    print(json.dumps({k: getattr(report, k) for k in report.__dataclass_fields__}))
    return 0


def _cmd_experiment(args):
    overrides = {}
    if args.config:
        overrides.update(expmod.parse_config_file(args.config))
    for item in args.set or []:
        key, _, value = item.partition("=")
        if not _:
            raise PreconditionError(f"override {item!r} is not key=value")
        overrides[key.strip()] = value.strip()
    seeds = tuple(args.seeds) if args.seeds else (args.seed,)
    config = expmod.ExperimentConfig(
        experiment=args.name, seeds=seeds, out_dir=args.out_dir, overrides=overrides
    )
    os.makedirs(args.out_dir, exist_ok=True)
    if args.name == "efficiency":
        expmod.run_efficiency(config)
    elif args.name == "example1":
        expmod.run_example1(config, verify=args.verify)
    elif args.name == "example2":
        expmod.run_example2(config)
    elif args.name == "mnist-desk":
        expmod.run_mnist_desk(config)
    else:
        raise PreconditionError(f"unknown experiment {args.name!r}")
    print(json.dumps({"experiment": args.name, "out_dir": args.out_dir}))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shallowflow",
        description="Shallow nets with ODE flow-map activations: analysis and experiments",
    )
    parser.add_argument("--seed", type=int, default=0, help="global seed")
    parser.add_argument("--out-dir", default="out", help="experiment output directory")
    parser.add_argument("--config", help="flat key = value configuration file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lognorm", help="delta_star / delta_prime of a matrix")
    p.add_argument("--matrix", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.set_defaults(func=_cmd_lognorm)

    p = sub.add_parser("stabilize", help="minimal-norm perturbation to a target")
    p.add_argument("--matrix", required=True)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_stabilize)

    p = sub.add_parser("train", help="train one architecture on a dataset")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--arch", choices=["flow", "shallow", "two-hidden"], required=True)
    p.add_argument("--dataset", required=True, help="sine|moons|csv:<path>|mnist:<dir>")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, default=500, help="generated training points")
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--euler-steps", type=int, default=20)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--batch", type=int, default=0)
    p.add_argument("--constraint", type=float, nargs=2, metavar=("C1", "C2"))
    p.add_argument("--freeze-ode", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--history")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="sign-attack accuracy curve")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--etas", default="0,0.02,0.04,0.06,0.08,0.1,0.12")
    p.add_argument("--out")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("region", help="cosine-test region map over a grid")
    p.add_argument("--model", required=True)
    p.add_argument("--stabilized", required=True)
    p.add_argument("--grid", help='e.g. "box=-1,1,-1,1;h=0.05"')
    p.add_argument("--points", help="csv of evaluation points")
    p.add_argument("--tbar", type=float, default=0.3)
    p.add_argument("--tstep", type=float, default=0.05)
    p.add_argument("--euler-step", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_region)

    p = sub.add_parser("bounds", help="verify the approximation bounds")
    p.add_argument("--model", required=True)
    p.add_argument("--stabilized", required=True)
    p.add_argument("--target", default="self", help="self|csv:<path>")
    p.add_argument("--grid")
    p.add_argument("--points")
    p.add_argument("--tbar", type=float, default=0.3)
    p.set_defaults(func=_cmd_bounds)

    p = sub.add_parser("experiment", help="run a full experiment")
    p.add_argument("name", choices=["efficiency", "example1", "example2", "mnist-desk"])
    p.add_argument("--seeds", type=int, nargs="*")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--verify", action="store_true", help="example1: verify bounds")
    p.set_defaults(func=_cmd_experiment)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ShallowFlowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
