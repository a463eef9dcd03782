"""Command-line entry point.

Every run writes ``config.json`` into its output directory with the fully
resolved parameters. Passing that file back through ``--config`` repeats the
run; flags given explicitly on the command line win over the file.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import evaluation, features, latent, voxels
from .checkpoint import CheckpointError, load_checkpoint
from .models import ScaleProfile, load_profile
from .rng import RngStream, sample_latent
from .synthetic import KINDS, PLACEMENTS, SyntheticSpec, make_synthetic_dataset, read_dataset, write_dataset
from .training import GanTrainConfig, NumericalError, VaeGanTrainConfig, train

logger = logging.getLogger("voxgan")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
CONFIG_NAME = "config.json"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


# -- helpers ----------------------------------------------------------------

def _profile(name: str) -> ScaleProfile:
    try:
        return load_profile(name)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    except (ValueError, TypeError, json.JSONDecodeError) as exc:
        raise UsageError(f"bad profile {name!r}: {exc}") from None


def _existing(path: Optional[str], what: str) -> Path:
    if path is None:
        raise UsageError(f"--{what} is required")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} path does not exist: {p}")
    return p


def _load_ckpt(path: Optional[str], profile: Optional[ScaleProfile] = None):
    p = _existing(path, "checkpoint")
    try:
        ckpt = load_checkpoint(p)
    except CheckpointError as exc:
        raise DataError(f"{p}: {exc}") from None
    if profile is not None and ckpt.profile != profile:
        raise UsageError(f"checkpoint {p} was trained with profile {ckpt.profile.name!r} "
                         f"(resolution {ckpt.profile.resolution}), not {profile.name!r}")
    return ckpt


def _load_data(path: Optional[str], profile: Optional[ScaleProfile] = None):
    p = _existing(path, "data")
    try:
        items, manifest = read_dataset(p)
    except (FileNotFoundError, voxels.BinvoxError, KeyError, ValueError, OSError) as exc:
        raise DataError(f"cannot read dataset {p}: {exc}") from None
    if not items:
        raise DataError(f"dataset {p} is empty")
    if profile is not None and items[0].grid.shape[0] != profile.resolution:
        raise UsageError(f"dataset {p} has resolution {items[0].grid.shape[0]}, "
                         f"profile {profile.name!r} expects {profile.resolution}")
    return items, manifest


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_object(out: Path, stem: str, grid: np.ndarray, threshold: float, clean: bool,
                  values: Optional[np.ndarray] = None) -> None:
    """Raw float32 grid plus an OBJ surface (largest component when cleaning)."""
    voxels.write_raw(out / f"{stem}.raw", grid)
    shape = voxels.largest_connected_component(grid, threshold) if clean else grid
    (out / f"{stem}.obj").write_text(voxels.export_obj(shape, threshold))
    if values is not None:
        (out / f"{stem}.csv").write_text(voxels.voxel_values_csv(shape, values, threshold))


def _latent_file(path: str, dim: int) -> np.ndarray:
    p = _existing(path, "latent")
    try:
        z = np.load(p, allow_pickle=False).astype(np.float32).ravel()
    except (ValueError, OSError) as exc:
        raise DataError(f"cannot read latent vector {p}: {exc}") from None
    if z.size != dim:
        raise DataError(f"{p} holds a {z.size}-d vector, checkpoint expects {dim}")
    return z


def _int_list(text: str) -> List[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _float_list(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t.strip()]


# -- subcommands ----------------------------------------------------------------

def cmd_make_data(args) -> dict:
    profile = _profile(args.profile)
    kinds = tuple(k.strip() for k in args.classes.split(",") if k.strip())
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise UsageError(f"unknown classes {bad}; choose from {','.join(KINDS)}")
    spec = SyntheticSpec(kinds=kinds, seed=args.seed, placement=args.placement)
    items = make_synthetic_dataset(spec, args.n, profile.resolution, profile.image_size)
    write_dataset(items, _out(args), kinds)
    return {"items": len(items)}


def _train_config(args, profile: ScaleProfile):
    batch = args.batch_size if args.batch_size is not None else (100 if profile.name == "full" else 32)
    common = dict(lr_g=args.lr_g, lr_d=args.lr_d, batch_size=batch, d_accuracy_gate=args.gate, seed=args.seed,
                  epochs=args.epochs, checkpoint_every=args.checkpoint_every)
    if args.kind == "gan":
        return GanTrainConfig(**common)
    return VaeGanTrainConfig(alpha1=args.alpha1, alpha2=args.alpha2, **common)


def cmd_train(args) -> dict:
    profile = _profile(args.profile)
    items, _ = _load_data(args.data, profile)
    try:
        config = _train_config(args, profile)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    nets = None
    if args.checkpoint:
        nets = dict(_load_ckpt(args.checkpoint, profile).nets)
        if args.kind == "vaegan" and "E" not in nets:
            raise UsageError(f"checkpoint {args.checkpoint} has no encoder to continue VAE-GAN training")
    ckpt, log = train(args.kind, items, config, profile, out_dir=_out(args), nets=nets)
    return {"batches": len(log), "final_checkpoint": "final.vxg"}


def _generator(args):
    profile = _profile(args.profile)
    ckpt = _load_ckpt(args.checkpoint, profile)
    return ckpt.nets["G"], ckpt.prior


def cmd_sample(args) -> dict:
    G, prior = _generator(args)
    out = _out(args)
    zs = sample_latent(RngStream(args.seed).child("sample"), prior, G.profile.latent_dim, args.n, G.dtype)
    for i, z in enumerate(zs):
        np.save(out / f"z_{i:03d}.npy", z, allow_pickle=False)
        _write_object(out, f"sample_{i:03d}", latent.generate(G, z), args.threshold, args.clean)
    return {"samples": args.n}


def _endpoint(args, G, prior, path, name):
    if path:
        return _latent_file(path, G.profile.latent_dim)
    return sample_latent(RngStream(args.seed).child(name), prior, G.profile.latent_dim, dtype=G.dtype)


def cmd_interpolate(args) -> dict:
    G, prior = _generator(args)
    if args.steps < 2:
        raise UsageError("--steps must be >= 2")
    out = _out(args)
    z1 = _endpoint(args, G, prior, args.z1, "z1")
    z2 = _endpoint(args, G, prior, args.z2, "z2")
    np.save(out / "z_start.npy", z1, allow_pickle=False)
    np.save(out / "z_end.npy", z2, allow_pickle=False)
    for i, g in enumerate(latent.interpolate(G, z1, z2, args.steps)):
        _write_object(out, f"interp_{i:03d}", g, args.threshold, args.clean)
    return {"steps": args.steps}


def cmd_arith(args) -> dict:
    G, prior = _generator(args)
    dim = G.profile.latent_dim
    za, zb, zc = (_latent_file(p, dim) for p in (args.a, args.b, args.c))
    out = _out(args)
    z = latent.arithmetic_code(za, zb, zc, prior, G.dtype)
    np.save(out / "z_result.npy", z, allow_pickle=False)
    _write_object(out, "arith", latent.generate(G, z), args.threshold, args.clean)
    return {}


def cmd_sweep(args) -> dict:
    G, prior = _generator(args)
    out = _out(args)
    z0 = _endpoint(args, G, prior, args.z, "z0")
    if args.values:
        values = _float_list(args.values)
    else:
        lo, hi = (0.0, 1.0) if prior == "uniform01" else (-2.0, 2.0)
        values = list(np.linspace(lo, hi, args.n_values))
    try:
        res = latent.sweep_dimension(G, z0, args.dim, values, prior, args.threshold)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    np.save(out / "z_base.npy", z0, allow_pickle=False)
    for i, g in enumerate(res.grids):
        _write_object(out, f"sweep_{i:03d}", g, args.threshold, args.clean)
    voxels.write_raw(out / "mask.raw", res.mask.astype(np.float32))
    (out / "mask.obj").write_text(voxels.export_obj(res.mask.astype(np.float32)))
    return {"changed_voxels": int(res.mask.sum())}


def _split(items, test_fraction: float, seed: int):
    labels = np.array([it.label for it in items])
    rng = RngStream(seed).child("split")
    test = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        k = max(1, int(round(test_fraction * idx.size)))
        test.extend(idx[rng.permutation(idx.size)[:k]].tolist())
    test = np.array(sorted(test))
    train_idx = np.setdiff1d(np.arange(len(items)), test)
    return train_idx, test


def cmd_classify(args) -> dict:
    profile = _profile(args.profile)
    D = _load_ckpt(args.checkpoint, profile).nets["D"]
    items, manifest = _load_data(args.data, profile)
    if args.test_data:
        test_items, _ = _load_data(args.test_data, profile)
        train_items = items
    else:
        tr, te = _split(items, args.test_fraction, args.seed)
        train_items, test_items = [items[i] for i in tr], [items[i] for i in te]
    grids_tr = np.stack([it.grid for it in train_items])
    grids_te = np.stack([it.grid for it in test_items])
    y_tr = np.array([it.label for it in train_items])
    y_te = np.array([it.label for it in test_items])
    if np.unique(y_tr).size < 2:
        raise DataError("classification needs at least two classes in the training split")
    out = _out(args)
    try:
        f_tr, layout = features.extract_feature_matrix(D, grids_tr)
    except features.UnsupportedProfileError as exc:
        raise UsageError(str(exc)) from None
    f_te, _ = features.extract_feature_matrix(D, grids_te)
    rows = ["representation,train_accuracy,test_accuracy,converged"]
    result = {}
    for name, Xtr, Xte in (("discriminator", f_tr, f_te),
                           ("voxels", features.raw_voxel_features(grids_tr), features.raw_voxel_features(grids_te))):
        model = features.svm_train(Xtr, y_tr, C=args.C, balanced=True)
        acc_tr = features.accuracy(model, Xtr, y_tr)
        acc_te = features.accuracy(model, Xte, y_te)
        rows.append(f"{name},{acc_tr:.6f},{acc_te:.6f},{int(model.converged.all())}")
        result[name] = acc_te
        (out / f"svm_{name}.vxg").write_bytes(features.svm_bytes(model))
    (out / "classification.csv").write_text("\n".join(rows) + "\n")
    (out / "features.vxg").write_bytes(features.features_bytes(f_tr, y_tr, layout))
    if args.budgets:
        curve = features.limited_data_experiment(f_tr, y_tr, f_te, y_te, _int_list(args.budgets),
                                                 list(range(args.seed, args.seed + args.repeats)), C=args.C)
        lines = ["samples_per_class,mean_accuracy,std_accuracy"]
        lines += [f"{b},{m:.6f},{s:.6f}" for b, m, s in zip(curve.budgets, curve.mean, curve.std)]
        (out / "limited_data.csv").write_text("\n".join(lines) + "\n")
    return result


def cmd_evaluate(args) -> dict:
    profile = _profile(args.profile)
    items, manifest = _load_data(args.data, profile)
    names = manifest.get("classes")
    if args.oracle:
        by_image = {it.image.tobytes(): it.grid for it in items}
        result = evaluation.evaluate_reconstruction(None, None, items, names,
                                                    predict=lambda img: by_image[np.asarray(img).tobytes()])
    else:
        ckpt = _load_ckpt(args.checkpoint, profile)
        if "E" not in ckpt.nets:
            raise UsageError(f"checkpoint {args.checkpoint} has no image encoder")
        result = evaluation.evaluate_reconstruction(ckpt.nets["E"], ckpt.nets["G"], items, names)
    out = _out(args)
    (out / "ap_table.csv").write_text(evaluation.ap_table_csv({args.method: result}, names))
    (out / "ap_instances.csv").write_text(evaluation.instance_log_csv(result))
    return {"mean_ap": result.mean}


def cmd_visualize(args) -> dict:
    profile = _profile(args.profile)
    D = _load_ckpt(args.checkpoint, profile).nets["D"]
    items, _ = _load_data(args.data, profile)
    grids = np.stack([it.grid for it in items])
    try:
        layer = latent.resolve_layer(D, args.layer)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    channels = _int_list(args.channels) if args.channels else None
    out = _out(args)
    reports = latent.top_activating_objects(D, grids, layer, args.top, channels)
    summary = []
    for rep in reports:
        cdir = out / f"layer{rep.layer}_channel{rep.channel:03d}"
        cdir.mkdir(exist_ok=True)
        for rank, (obj, sal) in enumerate(zip(rep.object_ids, rep.saliency)):
            stem = f"rank{rank}_object{obj:05d}"
            voxels.write_raw(cdir / f"{stem}_saliency.raw", sal.astype(np.float32))
            _write_object(cdir, stem, grids[obj], args.threshold, False, values=sal)
        summary.append({"layer": rep.layer, "channel": rep.channel, "objects": rep.object_ids,
                        "activations": [float(f"{a:.9g}") for a in rep.activations]})
    (out / "neurons.json").write_text(json.dumps(summary, indent=1) + "\n")
    return {"channels": len(reports)}


# -- parser -----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="full", help="full, tiny or a JSON profile file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--config", help="config echo from an earlier run")


def _gen_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint")
    p.add_argument("--threshold", type=float, default=voxels.THRESHOLD)
    p.add_argument("--clean", action=argparse.BooleanOptionalAction, default=True,
                   help="keep only the largest connected component")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="voxgan", description="Volumetric GAN toolkit")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command")
    ap.subcommands = sub.choices

    p = sub.add_parser("make-data", help="write a synthetic shape/image dataset")
    _common(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", default=",".join(KINDS))
    p.add_argument("--placement", choices=PLACEMENTS, default="center",
                   help="center every shape or draw a random offset")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="train a GAN or VAE-GAN")
    p.add_argument("kind", choices=("gan", "vaegan"))
    _common(p)
    p.add_argument("--data")
    p.add_argument("--checkpoint", help="initialize networks from this checkpoint")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=None, help="default 100 (full) or 32 (other profiles)")
    p.add_argument("--lr-g", type=float, default=0.0025)
    p.add_argument("--lr-d", type=float, default=1e-5)
    p.add_argument("--alpha1", type=float, default=5.0)
    p.add_argument("--alpha2", type=float, default=1e-4)
    p.add_argument("--gate", type=float, default=0.8)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate objects from random latent vectors")
    _common(p)
    _gen_flags(p)
    p.add_argument("--n", type=int, default=5)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("interpolate", help="walk the latent line between two vectors")
    _common(p)
    _gen_flags(p)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--z1")
    p.add_argument("--z2")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("arith", help="generate from a - b + c")
    _common(p)
    _gen_flags(p)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--c", required=True)
    p.set_defaults(func=cmd_arith)

    p = sub.add_parser("sweep", help="vary one latent dimension")
    _common(p)
    _gen_flags(p)
    p.add_argument("--dim", type=int, default=0)
    p.add_argument("--values", help="comma-separated values")
    p.add_argument("--n-values", type=int, default=5)
    p.add_argument("--z", help="base latent vector (.npy)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("classify", help="SVM on discriminator features vs raw voxels")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--test-data")
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--C", type=float, default=0.01)
    p.add_argument("--budgets", help="samples per class for the limited-data curve, e.g. 1,5,10")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", help="average precision of image-to-shape reconstruction")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--method", default="vaegan")
    p.add_argument("--oracle", action="store_true", help="score ground truth against itself")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("visualize", help="top-activating objects and saliency per neuron")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--layer", default="last-1")
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--channels", help="comma-separated channel subset")
    p.add_argument("--threshold", type=float, default=voxels.THRESHOLD)
    p.set_defaults(func=cmd_visualize)
    return ap


_NOT_ECHOED = {"func", "config", "verbose"}


def parse(argv: Sequence[str]):
    """Parse ``argv``, layering a ``--config`` echo beneath explicit flags."""
    parser = build_parser()
    argv = list(argv)
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        path = Path(known.config)
        if not path.is_file():
            raise UsageError(f"config file does not exist: {path}")
        try:
            echo = json.loads(path.read_text())
            command, params = echo["command"], echo["params"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise UsageError(f"{path} is not a config echo: {exc}") from None
        if command[0] not in parser.subcommands:
            raise UsageError(f"{path} names unknown command {command[0]!r}")
        if not any(a in parser.subcommands for a in argv):
            argv = list(command) + argv
        parser.subcommands[command[0]].set_defaults(**{k: v for k, v in params.items() if k not in ("command", "kind")})
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a command is required")
    return args


def echo_config(args) -> dict:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    command = [args.command] + ([args.kind] if getattr(args, "kind", None) else [])
    return {"command": command, "params": params}


def run(argv: Sequence[str]) -> int:
    try:
        args = parse(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        summary = args.func(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / CONFIG_NAME).write_text(json.dumps(echo_config(args), indent=1, sort_keys=True) + "\n")
        for k, v in (summary or {}).items():
            print(f"{k}: {v}")
        return EXIT_OK
    except UsageError as exc:
        print(f"voxgan: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, voxels.BinvoxError, CheckpointError) as exc:
        print(f"voxgan: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"voxgan: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SystemExit as exc:  # argparse
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
