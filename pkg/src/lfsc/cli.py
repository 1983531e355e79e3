"""Command-line front end: ``lfsc <command> ...``.

Exit codes: 0 success, 2 bad arguments, 3 I/O error, 4 malformed input,
5 dictionary hash mismatch.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys

import numpy as np
from PIL import Image

from . import bitstream as bs
from .codec import EncoderConfig, decode_stream, encode_lf
from .coder import SkvLayout
from .dictionary import (DEFAULT_KC, DEFAULT_LEVELS, DictionaryError, LfDictionary,
                         build_dictionary, canvas_size, dct_fallback_atoms,
                         extract_training_patches, train_ksvd)
from .disparity import dump_disparity, estimate_disparity
from .evaluation import bd_metrics, psnr_lf, rd_sweep, read_csv, write_csv, write_dat
from .lf_core import LightFieldError, PatchGrid, load_lf, save_lf
from .residual_codec import CodecError
from .synth import SynthSceneSpec, label_map, plane_scene, render_scene, two_plane_scene

log = logging.getLogger("lfsc")

EXIT_OK, EXIT_ARGS, EXIT_IO, EXIT_FORMAT, EXIT_HASH = 0, 2, 3, 4, 5
DICT_ENV = "LFSC_DICTIONARY"

# defaults for options that may also come from --config
DEFAULTS = {
    "q_skv": 16,
    "q_res": 22,
    "eps": 5.0,
    "max_coeffs": 30,
    "stride": 4,
    "threads": 1,
    "k_c": DEFAULT_KC,
    "iters": 10,
    "seed": 0,
    "sparsity": 8,
    "patches": 5000,
}


class UsageError(Exception):
    pass


def _opt(args, config: dict, name: str):
    """Flag value if given, else the config file entry, else the default."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        return config[name]
    return DEFAULTS[name]


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        cfg = json.load(f)
    if not isinstance(cfg, dict):
        raise UsageError("config file must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def _load_dictionary(path: str | None) -> LfDictionary:
    path = path or os.environ.get(DICT_ENV)
    if path:
        return LfDictionary.load(path)
    log.info("no dictionary given; using the built-in cosine fallback")
    return build_dictionary(dct_fallback_atoms())


def _emit(args, stats: dict, lines: list[str]) -> None:
    if args.json:
        print(json.dumps(stats, indent=1, default=_json_default))
    else:
        for line in lines:
            print(line)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _fmt_psnr(p: dict) -> str:
    return " ".join(f"{k.upper()}={v:.3f}" for k, v in p.items())


def _accounting_lines(acc: dict) -> list[str]:
    lines = [f"{name:10s} {size:9d} B  {100 * acc['share'][name]:6.2f}%"
             for name, size in acc["bytes"].items()]
    lines.append(f"{'total':10s} {acc['total_bytes']:9d} B  bpp={acc['bpp']:.5f}")
    return lines


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _read_corpus(path: str) -> list[np.ndarray]:
    exts = (".png", ".bmp", ".tif", ".tiff", ".ppm", ".pgm", ".jpg", ".jpeg")
    names = sorted(n for n in os.listdir(path) if n.lower().endswith(exts))
    if not names:
        raise UsageError(f"no images found in {path}")
    return [np.asarray(Image.open(os.path.join(path, n)).convert("L"), dtype=np.float64)
            for n in names]


def cmd_train_dict(args, config) -> int:
    if args.dct_fallback:
        atoms = dct_fallback_atoms(_opt(args, config, "k_c"))
        objective = []
    else:
        if not args.corpus:
            raise UsageError("train-dict needs --corpus DIR or --dct-fallback")
        images = _read_corpus(args.corpus)
        patches = extract_training_patches(images, canvas_size(), _opt(args, config, "patches"),
                                           _opt(args, config, "seed"))
        res = train_ksvd(patches, _opt(args, config, "k_c"), _opt(args, config, "sparsity"),
                         _opt(args, config, "iters"), _opt(args, config, "seed"))
        atoms, objective = res.atoms, res.objective
    d = build_dictionary(atoms, DEFAULT_LEVELS)
    d.save(args.output)
    rows, cols = d.logical_shape
    stats = {"output": args.output, "atoms": d.n_atoms, "levels": d.n_levels,
             "canvas": d.canvas, "logical_shape": [rows, cols],
             "content_hash": f"{d.content_hash:016x}", "objective": objective}
    _emit(args, stats, [f"wrote {args.output}: {d.n_atoms} atoms, {d.n_levels} levels, "
                        f"dictionary {rows}x{cols}, hash {d.content_hash:016x}"])
    return EXIT_OK


def _encoder_config(args, config) -> EncoderConfig:
    layout = config.get("skv_layout")
    kw = {}
    if layout is not None:
        kw["layout"] = SkvLayout(tuple(tuple(v) for v in layout))
    return EncoderConfig(q_skv=_opt(args, config, "q_skv"), q_res=_opt(args, config, "q_res"),
                         eps=_opt(args, config, "eps"), max_coeffs=_opt(args, config, "max_coeffs"),
                         stride=_opt(args, config, "stride"), **kw)


def cmd_encode(args, config) -> int:
    lf = load_lf(args.input)
    d = _load_dictionary(args.dictionary)
    res = encode_lf(lf, d, _encoder_config(args, config), _opt(args, config, "threads"))
    with open(args.output, "wb") as f:
        f.write(res.stream)
    stats = {"output": args.output, "accounting": res.accounting, "psnr": res.psnr}
    _emit(args, stats, _accounting_lines(res.accounting) + [f"PSNR {_fmt_psnr(res.psnr)}"])
    return EXIT_OK


def cmd_decode(args, config) -> int:
    with open(args.input, "rb") as f:
        data = f.read()
    d = _load_dictionary(args.dictionary)
    res = decode_stream(data, d, _opt(args, config, "threads"))
    save_lf(res.lf, args.output)
    if args.approximation:
        save_lf(res.approximation, args.approximation)
    acc = bs.bit_accounting(data)
    stats = {"output": args.output, "accounting": acc}
    _emit(args, stats, [f"wrote {args.output}"] + _accounting_lines(acc))
    return EXIT_OK


def cmd_synth(args, config) -> int:
    if args.spec:
        with open(args.spec) as f:
            spec = SynthSceneSpec.from_json(f.read())
    elif args.two_plane is not None:
        bg, fg = args.two_plane
        spec = two_plane_scene(bg, fg, args.seed or 0, args.size, args.angular,
                               noise_sigma=args.noise)
    else:
        spec = plane_scene(args.plane, args.seed or 0, args.size, args.angular,
                           noise_sigma=args.noise)
    lf, gt = render_scene(spec)
    save_lf(lf, args.output)
    # sidecars go inside a view directory, or next to a raw container
    if args.output.endswith(".lfraw"):
        prefix = args.output[:-len(".lfraw")] + "_"
    else:
        prefix = os.path.join(args.output, "")
    np.save(f"{prefix}gt_disparity.npy", gt)
    labels = label_map(spec)
    Image.fromarray(np.where(labels < 0, 255, labels).astype(np.uint8), mode="L").save(
        f"{prefix}gt_labels.png")
    with open(f"{prefix}scene.json", "w") as f:
        f.write(spec.to_json())
    stats = {"output": args.output, "views": [lf.angular_rows, lf.angular_cols],
             "size": [lf.width, lf.height]}
    _emit(args, stats, [f"wrote {args.output} ({lf.angular_rows}x{lf.angular_cols} views, "
                        f"{lf.width}x{lf.height})"])
    return EXIT_OK


def _parse_qs(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"bad q list {text!r}") from None


def cmd_eval(args, config) -> int:
    if args.bd:
        a, b = read_csv(args.bd[0]), read_csv(args.bd[1])
        r = bd_metrics(a, b)
        stats = {"bd_psnr": r.bd_psnr, "bd_rate": r.bd_rate, "linear_fallback": r.linear_fallback}
        _emit(args, stats, [f"BD-PSNR {r.bd_psnr:+.4f} dB  BD-rate {r.bd_rate:+.3f}%"
                            + ("  (piecewise-linear fallback)" if r.linear_fallback else "")])
        return EXIT_OK
    if not args.original:
        raise UsageError("eval needs an original light field (or --bd A.csv B.csv)")
    orig = load_lf(args.original)
    if args.sweep:
        d = None if args.mode == "baseline" else _load_dictionary(args.dictionary)
        pts = rd_sweep(orig, d, _parse_qs(args.sweep), args.mode, _encoder_config(args, config),
                       _opt(args, config, "threads"))
        text = write_csv(pts, args.csv)
        if args.dat:
            write_dat(pts, args.dat)
        if args.json:
            print(json.dumps([p.__dict__ for p in pts], indent=1))
        else:
            sys.stdout.write(text)
        return EXIT_OK
    if args.stream:
        with open(args.stream, "rb") as f:
            recon = decode_stream(f.read(), _load_dictionary(args.dictionary),
                                  _opt(args, config, "threads")).lf
    elif args.recon:
        recon = load_lf(args.recon)
    else:
        raise UsageError("eval needs --recon, --stream, --sweep or --bd")
    p = psnr_lf(orig, recon)
    if args.csv:
        with open(args.csv, "w") as f:
            f.write("psnr_y,psnr_u,psnr_v,psnr_yuv\n")
            f.write(",".join(repr(p[k]) for k in ("y", "u", "v", "yuv")) + "\n")
    stats = {"psnr": {k: (None if math.isinf(v) else v) for k, v in p.items()},
             "identical": all(math.isinf(v) for v in p.values())}
    _emit(args, stats, [f"PSNR {_fmt_psnr(p)}"])
    return EXIT_OK


def cmd_disparity(args, config) -> int:
    lf = load_lf(args.input)
    d = _load_dictionary(args.dictionary)
    grid = PatchGrid(lf.height, lf.width, d.patch_size, _opt(args, config, "stride"))
    dmap = estimate_disparity(lf, d.levels, grid, threads=_opt(args, config, "threads"))
    paths = dump_disparity(dmap, args.output)
    hist = np.bincount(dmap.levels.ravel(), minlength=d.n_levels)
    stats = {"files": list(paths), "grid": list(grid.shape),
             "histogram": {f"{lv:+.1f}": int(c) for lv, c in zip(d.levels, hist) if c}}
    _emit(args, stats, [f"wrote {paths[0]} and {paths[1]}"]
          + [f"  dp {k}: {v} patches" for k, v in stats["histogram"].items()])
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _codec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--q-skv", dest="q_skv", type=int, help="key view quality (1..51)")
    p.add_argument("--q-res", dest="q_res", type=int, help="residual quality (1..51)")
    p.add_argument("--eps", type=float, help="sparse coding error threshold per pixel")
    p.add_argument("--max-coeffs", dest="max_coeffs", type=int)
    p.add_argument("--stride", type=int, help="patch stride")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--threads", type=int, help="worker threads (output is identical)")
    common.add_argument("--config", help="JSON file with option defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lfsc", description="Sparse-coding light field codec")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-dict", parents=[common], help="build a dictionary file")
    p.add_argument("--corpus", help="directory of training images")
    p.add_argument("--dct-fallback", action="store_true", help="cosine atoms, no training")
    p.add_argument("--k-c", dest="k_c", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--sparsity", type=int)
    p.add_argument("--patches", type=int, help="training patch count")
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train_dict)

    p = sub.add_parser("encode", parents=[common], help="encode a light field")
    p.add_argument("input", help="light field directory or .lfraw file")
    p.add_argument("-d", "--dictionary", help=f".lfd file (default: ${DICT_ENV} or built-in)")
    p.add_argument("-o", "--output", required=True)
    _codec_flags(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", parents=[common], help="decode a .scskv stream")
    p.add_argument("input")
    p.add_argument("-d", "--dictionary")
    p.add_argument("-o", "--output", required=True, help="output directory or .lfraw file")
    p.add_argument("--approximation", help="also write the sparse approximation here")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic light field")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--spec", help="scene description JSON")
    g.add_argument("--plane", type=float, default=0.0, help="single plane at this disparity")
    g.add_argument("--two-plane", type=float, nargs=2, metavar=("BG", "FG"))
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--angular", type=int, default=15)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", parents=[common], help="quality, RD sweeps and BD metrics")
    p.add_argument("original", nargs="?")
    p.add_argument("--recon", help="reconstructed light field")
    p.add_argument("--stream", help=".scskv stream to decode and compare")
    p.add_argument("--sweep", help="comma-separated q list (q_res in full mode)")
    p.add_argument("--mode", choices=("full", "baseline"), default="full")
    p.add_argument("--bd", nargs=2, metavar=("REF_CSV", "TEST_CSV"))
    p.add_argument("-d", "--dictionary")
    p.add_argument("--csv")
    p.add_argument("--dat", help="gnuplot data file for sweeps")
    _codec_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("disparity", parents=[common], help="estimate and dump a disparity map")
    p.add_argument("input")
    p.add_argument("-d", "--dictionary")
    p.add_argument("--stride", type=int)
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_disparity)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except bs.HashMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_HASH
    except (bs.StreamError, CodecError, DictionaryError, LightFieldError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARGS


if __name__ == "__main__":
    sys.exit(main())
