"""Command-line surface: run the engine on image files and emit artifacts.

Two subcommands:

* ``explain``: compute a responsibility map and a sufficient explanation
  for one image (or a ``--glob`` of them), writing REXMAP/RXM1 map files,
  a heatmap PNG, an RXE1 explanation mask plus viewable PNG, a metrics
  CSV row, and a ``run_config.json`` sidecar that replays the run.
* ``metrics``: grade existing artifacts with insertion/deletion curves,
  explanation area, and ground-truth overlap.

Exit codes: 0 success, 2 input or usage error, 3 oracle error (including
a remote model dying mid-run; partial artifacts are still written), 4
budget exhausted (partial artifacts written).
"""

from __future__ import annotations

import argparse
import glob as globlib
import json
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .bridge import DEFAULT_TIMEOUT, HandshakeError, connect
from .core import (
    Config,
    ConfigError,
    Explanation,
    FormatError,
    Image,
    ImageValidationError,
    ResponsibilityMap,
    mask_to_rxe1,
    rxe1_to_mask,
)
from .extract import explain, rank_pixels
from .metrics import (
    GroundTruthMask,
    csv_header,
    csv_row,
    deletion_curve,
    explanation_area,
    insertion_curve,
    overlap,
)
from .oracle import (
    BudgetExhaustedError,
    OracleError,
    OracleSession,
    parse_builtin,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ORACLE = 3
EXIT_BUDGET = 4

_STATUS_EXIT = {"ok": EXIT_OK, "oracle_failed": EXIT_ORACLE, "budget_exhausted": EXIT_BUDGET}

# flag name -> Config field; a flag left unset falls back to the sidecar
# config (under --config) and then to the library default
_CONFIG_FLAGS = {
    "iterations": "iterations",
    "min_superpixel": "min_superpixel_px",
    "mask_color": "mask_color",
    "seed": "seed",
    "strategy": "queue_strategy",
    "queue_len": "queue_len",
    "budget": "call_budget",
    "chunk": "extraction_chunk",
    "steps": "insertion_steps",
    "distribution": "distribution",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causemap",
        description="Causal responsibility maps and sufficient explanations for image classifiers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--model", help="builtin:<spec>, cmd:<argv>, or tcp:<host>:<port>")
        p.add_argument("--mask-color", help="occlusion color, e.g. 0,0,0 (default black)")
        p.add_argument("--budget", type=int, help="model call budget (default 100000)")
        p.add_argument("--steps", type=int, help="curve resolution (default 100)")
        p.add_argument(
            "--timeout", type=float, default=DEFAULT_TIMEOUT, help="seconds per remote batch"
        )

    ex = sub.add_parser("explain", help="compute map + explanation artifacts")
    ex.add_argument("--image", help="input image (PNG or anything Pillow reads)")
    ex.add_argument("--glob", help="run every image matching this pattern")
    ex.add_argument("--out", default="out", help="artifact directory (default ./out)")
    ex.add_argument("--config", help="run_config.json from a previous run to replay")
    ex.add_argument("--iterations", type=int, help="refinement runs to average (default 20)")
    ex.add_argument("--min-superpixel", type=int, help="smallest region to refine, px (default 10)")
    ex.add_argument("--seed", type=int, help="RNG seed (default 0)")
    ex.add_argument("--strategy", help="work-queue ordering (default area)")
    ex.add_argument("--queue-len", type=int, help="work-queue capacity (default 1)")
    ex.add_argument("--chunk", type=int, help="extraction growth step, px (default 1)")
    ex.add_argument("--distribution", help="partition sampling law (default uniform)")
    ex.add_argument("--jobs", type=int, default=1, help="parallel refinement workers")
    ex.add_argument("--trace", help="write refinement trace lines to this file")
    add_common(ex)

    me = sub.add_parser("metrics", help="grade existing artifacts")
    me.add_argument("--image", required=True, help="the image the artifacts describe")
    me.add_argument("--map", help="REXMAP/RXM1 responsibility map (for ins/del)")
    me.add_argument("--explanation", help="RXE1 explanation mask (for area/overlap)")
    me.add_argument(
        "--metrics", default="area", help="comma list from: area,ins,del,overlap"
    )
    me.add_argument("--mask", help="ground-truth segmentation PNG (nonzero = object)")
    me.add_argument("--occlusion", help="ground-truth occlusion rectangle col,row,w,h")
    me.add_argument("--out", help="write the CSV here instead of stdout")
    add_common(me)
    return parser


# -- input handling ---------------------------------------------------------


def load_image(path: str) -> Image:
    try:
        pil = PILImage.open(path)
    except FileNotFoundError:
        raise ConfigError(f"cannot read image {path!r}") from None
    except OSError as e:
        raise FormatError(f"cannot decode image {path!r}: {e}") from e
    if pil.mode == "I;16":
        arr = np.asarray(pil, dtype=np.float64) / 65535.0
    elif pil.mode == "L":
        arr = np.asarray(pil, dtype=np.float64) / 255.0
    else:
        arr = np.asarray(pil.convert("RGB"), dtype=np.float64) / 255.0
    return Image.from_array(arr)


def parse_color(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"bad mask color {text!r}; expected comma-separated floats") from None


def assemble_config(args, sidecar: dict | None) -> Config:
    base: dict = dict(sidecar or {})
    if base.get("mask_color") is not None:
        base["mask_color"] = tuple(base["mask_color"])
    for flag, field in _CONFIG_FLAGS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if field == "mask_color":
            value = parse_color(value)
        base[field] = value
    try:
        return Config(**base)
    except TypeError as e:
        raise ConfigError(f"bad config: {e}") from None


def resolve_model(spec: str | None, timeout: float):
    """Returns (classifier, closer); closer is None for in-process models."""
    if not spec:
        raise ConfigError("--model is required")
    if spec.startswith("builtin:"):
        return parse_builtin(spec[len("builtin:") :]), None
    if spec.startswith(("cmd:", "tcp:")):
        handle = connect(spec, timeout=timeout)
        return handle, handle
    raise ConfigError(f"unknown model spec {spec!r}; expected builtin:, cmd:, or tcp:")


# -- explain ----------------------------------------------------------------


def render_heatmap(values: np.ndarray) -> PILImage.Image:
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = (values - lo) / (hi - lo)
    else:
        scaled = np.zeros_like(values)
    return PILImage.fromarray(np.round(scaled * 255.0).astype(np.uint8), mode="L")


def write_artifacts(out: Path, image_id: str, result, cfg: Config, invocation: dict, seconds: float) -> None:
    out.mkdir(parents=True, exist_ok=True)
    rmap = result.map
    (out / "map.rexmap").write_text(rmap.to_text())
    (out / "map.rxm1").write_bytes(rmap.to_binary())
    render_heatmap(rmap.values).save(out / "heatmap.png")
    area = None
    if result.explanation is not None:
        mask = result.explanation.to_mask(rmap.height, rmap.width)
        (out / "explanation.rxe1").write_bytes(mask_to_rxe1(mask))
        PILImage.fromarray(mask.astype(np.uint8) * 255, mode="L").save(out / "explanation_mask.png")
        area = explanation_area(result.explanation, rmap.height, rmap.width)
    rows = [
        csv_header(),
        csv_row(image_id, area, None, None, None, None, result.session.ledger.calls_made, seconds),
    ]
    (out / "metrics.csv").write_text("\n".join(rows) + "\n")
    sidecar = dict(invocation)
    sidecar["config"] = json.loads(cfg.to_json())
    sidecar["status"] = result.status
    (out / "run_config.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def explain_one(image_path: str, out: Path, args, cfg: Config, model_spec: str) -> int:
    x = load_image(image_path)
    trace_fh = open(args.trace, "w") if args.trace else None
    trace = (lambda line: trace_fh.write(line + "\n")) if trace_fh else None
    classifier, closer = resolve_model(model_spec, args.timeout)
    try:
        start = time.perf_counter()
        result = explain(x, classifier, cfg, jobs=args.jobs, trace=trace)
        seconds = time.perf_counter() - start
    finally:
        if closer is not None:
            closer.close()
        if trace_fh is not None:
            trace_fh.close()
    invocation = {"image": image_path, "model": model_spec, "jobs": args.jobs}
    write_artifacts(out, Path(image_path).stem, result, cfg, invocation, seconds)
    if result.status != "ok":
        print(f"{image_path}: {result.status} (partial artifacts in {out})", file=sys.stderr)
    return _STATUS_EXIT[result.status]


def run_explain(args) -> int:
    sidecar = None
    if args.config:
        try:
            sidecar = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config {args.config!r}: {e}") from e
    cfg = assemble_config(args, (sidecar or {}).get("config"))
    model_spec = args.model or (sidecar or {}).get("model")
    image = args.image or (sidecar or {}).get("image")
    out = Path(args.out)

    if args.glob:
        paths = sorted(globlib.glob(args.glob))
        if not paths:
            raise ConfigError(f"--glob {args.glob!r} matched nothing")
        worst = EXIT_OK
        for path in paths:
            code = explain_one(path, out / Path(path).stem, args, cfg, model_spec)
            worst = max(worst, code)
        return worst
    if not image:
        raise ConfigError("need --image or --glob")
    return explain_one(image, out, args, cfg, model_spec)


# -- metrics ----------------------------------------------------------------


def load_map(path: str) -> ResponsibilityMap:
    blob = Path(path).read_bytes()
    if blob[:4] == b"RXM1":
        return ResponsibilityMap.from_binary(blob)
    return ResponsibilityMap.from_text(blob.decode("ascii"))


def load_ground_truth(args, shape: tuple[int, int]) -> GroundTruthMask:
    if args.mask and args.occlusion:
        raise ConfigError("give --mask or --occlusion, not both")
    if args.mask:
        pil = PILImage.open(args.mask).convert("L")
        pixels = np.asarray(pil) > 0
        if pixels.shape != shape:
            raise FormatError(f"mask is {pixels.shape}, image is {shape}")
        return GroundTruthMask("segmentation", pixels)
    if args.occlusion:
        try:
            col, row, w, h = (int(v) for v in args.occlusion.split(","))
        except ValueError:
            raise ConfigError(f"bad --occlusion {args.occlusion!r}; expected col,row,w,h") from None
        pixels = np.zeros(shape, dtype=bool)
        pixels[row : row + h, col : col + w] = True
        return GroundTruthMask("occlusion", pixels)
    raise ConfigError("overlap needs --mask or --occlusion")


def run_metrics(args) -> int:
    selected = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(selected) - {"area", "ins", "del", "overlap"}
    if unknown:
        raise ConfigError(f"unknown metrics: {sorted(unknown)}")
    x = load_image(args.image)
    cfg = assemble_config(args, None)

    expl = None
    if args.explanation:
        mask = rxe1_to_mask(Path(args.explanation).read_bytes())
        if mask.shape != (x.height, x.width):
            raise FormatError(f"explanation is {mask.shape}, image is {(x.height, x.width)}")
        pixels = frozenset((int(r), int(c)) for r, c in np.argwhere(mask))
        # the RXE1 mask carries no label; area/overlap never need one
        expl = Explanation(pixels, 0, sufficient=True, degenerate_empty=not pixels)
    if ("area" in selected or "overlap" in selected) and expl is None:
        raise ConfigError("area/overlap need --explanation")

    area = explanation_area(expl, x.height, x.width) if "area" in selected else None
    inside = outside = None
    if "overlap" in selected:
        inside, outside = overlap(expl, load_ground_truth(args, (x.height, x.width)))

    ins_auc = del_auc = None
    calls = 0
    start = time.perf_counter()
    if "ins" in selected or "del" in selected:
        if not args.map:
            raise ConfigError("ins/del need --map")
        rmap = load_map(args.map)
        if (rmap.height, rmap.width) != (x.height, x.width):
            raise FormatError(
                f"map is {(rmap.height, rmap.width)}, image is {(x.height, x.width)}"
            )
        ranking = rank_pixels(rmap)
        classifier, closer = resolve_model(args.model, args.timeout)
        try:
            session = OracleSession(classifier, budget=cfg.call_budget)
            if "ins" in selected:
                ins_auc = insertion_curve(x, ranking, session, cfg).normalized_auc
            if "del" in selected:
                del_auc = deletion_curve(x, ranking, session, cfg).normalized_auc
            calls = session.ledger.calls_made
        finally:
            if closer is not None:
                closer.close()
    seconds = time.perf_counter() - start

    text = csv_header() + "\n" + csv_row(
        Path(args.image).stem, area, ins_auc, del_auc, inside, outside, calls, seconds
    ) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "explain":
            return run_explain(args)
        return run_metrics(args)
    except (ConfigError, FormatError, ImageValidationError) as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except BudgetExhaustedError as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except (HandshakeError, OracleError) as e:
        print(f"oracle error: {e}", file=sys.stderr)
        return EXIT_ORACLE
    except OSError as e:
        print(f"input error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
