"""Command line: ``malimg convert|train|eval|ablate|report|synth``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .binimg.convert import DEFAULT_SIZE, convert_path
from .binimg.grid import WidthRule
from .exceptions import MalimgError
from .harness.config import RunConfig, resolve_paths
from .harness.runner import (
    REPORT,
    TABLE,
    ablate,
    evaluate,
    load_grid,
    load_index,
    report_payload,
    run,
    train,
    write_table,
)
from .harness.synthetic import make_corpus
from .metrics import table_csv, table_row

log = logging.getLogger("malimg")


def _load_config(args) -> RunConfig:
    cfg = resolve_paths(RunConfig.from_file(args.config), Path(args.config).parent)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_convert(args) -> int:
    rule = WidthRule.from_file(args.width_table) if args.width_table else WidthRule.standard()
    written = convert_path(args.input, args.out, channels=args.channels, rule=rule, size=args.size)
    print(f"wrote {len(written)} image(s) to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    if args.no_eval:
        result = train(cfg, load_index(cfg), out)
        print(f"best epoch {result.result.best_epoch}; checkpoint {result.checkpoint}")
    else:
        payload = run(cfg, out)
        print(Path(out / TABLE).read_text(), end="")
        print(f"best epoch {payload['best_epoch']}; artifacts in {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    ckpt = Path(args.checkpoint or Path(args.out_dir) / "best.mifw")
    report = evaluate(ckpt, load_index(cfg), args.split, cfg.eval_batch_size)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report_payload(cfg, report, split=args.split, checkpoint=str(ckpt))
    (out / REPORT).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    text = table_csv([table_row(cfg.id, cfg.flags(), report)])
    (out / TABLE).write_text(text)
    print(text, end="")
    return 0


def cmd_ablate(args) -> int:
    grid = load_grid(args.config)
    if args.seed is not None:
        grid = [replace(c, seed=args.seed) for c in grid]
    payloads = ablate(grid, args.out_dir)
    print((Path(args.out_dir) / TABLE).read_text(), end="")
    failed = [p["id"] for p in payloads if p["status"] != "ok"]
    if failed:
        log.error("failed runs: %s", failed)
    return 1 if failed else 0


def cmd_report(args) -> int:
    """Rebuild table.csv from report.json files under --out-dir."""
    root = Path(args.out_dir)
    payloads = []
    for path in sorted(root.rglob(REPORT)):
        if path.parent == root:
            continue
        data = json.loads(path.read_text())
        payloads.extend(data["runs"] if "runs" in data else [data])
    if not payloads and (root / REPORT).is_file():
        data = json.loads((root / REPORT).read_text())
        payloads = data["runs"] if "runs" in data else [data]
    if not payloads:
        raise MalimgError(f"no {REPORT} files under {root}")
    print(write_table(payloads, root), end="")
    return 0


def cmd_synth(args) -> int:
    make_corpus(args.out_dir, n_train=args.train, n_val=args.val, n_test=args.test,
                size=args.size, channels=args.channels, seed=args.seed or 0)
    print(f"synthetic corpus written to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="malimg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convert", help="convert binaries to PNG images with JSON sidecars")
    p.add_argument("--input", required=True, help="file or directory of binaries")
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--width-table", help="JSON width table {thresholds: [[max_bytes, width], ...], default}")
    p.add_argument("--size", type=int, default=DEFAULT_SIZE)
    p.set_defaults(func=cmd_convert)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run/grid config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", help="train one configuration (then evaluate on test)")
    common(p)
    p.add_argument("--no-eval", action="store_true", help="skip the test-split evaluation")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p)
    p.add_argument("--checkpoint", help="defaults to <out-dir>/best.mifw")
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation grid")
    common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="rebuild table.csv from run reports")
    common(p, config_required=False)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("synth", help="write a synthetic byte-texture corpus")
    common(p, config_required=False)
    p.add_argument("--train", type=int, default=200)
    p.add_argument("--val", type=int, default=50)
    p.add_argument("--test", type=int, default=50)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--channels", type=int, choices=(1, 3), default=1)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except MalimgError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
