"""Command-line entry point: ``acnet <command> ...``.

Log verbosity comes from ``ACNET_LOG_LEVEL`` (default WARNING).  Every
command accepts ``--seed`` to override the configured seed and
``--error-json`` to report failures as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .ablation import AblationGrid, run_ablation
from .config import load_config
from .data import load_dataset
from .errors import ACNetError, ConfigError
from .gradcheck import gradcheck
from .io import (atomic_write_json, dump_json, load_checkpoint, load_manifest, parse_annotation_file,
                 parse_caption_file, read_json)
from .nacs import AnnotatedRegion, CaptionCandidate, nacs_select, top_confidence_select
from .pipeline import MetricTable, evaluate, infer, model_from_checkpoint, recall_at, train
from .synth import SynthConfig, synth_generate
from .temporal import MomentInterval


def _csv(kind):
    def parse(text: str):
        try:
            values = [kind(x) for x in text.split(",") if x.strip()]
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected comma-separated {kind.__name__} values") from None
        if not values:
            raise argparse.ArgumentTypeError("expected at least one value")
        return values
    return parse


def _with_seed(cfg, seed):
    return cfg if seed is None else cfg.replace(seed=seed)


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    cfg = SynthConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    m = synth_generate(cfg, args.out)
    print(f"wrote {len(m.videos)} videos, {len(m.annotations)} annotations, "
          f"{sum(len(c.candidates) for c in m.captions)} caption candidates to {args.out}")
    return 0


def _caption_sources(args):
    """Yield (video_id, duration, candidates, ground-truth intervals) per video."""
    path = Path(args.captions)
    doc = None if path.is_dir() else read_json(path)
    if doc is None or "embedding_dim" in doc:
        manifest = load_manifest(path)
        videos = [(c.video_id, manifest.video(c.video_id).duration,
                   [(e.interval, e.sentence_conf, e.proposal_conf) for e in c.candidates])
                  for c in manifest.captions]
        gts: dict[str, list] = {}
        for a in manifest.annotations:
            gts.setdefault(a.video_id, []).append(a.interval)
    else:
        videos = [(v.video_id, v.duration, v.candidates) for v in parse_caption_file(doc)]
        gts = {}
    if args.annotations:
        adoc = read_json(args.annotations) if not Path(args.annotations).is_dir() else None
        if adoc is None or "embedding_dim" in adoc:
            gts = {}
            for a in load_manifest(args.annotations).annotations:
                gts.setdefault(a.video_id, []).append(a.interval)
        else:
            gts = parse_annotation_file(adoc)
    for vid, duration, cands in videos:
        yield vid, duration, cands, gts.get(vid, [])


def cmd_select(args) -> int:
    if args.l_c < 0:
        raise ConfigError("--l-c must be non-negative")
    out = []
    for vid, duration, cands, gts in _caption_sources(args):
        candidates = [CaptionCandidate(np.zeros(0), MomentInterval(*iv), cs, cp) for iv, cs, cp in cands]
        if args.selection == "top_confidence":
            aux = top_confidence_select(candidates, args.l_c, duration)
        else:
            region = AnnotatedRegion(MomentInterval(*g) for g in gts)
            aux = nacs_select(candidates, args.l_c, args.theta, region, duration)
        out.append({
            "video_id": vid,
            "selected": [{"index": k, "interval": candidates[k].interval.as_list(), "score": s}
                         for k, s in zip(aux.indices, aux.scores_at_selection)],
            "trace": [{"picked": st.picked, "score": st.score,
                       "remaining": {str(k): v for k, v in st.remaining.items()}} for st in aux.trace],
        })
    doc = {"version": 1, "method": args.selection, "l_c": args.l_c, "theta": args.theta, "videos": out}
    atomic_write_json(args.out, doc)
    print(f"selected {sum(len(v['selected']) for v in out)} captions over {len(out)} videos -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    if args.epochs is not None:
        cfg = cfg.replace(epochs=args.epochs)
    samples = load_dataset(args.data, cfg)
    result = train(samples, cfg, args.out, progress=True, meta={"data": str(Path(args.data).resolve())})
    print(f"trained {cfg.epochs} epochs on {len(samples)} samples in {result.seconds:.1f}s; "
          f"final loss {result.loss_curve[-1] if result.loss_curve else float('nan'):.6f}")
    print(f"checkpoint: {result.checkpoint}")
    return 0


def _eval_data(args, ckpt_meta):
    data = args.data or ckpt_meta.get("data")
    if not data:
        raise ConfigError("no --data given and the checkpoint does not record its dataset")
    return data


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    cfg = _with_seed(model.config, args.seed)
    data = _eval_data(args, ckpt.meta)
    samples = [s for s in load_dataset(data, cfg, known_annotations=False) if s.sample_id == args.sample]
    if not samples:
        raise ConfigError(f"sample {args.sample!r} not found in {data}")
    preds = infer(samples[0], model)[:args.top]
    sys.stdout.write(dump_json({
        "version": 1,
        "sample_id": args.sample,
        "predictions": [{"interval": p.interval.as_list(), "score": p.score} for p in preds],
    }))
    return 0


def _recall_from_file(path, data_path, ns, ms) -> MetricTable:
    doc = read_json(path)
    preds = doc.get("predictions") if isinstance(doc, dict) else None
    if not isinstance(preds, dict):
        raise ConfigError("prediction file needs a 'predictions' object keyed by annotation id")
    manifest = load_manifest(data_path)
    gts = [MomentInterval(*a.interval) for a in manifest.annotations]
    lists = [[MomentInterval(*iv) for iv in preds.get(a.id, [])] for a in manifest.annotations]
    table = MetricTable(n_samples=len(gts))
    for n in ns:
        for m in ms:
            table.entries[(n, m)] = recall_at(lists, gts, n, m)
    return table


def cmd_eval(args) -> int:
    if bool(args.checkpoint) == bool(args.predictions):
        raise ConfigError("give exactly one of --checkpoint or --predictions")
    if args.predictions:
        if not args.data:
            raise ConfigError("--predictions needs --data")
        table = _recall_from_file(args.predictions, args.data, args.n, args.m)
    else:
        ckpt = load_checkpoint(args.checkpoint)
        model = model_from_checkpoint(ckpt)
        samples = load_dataset(_eval_data(args, ckpt.meta), model.config, known_annotations=args.known_annotations)
        table = evaluate(model, samples, args.n, args.m)
    if args.out:
        atomic_write_json(args.out, table.to_json())
    else:
        sys.stdout.write(dump_json(table.to_json()))
    print(table.to_text())
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _with_seed(load_config(args.config), args.seed)
    report = gradcheck(cfg, eps=args.eps)
    print(f"max relative error {report.max_error:.3e} over {report.n_values} values "
          f"({len(report.per_param)} tensors) in {report.seconds:.1f}s")
    for name, err in report.worst(args.show):
        print(f"  {name:24s} {err:.3e}")
    ok = report.max_error < args.tolerance
    print("PASS" if ok else f"FAIL: above tolerance {args.tolerance:g}")
    return 0 if ok else 1


def cmd_ablate(args) -> int:
    grid = AblationGrid.load(args.grid)
    report = run_ablation(args.data, grid, args.eval_data, seed_override=args.seed)
    if args.out:
        atomic_write_json(args.out, report.to_json())
    print(report.to_text())
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")
    common.add_argument("--error-json", action="store_true", help="report failures as JSON on stderr")

    parser = argparse.ArgumentParser(prog="acnet", description="Video grounding with auxiliary captions.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON file of generator settings")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("select", parents=[common], help="select auxiliary captions")
    p.add_argument("--captions", required=True, help="caption file or dataset manifest")
    p.add_argument("--annotations", help="annotation file or dataset manifest")
    p.add_argument("--l-c", type=int, default=5, dest="l_c")
    p.add_argument("--theta", type=float, default=0.5)
    p.add_argument("--selection", choices=("nacs", "top_confidence"), default="nacs")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="preset name or JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", parents=[common], help="rank moments for one sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--sample", required=True, help="annotation id")
    p.add_argument("--data", help="dataset (default: the one recorded in the checkpoint)")
    p.add_argument("--top", type=int, default=5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", parents=[common], help="R@n,IoU=m on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--predictions", help="JSON of predicted intervals per annotation id")
    p.add_argument("--data")
    p.add_argument("--n", type=_csv(int), default=[1, 5])
    p.add_argument("--m", type=_csv(float), default=[0.3, 0.5, 0.7])
    p.add_argument("--known-annotations", action="store_true",
                   help="let caption selection see the ground truth (training-set evaluation)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    p.add_argument("--config", default="toy", help="preset name or JSON file")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--eps", type=float, default=1e-5)
    p.add_argument("--show", type=int, default=5, help="number of worst tensors to list")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", parents=[common], help="run the component ablation grid")
    p.add_argument("--data", required=True, help="training dataset")
    p.add_argument("--grid", help="grid JSON (default: built-in grid)")
    p.add_argument("--eval-data", help="held-out dataset (default: the training set)")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("ACNET_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ACNetError, OSError) as exc:
        kind = getattr(exc, "kind", "io")
        if args.error_json:
            err = {"error": kind, "message": str(exc)}
            if hasattr(exc, "location"):
                err["location"] = exc.location
            sys.stderr.write(json.dumps(err) + "\n")
        else:
            sys.stderr.write(f"acnet {args.command}: {kind} error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
