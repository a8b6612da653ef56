"""Command line interface.

Stages communicate through files: ``pseudo-label`` -> ``calibrate`` ->
``score`` -> ``evaluate``. Scores from any other quality method can enter at
``evaluate``. Every successful command that writes ``--out`` also writes a
``<out>.run.json`` run manifest (or ``--run-manifest PATH``).

Exit codes: 0 success, 2 usage or input error, 3 runtime or data error.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

from . import _batch
from .auxiliary import AuxParams, PseudoLabelSet, pseudo_label_set
from .backend import load_model
from .calibration import calibrate
from .evaluation import (
    EmbeddingStore,
    PairProtocol,
    edc_curve,
    embed_set,
    emit_report,
    pauc,
    summary_record,
    verification_scores,
)
from .exceptions import FroqError, InputError, InvalidParameter
from .imaging import IMAGE_SUFFIXES
from .observer import ScoreFile, load_config, save_config, score_batch

logger = logging.getLogger("froq")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 2, 3


def _tool_version():
    try:
        return version("froq")
    except PackageNotFoundError:
        return "unknown"


def read_image_list(source):
    """Image paths from a directory (sorted, known suffixes) or a list file."""
    source = Path(source)
    if source.is_dir():
        paths = sorted(str(p) for p in source.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    elif source.is_file():
        paths = [line.strip() for line in source.read_text().splitlines()
                 if line.strip() and not line.startswith("#")]
    else:
        raise InvalidParameter(f"no such image directory or list file: {source}")
    if not paths:
        raise InvalidParameter(f"no images found in {source}")
    return paths


def read_taps_file(path):
    """First column of an ``inspect --format tsv`` listing."""
    taps = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#") or line.startswith("tap_id\t"):
            continue
        taps.append(line.split("\t")[0])
    return taps


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _emit(text, out):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


class RunRecord:
    """Collects the reproducibility envelope of one command."""

    def __init__(self, command, args):
        self.command = command
        self.parameters = {k: (str(v) if isinstance(v, Path) else v)
                           for k, v in sorted(vars(args).items()) if k not in ("func",)}
        self.inputs = {}
        self.sessions = []
        self.start = time.perf_counter()

    def input(self, *paths):
        for p in paths:
            if p is not None and Path(p).is_file():
                self.inputs[str(p)] = _sha256(p)

    def session(self, s):
        self.sessions.append(s)
        return s

    def write(self, path):
        if not path:
            return
        doc = {
            "command": self.command,
            "parameters": self.parameters,
            "input_sha256": dict(sorted(self.inputs.items())),
            "tool_version": _tool_version(),
            "threads": _batch.thread_count(),
            "forward_passes": sum(s.pass_counter for s in self.sessions),
            "duration_seconds": round(time.perf_counter() - self.start, 3),
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


def _manifest_path(args):
    if getattr(args, "run_manifest", None):
        return args.run_manifest
    if getattr(args, "out", None):
        return str(args.out) + ".run.json"
    return None


def cmd_inspect(args, rec):
    rec.input(args.model, args.manifest)
    session = load_model(args.model, manifest=args.manifest)
    taps = session.available_taps

    def shape(t):
        return "?" if t.static_shape is None else "x".join("?" if d is None else str(d) for d in t.static_shape)

    if args.format == "tsv":
        lines = ["tap_id\tproducer_kind\tstatic_shape"]
        lines += [f"{t.tap_id}\t{t.producer_kind}\t{shape(t)}" for t in taps]
        text = "\n".join(lines) + "\n"
    else:
        w = max([len(t.tap_id) for t in taps] + [6])
        k = max([len(t.producer_kind) for t in taps] + [4])
        lines = [f"{'tap_id':<{w}}  {'kind':<{k}}  shape"]
        lines += [f"{t.tap_id:<{w}}  {t.producer_kind:<{k}}  {shape(t)}" for t in taps]
        lines.append(f"L = {len(taps)}")
        text = "\n".join(lines) + "\n"
    _emit(text, args.out)


def cmd_pseudo_label(args, rec):
    params = AuxParams(args.alpha, args.occlusion_size, args.seed)
    paths = read_image_list(args.images)
    rec.input(args.model, args.manifest, *paths)
    session = rec.session(load_model(args.model, manifest=args.manifest))
    labels = pseudo_label_set(session, paths, params)
    _emit(labels.to_text(), args.out)


def cmd_calibrate(args, rec):
    labels = PseudoLabelSet.load(args.labels)
    paths = read_image_list(args.images) if args.images else labels.paths
    rec.input(args.model, args.manifest, args.labels, args.taps_file, *paths)
    session = rec.session(load_model(args.model, manifest=args.manifest))
    taps = read_taps_file(args.taps_file) if args.taps_file else None
    config, report = calibrate(session, paths, labels, b=args.top_b, normalize=args.normalize,
                               force=args.force, taps=taps)
    save_config(config, args.out)
    report_path = args.report or str(args.out) + ".report.txt"
    Path(report_path).write_text(report.to_text())
    print(f"selected {len(config.taps)} taps (rho={report.joint_correlation:.4f}): "
          + ", ".join(config.taps), file=sys.stderr)


def cmd_score(args, rec):
    config = load_config(args.config)
    paths = read_image_list(args.images)
    rec.input(args.model, args.manifest, args.config, *paths)
    session = rec.session(load_model(args.model, manifest=args.manifest))
    entries = score_batch(session, config, paths, normalize=args.normalize_scores)
    table = ScoreFile(entries, observer=_sha256(args.config), normalized=args.normalize_scores)
    _emit(table.to_text(), args.out)


def cmd_embed(args, rec):
    paths = read_image_list(args.images)
    rec.input(args.model, args.manifest, *paths)
    session = rec.session(load_model(args.model, manifest=args.manifest))
    embed_set(session, paths).save(args.out)


def cmd_evaluate(args, rec):
    scores = ScoreFile.load(args.scores)
    protocol = PairProtocol.load(args.pairs)
    rec.input(args.scores, args.pairs, args.embeddings)
    if args.embeddings:
        store = EmbeddingStore.load(args.embeddings)
    elif args.model:
        rec.input(args.model, args.manifest)
        session = rec.session(load_model(args.model, manifest=args.manifest))
        store = embed_set(session, protocol.images)
        if args.embeddings_out:
            store.save(args.embeddings_out)
    else:
        raise InvalidParameter("evaluate needs --model or --embeddings")
    pair_scores = verification_scores(protocol, store)
    curve = edc_curve(pair_scores, scores.as_dict(), args.fmr)
    normalized = not args.no_normalize
    value = pauc(curve, args.discard_max, normalized)
    n_mated = sum(s.mated for s in pair_scores)
    summary = summary_record(curve, value, args.discard_max, normalized,
                             n_mated, len(pair_scores) - n_mated)
    if args.edc_out:
        emit_report(curve, args.edc_out, args.svg_out, discard_max=args.discard_max)
    _emit(json.dumps(summary, indent=2) + "\n", args.out)


def _add_model(p):
    p.add_argument("model", help="ONNX face-recognition model")
    p.add_argument("--manifest", help="model manifest (default: <model>.manifest sidecar)")


def build_parser():
    parser = argparse.ArgumentParser(prog="froq", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="list candidate taps of a model")
    _add_model(p)
    p.add_argument("--format", choices=("table", "tsv"), default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("pseudo-label", help="perturbation-based pseudo-quality labels")
    _add_model(p)
    p.add_argument("images", help="image directory or list file")
    p.add_argument("--alpha", type=float, default=0.001, help="noise mixing weight")
    p.add_argument("--occlusion-size", type=int, default=14, help="occlusion square side (px)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--run-manifest")
    p.set_defaults(func=cmd_pseudo_label)

    p = sub.add_parser("calibrate", help="select the observed taps")
    _add_model(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--images", help="image directory or list file (default: label paths)")
    p.add_argument("--top-b", type=int, default=10)
    p.add_argument("--normalize", action="store_true", help="min-max scale tap norms")
    p.add_argument("--taps-file", help="restrict candidates to an 'inspect --format tsv' listing")
    p.add_argument("--force", action="store_true", help="accept labels from another model")
    p.add_argument("--out", required=True, help="observer config path")
    p.add_argument("--report", help="report path (default: <out>.report.txt)")
    p.add_argument("--run-manifest")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="single-pass quality scores")
    _add_model(p)
    p.add_argument("images", help="image directory or list file")
    p.add_argument("--config", required=True, help="observer config")
    p.add_argument("--normalize-scores", action="store_true",
                   help="emit scores min-max scaled by the calibration range")
    p.add_argument("--out")
    p.add_argument("--run-manifest")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("embed", help="store embeddings for evaluation")
    _add_model(p)
    p.add_argument("images", help="image directory or list file")
    p.add_argument("--out", required=True)
    p.add_argument("--run-manifest")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("evaluate", help="EDC curve and pAUC of quality scores")
    p.add_argument("--scores", required=True, help="path<TAB>score file")
    p.add_argument("--pairs", required=True, help="image_a<TAB>image_b<TAB>0|1 file")
    p.add_argument("--model", help="model used to embed pair images")
    p.add_argument("--manifest")
    p.add_argument("--embeddings", help="precomputed embeddings store")
    p.add_argument("--embeddings-out", help="save embeddings computed with --model")
    p.add_argument("--fmr", type=float, default=1e-3)
    p.add_argument("--discard-max", type=float, default=0.2)
    p.add_argument("--no-normalize", action="store_true", help="report raw pAUC")
    p.add_argument("--edc-out", help="EDC CSV path")
    p.add_argument("--svg-out", help="EDC SVG path (needs --edc-out)")
    p.add_argument("--out", help="pAUC summary path (default: stdout)")
    p.add_argument("--run-manifest")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="froq: %(levelname)s: %(message)s", stream=sys.stderr)
    rec = RunRecord(args.command, args)
    try:
        args.func(args, rec)
    except InputError as exc:
        print(f"froq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except FroqError as exc:
        print(f"froq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"froq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    rec.write(_manifest_path(args))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
