"""Command-line entry point.

Every subcommand prints a one-line JSON summary on stdout; human-readable
logging goes to stderr. Exit codes: 0 success, 1 validation/usage error,
2 I/O or file-format error. All outputs are deterministic for fixed inputs
and seeds. The environment variable GAPBRIDGE_THREADS caps numeric worker
threads when the optional threadpoolctl package is available.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import embio, evalmetrics, gapmap, gauss, prompts, synth, trainer
from .errors import (
    CorruptionError,
    FormatError,
    GapBridgeError,
    UsageError,
    ValidationError,
)
from .rng import SeededRng

logger = logging.getLogger("gapbridge")

# Seed-stream separators for gen-synth's three stochastic stages.
_TRUTH_SEED_XOR = 0x517CC1B727220A95
_IMAGE_SEED_XOR = 0x2545F4914F6CDD1D

_SYNTH_KEYS = {
    "dim", "count", "clusters", "cluster_spread",
    "bias_mean_scale", "bias_cov_scale", "seed",
}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of calling sys.exit."""

    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="gapbridge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="generate a synthetic paired dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("estimate", help="estimate bias parameters from pairs")
    p.add_argument("--setting", type=int, choices=(1, 2), required=True)
    p.add_argument("--images", help="image embeddings (.emb)")
    p.add_argument("--texts", help="paired text embeddings (setting 1)")
    p.add_argument("--web-texts", help="paired web text embeddings (setting 2)")
    p.add_argument("--corpus-texts", help="unpaired corpus text embeddings (setting 2)")
    p.add_argument("--no-cov-correction", action="store_true",
                   help="setting 2: correct the mean only, keep the web covariance")
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="train bias + reverse map without pairs")
    p.add_argument("--setting", type=int, choices=(3, 4), required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--images")
    p.add_argument("--train-config", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-plot", action="store_true")

    p = sub.add_parser("map", help="texts + sampled noise -> pseudo images")
    p.add_argument("--params", required=True)
    p.add_argument("--texts", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--renormalize", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("reverse", help="apply a fitted reverse map")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a fitted model against a paired set")
    p.add_argument("--model", required=True)
    p.add_argument("--pair", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)

    p = sub.add_parser("hist", help="residual histograms as CSV")
    p.add_argument("--pair", required=True)
    p.add_argument("--dims", required=True, help="comma-separated indices, e.g. 0,1,5")
    p.add_argument("--bins", type=int, default=50)
    p.add_argument("--out", required=True)
    p.add_argument("--plot", help="also render the histograms to this PNG")

    p = sub.add_parser("prompt", help="build refinement prompts")
    p.add_argument("--lexicon", required=True)
    p.add_argument("--pairs", help="TSV with columns rough, gt")
    p.add_argument("--rough")
    p.add_argument("--gt")
    p.add_argument("--p", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _apply_thread_cap() -> None:
    raw = os.environ.get("GAPBRIDGE_THREADS")
    if not raw:
        return
    try:
        cap = int(raw)
    except ValueError as exc:
        raise ValidationError(f"GAPBRIDGE_THREADS must be an integer, got {raw!r}") from exc
    if cap < 1:
        raise ValidationError(f"GAPBRIDGE_THREADS must be >= 1, got {cap}")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(cap)
    except ImportError:
        logger.debug("threadpoolctl unavailable; GAPBRIDGE_THREADS noted but not enforced")


def _emit(summary: dict) -> None:
    sys.stdout.write(json.dumps(summary) + "\n")


def _cmd_gen_synth(args) -> dict:
    try:
        payload = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{args.config}: not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError(f"{args.config}: config must be a JSON object")
    unknown = set(payload) - _SYNTH_KEYS
    if unknown:
        raise ValidationError(f"{args.config}: unknown keys {sorted(unknown)}")
    spec = synth.SynthSpec(**payload)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts = synth.gen_text_embeddings(spec)
    truth = synth.gen_bias_truth(
        spec.dim, spec.bias_mean_scale, spec.bias_cov_scale,
        spec.seed ^ _TRUTH_SEED_XOR,
    )
    images = synth.gen_paired_images(
        texts, truth, SeededRng(spec.seed ^ _IMAGE_SEED_XOR)
    )
    embio.write_embeddings(texts, out / "texts.emb")
    embio.write_embeddings(images, out / "images.emb")
    gauss.save_params(truth, out / "truth.json")
    embio.write_pair_manifest(
        embio.PairManifest(image_path="images.emb", text_path="texts.emb"),
        out / "pair.json",
    )
    logger.info("wrote synthetic pair (n=%d, d=%d) to %s", spec.count, spec.dim, out)
    return {
        "command": "gen-synth", "count": spec.count, "dim": spec.dim,
        "out_dir": str(out),
        "files": ["texts.emb", "images.emb", "truth.json", "pair.json"],
    }


def _require(args, flag: str):
    value = getattr(args, flag.lstrip("-").replace("-", "_"))
    if value is None:
        raise UsageError(f"missing required flag {flag} for this mode")
    return value


def _cmd_estimate(args) -> dict:
    images = embio.read_embeddings(_require(args, "--images"))
    if args.setting == 1:
        texts = embio.read_embeddings(_require(args, "--texts"))
        params = gapmap.estimate_setting1(images, texts)
    else:
        web_texts = embio.read_embeddings(_require(args, "--web-texts"))
        corpus = embio.read_embeddings(_require(args, "--corpus-texts"))
        params = gapmap.estimate_setting2(
            images, web_texts, corpus,
            correct_covariance=not args.no_cov_correction,
        )
    gauss.save_params(params, args.out)
    logger.info("estimated %s parameters (d=%d)", params.provenance, params.dim)
    return {
        "command": "estimate", "setting": args.setting, "dim": params.dim,
        "provenance": params.provenance, "out": args.out,
    }


def _cmd_fit(args) -> dict:
    corpus = embio.read_embeddings(args.corpus)
    config = trainer.load_train_config(args.train_config)
    if args.setting == 3:
        images = embio.read_embeddings(_require(args, "--images"))
        model = trainer.train_setting3(corpus, images, config)
    else:
        model = trainer.train_setting4(corpus, config)
    out = Path(args.out_dir)
    trainer.save_fitted(model, out)
    files = ["model.json", "params.json", "reverse.json", "history.csv"]
    if not args.no_plot and model.history:
        from .figures import save_history_plot

        save_history_plot(model.history, out / "history.png")
        files.append("history.png")
    final = model.history[-1] if model.history else None
    logger.info("fit complete: %d steps", len(model.history))
    return {
        "command": "fit", "setting": args.setting, "steps": len(model.history),
        "final_loss_map": final.loss_map if final else None,
        "out_dir": str(out), "files": files,
    }


def _cmd_map(args) -> dict:
    params = gauss.load_params(args.params)
    texts = embio.read_embeddings(args.texts)
    module = gapmap.MappingModule(
        params=params,
        trainable=params.provenance == "fitted",
        renormalize_after_map=args.renormalize,
    )
    mapped = gapmap.map_forward(texts, module, SeededRng(args.seed))
    embio.write_embeddings(mapped, args.out)
    return {
        "command": "map", "count": mapped.count, "dim": mapped.dim,
        "seed": args.seed, "out": args.out,
    }


def _cmd_reverse(args) -> dict:
    model = trainer.load_fitted(args.model)
    matrix = embio.read_embeddings(args.input)
    from .revmap import revmap_forward

    recon = revmap_forward(matrix.as_f64(), model.reverse)
    out_matrix = embio.EmbeddingMatrix(rows=recon.astype(np.float32), ids=matrix.ids)
    embio.write_embeddings(out_matrix, args.out)
    return {
        "command": "reverse", "count": out_matrix.count, "dim": out_matrix.dim,
        "out": args.out,
    }


def _cmd_eval(args) -> dict:
    model = trainer.load_fitted(args.model)
    manifest = embio.read_pair_manifest(args.pair)
    images, texts = embio.load_paired(manifest)
    report = evalmetrics.build_eval_report(
        images, texts, model.mapping.params, model.reverse, seed=args.seed
    )
    Path(args.report).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    summary = {"command": "eval", "report": args.report}
    summary.update(report.to_dict())
    summary.pop("notes")
    return summary


def _cmd_hist(args) -> dict:
    manifest = embio.read_pair_manifest(args.pair)
    images, texts = embio.load_paired(manifest)
    try:
        dims = [int(part) for part in args.dims.split(",") if part != ""]
    except ValueError as exc:
        raise ValidationError(f"--dims must be comma-separated integers, got {args.dims!r}") from exc
    rows = evalmetrics.export_residual_histograms(images, texts, dims, args.bins)
    evalmetrics.write_histogram_csv(rows, args.out)
    files = [args.out]
    if args.plot:
        from .figures import save_histogram_plot

        save_histogram_plot(rows, args.plot)
        files.append(args.plot)
    return {
        "command": "hist", "dims": dims, "bins": args.bins,
        "rows": len(rows), "out": args.out, "files": files,
    }


def _read_pairs_tsv(path: str) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValidationError(
                f"{path}:{lineno}: expected 2 tab-separated columns, got {len(parts)}"
            )
        pairs.append((parts[0], parts[1]))
    return pairs


def _escape_line(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\n", "\\n")


def _cmd_prompt(args) -> dict:
    lexicon = prompts.load_lexicon(args.lexicon)
    if args.pairs is not None:
        pairs = _read_pairs_tsv(args.pairs)
    elif args.rough is not None and args.gt is not None:
        pairs = [(args.rough, args.gt)]
    else:
        raise UsageError("provide either --pairs or both --rough and --gt")
    rng = SeededRng(args.seed)
    lines = []
    padded = 0
    for rough, gt in pairs:
        record = prompts.stage2_prompt_or_padding(rough, gt, lexicon, p=args.p, rng=rng)
        if record.serialized == prompts.PADDING_MARKER:
            padded += 1
        lines.append(_escape_line(record.serialized))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "command": "prompt", "records": len(lines), "padded": padded, "out": args.out,
    }


_HANDLERS = {
    "gen-synth": _cmd_gen_synth,
    "estimate": _cmd_estimate,
    "fit": _cmd_fit,
    "map": _cmd_map,
    "reverse": _cmd_reverse,
    "eval": _cmd_eval,
    "hist": _cmd_hist,
    "prompt": _cmd_prompt,
}


def run(argv: list[str]) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=os.environ.get("GAPBRIDGE_LOG", "WARNING")
    )
    parser = _build_parser()
    try:
        _apply_thread_cap()
        args = parser.parse_args(argv)
        summary = _HANDLERS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return 1
    except (FormatError, CorruptionError) as exc:
        sys.stderr.write(f"format error: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"missing file: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"io error: {exc}\n")
        return 2
    except GapBridgeError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    _emit(summary)
    return 0


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
