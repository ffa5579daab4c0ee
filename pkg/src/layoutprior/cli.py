"""``layoutprior`` command line.

Exit codes: 0 success, 1 I/O failure, 2 malformed input or failed
validation, 3 bad flags or config. Errors go to stderr as one JSON line.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from . import __version__
from .analysis import (
    EmbeddingSet,
    gamma_from_sigma,
    load_attention,
    load_embeddings,
    median_heuristic_sigma,
    mmd,
    phase_shift,
)
from .doctags import DocTagsDoc, count_tokens, parse, serialize, tokenize, validate
from .errors import LayoutPriorError
from .guard import DEFAULT_MIN_REPEATS, DEFAULT_T_MAX, DEFAULT_TAIL_WINDOW, read_generations, stability_report
from .layout import PostprocessConfig, page_to_dict, postprocess, read_pages
from .mask import TokenSeq, mask_report
from .metrics import evaluate_corpus, per_page_csv
from .mock import (
    DegradeConfig,
    decode,
    detections_from_truth,
    read_fixtures,
    synth_corpus,
    write_fixtures,
)
from .prior import (
    DEFAULT_INSTRUCTION,
    LayoutPrior,
    PerturbConfig,
    build_prior,
    build_prompt,
    overhead_stats,
    perturb,
)

EXIT_IO = 1
EXIT_FORMAT = 2
EXIT_FLAGS = 3


class UsageError(Exception):
    pass


class FormatError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# output helpers


def _atomic_write(path, text: str) -> None:
    path = Path(path)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent or ".")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _dump_jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)


def _read_jsonl(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    return rows


def _unit(name):
    def check(text):
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not 0.0 <= v <= 1.0:
            raise argparse.ArgumentTypeError(f"{name} must lie in [0, 1], got {v}")
        return v

    return check


def _positive_int(text):
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _postprocess_cfg(args) -> PostprocessConfig:
    return PostprocessConfig(args.tau, args.iota, args.merge_ios)


# --------------------------------------------------------------------------
# subcommands


def cmd_postprocess(args):
    cfg = _postprocess_cfg(args)
    pages = sorted(read_pages(args.detections), key=lambda p: p.page_id)
    _atomic_write(args.out, _dump_jsonl(page_to_dict(postprocess(p, cfg)) for p in pages))


def _load_dims(path):
    dims = {}
    for obj in _read_jsonl(path):
        try:
            dims[str(obj["page_id"])] = (int(obj["width"]), int(obj["height"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: bad manifest row: {exc}") from None
    return dims


def cmd_prior(args):
    if args.perturb is not None and args.seed is None:
        raise UsageError("--perturb needs an explicit --seed")
    pcfg = PerturbConfig.from_label(args.perturb, args.seed) if args.perturb else None
    cfg = _postprocess_cfg(args)
    pages = read_pages(args.detections)
    if args.width_height_from:
        dims = _load_dims(args.width_height_from)
        pages = [replace(p, width=dims[p.page_id][0], height=dims[p.page_id][1]) if p.page_id in dims else p for p in pages]
    rows = []
    for page in sorted(pages, key=lambda p: p.page_id):
        prior = build_prior(page, cfg)
        label = None
        if pcfg is not None:
            prior = perturb(prior, pcfg)
            label = pcfg.label
        rows.append(build_prompt(prior, args.instruction, label, page.page_id).to_dict())
    _atomic_write(args.out, _dump_jsonl(rows))


def _doctags_files(path):
    path = Path(path)
    if path.is_dir():
        return sorted(path.glob("*.doctags"))
    if path.exists():
        return [path]
    raise FileNotFoundError(f"no such file or directory: {path}")


def cmd_validate(args):
    results = []
    for f in _doctags_files(args.doctags):
        data = f.read_bytes()
        try:
            doc = validate(data)
            results.append({"file": f.name, "ok": True, "elements": len(doc.elements), "tokens": doc.raw_token_count})
        except LayoutPriorError as exc:
            results.append({"file": f.name, "ok": False, "error": type(exc).__name__, "message": str(exc)})
    summary = {"files": len(results), "failed": sum(not r["ok"] for r in results), "results": results}
    text = _dump_json(summary)
    if args.out:
        _atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    if summary["failed"]:
        return EXIT_FORMAT
    return 0


def cmd_mask(args):
    rows = []
    for k, obj in enumerate(_read_jsonl(args.tokens)):
        try:
            toks = obj["tokens"]
            if isinstance(toks, str):
                toks = tokenize(toks)
            seq = TokenSeq(tuple(str(t) for t in toks), obj.get("logprobs"))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{args.tokens}: row {k + 1}: {exc}") from None
        out = mask_report(seq)
        if "id" in obj:
            out["id"] = obj["id"]
        rows.append(out)
    _atomic_write(args.out, _dump_jsonl(rows))


def cmd_guard(args):
    recs = read_generations(args.generations)
    report = stability_report(recs, args.t_max, args.min_repeats, args.window)
    _atomic_write(args.out, _dump_json(report.to_dict()))


def _load_docs(path):
    """Directory of ``<page_id>.doctags`` files, or a JSONL manifest."""
    path = Path(path)
    docs = {}
    if path.is_dir():
        for f in sorted(path.glob("*.doctags")):
            docs[f.stem] = parse(f.read_bytes())
        return docs
    for obj in _read_jsonl(path):
        try:
            pid = str(obj["page_id"])
            if "doctags" in obj:
                docs[pid] = parse(obj["doctags"])
            else:
                docs[pid] = parse((path.parent / obj["path"]).read_bytes())
        except KeyError as exc:
            raise FormatError(f"{path}: manifest row lacks {exc}") from None
    return docs


def cmd_eval(args):
    pred, ref = _load_docs(args.pred), _load_docs(args.ref)
    if not ref:
        raise FormatError(f"{args.ref}: no reference pages")
    triples = [(pid, pred.get(pid, DocTagsDoc()), ref[pid]) for pid in sorted(ref)]
    report, pages = evaluate_corpus(triples)
    out = report.to_dict()
    out["missing_pred"] = sorted(set(ref) - set(pred))
    if args.generations:
        recs = read_generations(args.generations)
        out["flagged_pages"] = sorted(r.page_id for r in recs if r.token_count > args.t_max and not r.ended_with_eos)
    _atomic_write(args.out, _dump_json(out))
    if args.per_page:
        _atomic_write(args.per_page, per_page_csv(pages))


def cmd_attn(args):
    tensor, segments, kinds = load_attention(args.tensor)
    _atomic_write(args.out, _dump_json(phase_shift(tensor, segments, kinds).to_dict()))


def cmd_mmd(args):
    x, y = load_embeddings(args.x), load_embeddings(args.y)
    if x.d != y.d:
        raise FormatError(f"dimension mismatch: {x.d} vs {y.d}")
    if args.gamma == "auto":
        sigma = median_heuristic_sigma(x, y)
        gamma = gamma_from_sigma(sigma)
    else:
        try:
            gamma = float(args.gamma)
        except ValueError:
            raise UsageError(f"--gamma must be 'auto' or a number, got {args.gamma!r}") from None
        if not gamma > 0:
            raise UsageError("--gamma must be positive")
        sigma = None
    rep = mmd(EmbeddingSet(x.rows, x.label), EmbeddingSet(y.rows, y.label), gamma, sigma).to_dict()
    rep["feature_dim"] = x.d
    rep["x_label"], rep["y_label"] = x.label, y.label
    _atomic_write(args.out, _dump_json(rep))


def _load_priors(path):
    priors = {}
    for obj in _read_jsonl(path):
        try:
            pid = str(obj["page_id"])
            block = obj.get("prior")
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: bad prompt row: {exc}") from None
        priors[pid] = None if not block else LayoutPrior.from_doc(pid, parse(block))
    return priors


def cmd_mock(args):
    try:
        cfg = DegradeConfig.from_spec(args.degrade, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    fixtures = read_fixtures(args.fixtures)
    if not fixtures:
        raise FormatError(f"{args.fixtures}: no .doctags fixtures")
    priors = _load_priors(args.prompts) if args.prompts else {}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    recs = []
    for fx in fixtures:
        doc, rec = decode(fx, priors.get(fx.page_id), cfg)
        _atomic_write(out / f"{fx.page_id}.doctags", serialize(doc))
        recs.append(rec.to_dict())
    _atomic_write(out / "generations.jsonl", _dump_jsonl(recs))


def cmd_overhead(args):
    prompts = []
    for obj in _read_jsonl(args.prompts):
        try:
            if "token_overhead" in obj:
                prompts.append(int(obj["token_overhead"]))
            else:
                prompts.append(count_tokens(obj["prior"]) if obj.get("prior") else 0)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{args.prompts}: bad prompt row: {exc}") from None
    stats = overhead_stats(prompts)
    stats["n_prompts"] = len(prompts)
    _atomic_write(args.out, _dump_json(stats))


def cmd_synth(args):
    fixtures = synth_corpus(args.pages, args.seed)
    write_fixtures(fixtures, args.out)
    pages = [page_to_dict(detections_from_truth(fx)) for fx in fixtures]
    _atomic_write(Path(args.out) / "detections.jsonl", _dump_jsonl(pages))


# --------------------------------------------------------------------------
# parser


def _add_postprocess_flags(p):
    p.add_argument(
        "--tau",
        type=_unit("--tau"),
        default=0.6,
        help="confidence threshold; detections scoring strictly above it are kept "
        "(default: 0.6, the published detector setting)",
    )
    p.add_argument(
        "--iota",
        type=_unit("--iota"),
        default=0.5,
        help="per-class NMS IoU threshold (default: 0.5, the published detector setting)",
    )
    p.add_argument(
        "--merge-ios",
        type=_unit("--merge-ios"),
        default=0.8,
        help="intersection-over-smaller threshold for fusing same-class fragments (default: 0.8)",
    )


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="layoutprior", description="DocTags layout-prior toolkit.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="JSON file of flag defaults, flat or keyed by subcommand")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("postprocess", help="filter, merge and suppress raw detections")
    p.add_argument("--detections", required=True, help="detections JSON/JSONL")
    p.add_argument("--out", required=True, help="post-processed detections JSONL")
    _add_postprocess_flags(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("prior", help="build DocTags layout priors and prompts from detections")
    p.add_argument("--detections", required=True, help="detections JSON/JSONL")
    p.add_argument("--width-height-from", help="JSONL manifest of {page_id, width, height} overriding page sizes")
    p.add_argument("--out", required=True, help="prompts JSONL")
    p.add_argument(
        "--perturb",
        help="ablation config in [S]-[P]-[D] form: S is ys (shuffle) or ns (keep order), "
        "P the injection probability, D the per-item dropout, e.g. ys-1.0-0.3",
    )
    p.add_argument("--seed", type=int, help="PRNG seed; required with --perturb")
    p.add_argument("--instruction", default=DEFAULT_INSTRUCTION, help=f"prompt instruction (default: {DEFAULT_INSTRUCTION!r})")
    _add_postprocess_flags(p)
    p.set_defaults(func=cmd_prior)

    p = sub.add_parser("validate", help="parse every .doctags file and check the byte-exact round trip")
    p.add_argument("--doctags", required=True, help="directory of .doctags files, or one file")
    p.add_argument("--out", help="write the JSON summary here instead of stdout")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("mask", help="location-token loss mask and masked NLL")
    p.add_argument("--tokens", required=True, help='JSONL of {"tokens": [...], "logprobs": [...]}')
    p.add_argument("--out", required=True, help="JSONL of masks and losses")
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("guard", help="per-domain runaway-generation failure rates")
    p.add_argument("--generations", required=True, help="generations JSONL")
    p.add_argument(
        "--t-max",
        type=_positive_int,
        default=DEFAULT_T_MAX,
        help="a generation longer than this without EOS is a failure (default: 5000, the published threshold)",
    )
    p.add_argument("--min-repeats", type=_positive_int, default=DEFAULT_MIN_REPEATS, help="repetitions for the period diagnostic (default: 4)")
    p.add_argument("--window", type=_positive_int, default=DEFAULT_TAIL_WINDOW, help="tail window for the period diagnostic (default: 512)")
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(func=cmd_guard)

    p = sub.add_parser("eval", help="text, table and reading-order metrics")
    p.add_argument("--pred", required=True, help="directory of .doctags files or JSONL manifest")
    p.add_argument("--ref", required=True, help="directory of .doctags files or JSONL manifest")
    p.add_argument("--out", required=True, help="corpus report JSON")
    p.add_argument("--per-page", help="per-page CSV")
    p.add_argument("--generations", help="generations JSONL; runaway pages are listed as flagged")
    p.add_argument("--t-max", type=_positive_int, default=DEFAULT_T_MAX, help="threshold used for flagging (default: 5000)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("attn", help="attention phase-shift summary")
    p.add_argument("--tensor", required=True, help="attention JSON")
    p.add_argument("--out", required=True, help="summary JSON")
    p.set_defaults(func=cmd_attn)

    p = sub.add_parser("mmd", help="RBF-kernel MMD between two embedding sets")
    p.add_argument("--x", required=True, help="embeddings CSV or JSONL")
    p.add_argument("--y", required=True, help="embeddings CSV or JSONL")
    p.add_argument("--gamma", default="auto", help="kernel gamma, or 'auto' for 1/(2 sigma^2) with the median heuristic (default: auto)")
    p.add_argument("--out", required=True, help="report JSON")
    p.set_defaults(func=cmd_mmd)

    p = sub.add_parser("mock", help="run the deterministic mock decoder over a fixture corpus")
    p.add_argument("--fixtures", required=True, help="directory of truth .doctags plus manifest.jsonl")
    p.add_argument("--prompts", help="prompts JSONL from `prior`; pages without a prior decode unguided")
    p.add_argument("--degrade", default="miss=0,loop=0", help="degradation without prior, e.g. miss=0.7,loop=0.1")
    p.add_argument("--seed", type=int, required=True, help="PRNG seed")
    p.add_argument("--out", required=True, help="output directory for predicted .doctags and generations.jsonl")
    p.set_defaults(func=cmd_mock)

    p = sub.add_parser("overhead", help="prompt token-overhead statistics")
    p.add_argument("--prompts", required=True, help="prompts JSONL")
    p.add_argument("--out", required=True, help="stats JSON")
    p.set_defaults(func=cmd_overhead)

    p = sub.add_parser("synth", help="write a synthetic fixture corpus with matching detections")
    p.add_argument("--pages", type=_positive_int, default=100, help="number of pages (default: 100)")
    p.add_argument("--seed", type=int, required=True, help="PRNG seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    return ap


def _apply_config(ap, argv):
    """Pre-scan for --config and install its values as subcommand defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    try:
        with open(known.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object")
    subparsers = next(a for a in ap._actions if isinstance(a, argparse._SubParsersAction)).choices
    for name, sp in subparsers.items():
        values = dict((k, v) for k, v in cfg.items() if not isinstance(v, dict))
        values.update(cfg.get(name, {}))
        dests = {a.dest for a in sp._actions}
        known_values = {k.replace("-", "_"): v for k, v in values.items() if k.replace("-", "_") in dests}
        sp.set_defaults(**known_values)
    all_dests = {a.dest for sp in subparsers.values() for a in sp._actions}
    unknown = [k for k, v in cfg.items() if not isinstance(v, dict) and k.replace("-", "_") not in all_dests]
    unknown += [k for k, v in cfg.items() if isinstance(v, dict) and k not in subparsers]
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")


def _fail(code, kind, message):
    sys.stderr.write(json.dumps({"error": kind, "message": str(message), "exit_code": code}) + "\n")
    return code


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    try:
        _apply_config(ap, argv)
        args = ap.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_FLAGS, "usage", exc)
    try:
        return args.func(args) or 0
    except UsageError as exc:
        return _fail(EXIT_FLAGS, "usage", exc)
    except (LayoutPriorError, FormatError, json.JSONDecodeError, UnicodeDecodeError, ValueError) as exc:
        return _fail(EXIT_FORMAT, type(exc).__name__, exc)
    except OSError as exc:
        return _fail(EXIT_IO, type(exc).__name__, exc)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
