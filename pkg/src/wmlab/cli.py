"""Command-line interface for the watermark lab.

Subcommands mirror the library: generate, detect, attack-perm, attack-key,
attack-full, spoof, experiment. The lab plays both sides, so "attack"
commands take the provider's secret files and simulate the query interface
an attacker would have. Exit codes: 0 success, 2 bad configuration, 3 the
attacker's assumptions were refuted by the data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .attacks.key_bounds import (
    KeyBounds,
    KnownSubsetOrder,
    estimate_key_bounds,
    estimate_key_bounds_partial,
    key_point_estimate,
)
from .attacks.pairwise_order import (
    ComparisonOracle,
    recover_ordering_mergesort,
    resolve_orientation,
)
from .attacks.perm_sort import (
    PartialPermutation,
    build_pair_dataset,
    recover_perm_by_sort,
)
from .detection import permutation_test
from .errors import AssumptionViolation, ConfigError, WmLabError
from .experiment import ExperimentConfig, export_report, run_benchmark
from .hashing import derive_seed
from .lm import ToyLM
from .spoof import SpoofConfig, make_spoof_config, spoof_generate
from .watermark import (
    Permutation,
    Transcript,
    generate,
    random_keys,
    reverse_perm,
)


def _read_json(path: str):
    if path == "-":
        return json.load(sys.stdin)
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_text(path: str | None, payload: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(payload)
        if not payload.endswith("\n"):
            sys.stdout.write("\n")
    else:
        Path(path).write_text(payload, encoding="utf-8")


def _parse_tokens(spec: str | None) -> tuple[int, ...]:
    if not spec:
        return ()
    return tuple(int(t) for t in spec.replace(",", " ").split())


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def _config_doc(args) -> dict:
    cfg = getattr(args, "config", None)
    if not cfg or getattr(args, "command", "") == "experiment":
        return {}
    doc = _read_json(cfg)
    if not isinstance(doc, dict):
        raise ConfigError("config", "config file must hold a JSON object")
    return doc


def _load_model(args) -> ToyLM:
    if args.model:
        return ToyLM.from_dict(_read_json(args.model))
    doc = _config_doc(args)
    if "model" in doc:
        return ToyLM.from_dict(doc["model"])
    seed = args.model_seed
    if seed is None:
        seed = derive_seed(_seed(args), "model")
    return ToyLM(vocab_size=args.vocab_size, seed=seed,
                 temperature=args.temperature,
                 context_window=args.context_window)


def _load_perm(args, model: ToyLM) -> Permutation:
    if args.perm:
        return Permutation(_read_json(args.perm))
    doc = _config_doc(args)
    if "perm" in doc:
        return Permutation(doc["perm"])
    rng = np.random.default_rng(derive_seed(_seed(args), "perm"))
    perm = Permutation.random(model.vocab_size, rng)
    if getattr(args, "save_perm", None):
        _write_text(args.save_perm, perm.to_json())
    return perm


def _load_keys(args) -> np.ndarray:
    if args.key:
        return np.asarray(_read_json(args.key), dtype=np.float64)
    doc = _config_doc(args)
    if "key" in doc:
        return np.asarray(doc["key"], dtype=np.float64)
    rng = np.random.default_rng(derive_seed(_seed(args), "keys"))
    keys = random_keys(args.key_length, rng)
    if getattr(args, "save_key", None):
        _write_text(args.save_key, json.dumps(keys.tolist()))
    return keys


def _read_transcripts(path: str) -> list[Transcript]:
    data = _read_json(path)
    if isinstance(data, dict):
        data = [data]
    return [Transcript.from_dict(d) for d in data]


def cmd_generate(args) -> int:
    model = _load_model(args)
    perm = _load_perm(args, model)
    keys = _load_keys(args)
    prompt = _parse_tokens(args.prompt)
    text = generate(model, prompt, args.tokens, keys, perm)
    tr = Transcript(prompt=prompt, text=text, key_id=args.key,
                    perm_id=args.perm, model_params=model.to_dict())
    _write_text(args.out, tr.to_json())
    return 0


def cmd_detect(args) -> int:
    model = _load_model(args)
    perm = _load_perm(args, model)
    keys = _load_keys(args)
    tr = _read_transcripts(args.input)[0]
    result = permutation_test(tr.text, keys, perm, model, T=args.resamples,
                              seed=_seed(args))
    if args.json:
        _write_text(args.out, result.to_json())
    else:
        _write_text(args.out, f"{result.p_value:.6g}")
    return 0


def cmd_attack_perm(args) -> int:
    if args.mode != "known-key":
        raise ConfigError("mode", f"unsupported attack mode {args.mode!r}")
    model = _load_model(args)
    perm = _load_perm(args, model)
    dataset = build_pair_dataset(model, perm, _parse_tokens(args.prefix),
                                 args.queries, _seed(args))
    if args.save_dataset:
        _write_text(args.save_dataset, dataset.to_csv())
    recovered = recover_perm_by_sort(dataset)
    payload = {"ordered_tokens": list(recovered.ordered_tokens),
               "inconsistent": recovered.inconsistent,
               "queries": len(dataset)}
    _write_text(args.out, json.dumps(payload, sort_keys=True))
    return 0


def cmd_attack_key(args) -> int:
    model = _load_model(args)
    perm = _load_perm(args, model)
    outputs = _read_transcripts(args.inputs)
    n = args.key_length
    if not 0.0 < args.known_fraction <= 1.0:
        raise ConfigError("known_fraction",
                          f"must lie in (0, 1], got {args.known_fraction}")
    if args.known_fraction >= 1.0:
        bounds = estimate_key_bounds(outputs, perm, model, n)
    else:
        # the attacker knows the ranks of the tokens they see most often
        count = max(1, int(round(args.known_fraction * model.vocab_size)))
        freq = np.zeros(model.vocab_size, dtype=np.int64)
        for tr in outputs:
            np.add.at(freq, np.fromiter(tr.tokens, dtype=np.int64), 1)
        pool = np.argsort(-freq, kind="stable")
        subset = KnownSubsetOrder.from_permutation(perm, pool[:count].tolist())
        bounds = estimate_key_bounds_partial(outputs, subset, model, n)
    if args.save_bounds:
        _write_text(args.save_bounds, bounds.to_csv())
    payload = json.loads(bounds.to_json())
    payload["est_keys"] = key_point_estimate(bounds).tolist()
    _write_text(args.out, json.dumps(payload, sort_keys=True))
    return 0


def cmd_attack_full(args) -> int:
    model = _load_model(args)
    perm = _load_perm(args, model)
    keys = _load_keys(args)
    oracle = ComparisonOracle(model, perm, key_slot_xi=float(keys[0]))
    ordering = recover_ordering_mergesort(model.vocab_size, oracle)
    outputs = []
    for j in range(args.attack_samples):
        rng = np.random.default_rng(derive_seed(_seed(args), "attack-prompt", j))
        prompt = tuple(int(t) for t in
                       rng.integers(0, model.vocab_size, size=3))
        outputs.append(Transcript(
            prompt=prompt,
            text=generate(model, prompt, args.tokens, keys, perm)))
    adopted, bounds = resolve_orientation(ordering, outputs, model, len(keys))
    payload = {
        "ordered_tokens": list(ordering.ordered_tokens),
        "query_count": ordering.query_count,
        "orientation": ordering.orientation,
        "adopted_forward": adopted.forward.tolist(),
        "est_keys": key_point_estimate(bounds).tolist(),
        "bounds": json.loads(bounds.to_json()),
    }
    _write_text(args.out, json.dumps(payload, sort_keys=True))
    return 0


def cmd_spoof(args) -> int:
    model = _load_model(args)
    bounds = KeyBounds.from_json(Path(args.bounds).read_text(encoding="utf-8"))
    order = _read_json(args.order)
    if isinstance(order, dict) and "rank_of" in order:
        partial = KnownSubsetOrder(
            {int(t): int(r) for t, r in order["rank_of"].items()})
        cfg = make_spoof_config(partial, bounds, model.vocab_size,
                                fill_seed=args.fill_seed)
    else:
        if isinstance(order, dict):
            order = order.get("adopted_forward") or order["ordered_tokens"]
        if len(order) == model.vocab_size:
            cfg = SpoofConfig(est_perm=Permutation(order),
                              est_keys=key_point_estimate(bounds),
                              known_fraction=1.0, fill_seed=args.fill_seed)
        else:
            cfg = make_spoof_config(PartialPermutation(tuple(order)), bounds,
                                    model.vocab_size, fill_seed=args.fill_seed)
    transcripts = []
    for j in range(args.count):
        rng = np.random.default_rng(derive_seed(_seed(args), "spoof-prompt", j))
        prompt = (_parse_tokens(args.prompt) if args.prompt else
                  tuple(int(t) for t in
                        rng.integers(0, model.vocab_size, size=3)))
        text = spoof_generate(model, prompt, args.tokens, cfg)
        transcripts.append(Transcript(
            prompt=prompt, text=text, model_params=model.to_dict(),
            extra={"known_fraction": cfg.known_fraction,
                   "fill_seed": cfg.fill_seed}).to_dict())
    _write_text(args.out, json.dumps(transcripts, sort_keys=True))
    return 0


def cmd_experiment(args) -> int:
    if args.config:
        config = ExperimentConfig.from_dict(_read_json(args.config))
    else:
        config = ExperimentConfig()
    if args.seed is not None:
        config = ExperimentConfig.from_dict(
            {**config.to_dict(), "master_seed": args.seed})
    report = run_benchmark(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    export_report(report, "json", out_dir / "report.json")
    export_report(report, "csv", out_dir / "report.csv")
    for stage, secs in report.runtimes.items():
        print(f"# {stage}: {secs:.2f}s", file=sys.stderr)
    if args.json:
        sys.stdout.write(report.to_json())
    else:
        for cat in sorted(report.categories):
            m = report.categories[cat]
            print(f"{cat}: median_p={m.median_p:.4g} "
                  f"rejection_rate={m.rejection_rate:.2f}")
        for label in sorted(report.key_mae):
            print(f"key_mae[{label}] = {report.key_mae[label]:.4g}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None,
                   help="seed for any randomness this command introduces")
    p.add_argument("--json", action="store_true",
                   help="emit full JSON output")
    p.add_argument("--config", default=None,
                   help="JSON document supplying model/key/perm material "
                        "(for experiment: the benchmark configuration)")
    p.add_argument("--out", default=None, help="output path (default stdout)")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", help="model parameter JSON file")
    p.add_argument("--vocab-size", type=int, default=64)
    p.add_argument("--model-seed", type=int, default=None)
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--context-window", type=int, default=3)


def _add_secrets(p: argparse.ArgumentParser) -> None:
    p.add_argument("--key-file", "--key", dest="key",
                   help="secret key JSON file (array of floats)")
    p.add_argument("--key-length", type=int, default=16)
    p.add_argument("--save-key", help="write the generated key here")
    p.add_argument("--perm-file", "--perm", dest="perm",
                   help="secret permutation JSON file (array)")
    p.add_argument("--save-perm", help="write the generated permutation here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wmlab",
        description="inverse-transform-sampling watermark laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate watermarked tokens")
    _add_common(p); _add_model(p); _add_secrets(p)
    p.add_argument("--prompt", help="prompt tokens, e.g. '3,1,4'")
    p.add_argument("-m", "--tokens", type=int, default=50)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run the watermark permutation test")
    _add_common(p); _add_model(p); _add_secrets(p)
    p.add_argument("--input", required=True,
                   help="transcript JSON file ('-' for stdin)")
    p.add_argument("-T", "--resamples", type=int, default=999)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("attack-perm",
                       help="recover the permutation with chosen keys")
    _add_common(p); _add_model(p)
    p.add_argument("--mode", default="known-key", choices=["known-key"])
    p.add_argument("--perm-file", "--perm", dest="perm",
                   help="provider's secret permutation JSON file")
    p.add_argument("-N", "--queries", type=int, default=3200)
    p.add_argument("--prefix", help="fixed prompt tokens")
    p.add_argument("--save-dataset", help="write the (xi, token) CSV here")
    p.set_defaults(func=cmd_attack_perm)

    p = sub.add_parser("attack-key",
                       help="interval-estimate keys from watermarked outputs")
    _add_common(p); _add_model(p)
    p.add_argument("--perm-file", "--perm", dest="perm", required=True,
                   help="known permutation JSON file")
    p.add_argument("--inputs", required=True,
                   help="watermarked transcripts JSON file")
    p.add_argument("-n", "--key-length", type=int, required=True)
    p.add_argument("--known-fraction", type=float, default=1.0)
    p.add_argument("--save-bounds", help="write the bounds CSV here")
    p.set_defaults(func=cmd_attack_key)

    p = sub.add_parser("attack-full",
                       help="recover order and keys from scratch")
    _add_common(p); _add_model(p); _add_secrets(p)
    p.add_argument("--attack-samples", type=int, default=200)
    p.add_argument("-m", "--tokens", type=int, default=50)
    p.set_defaults(func=cmd_attack_full)

    p = sub.add_parser("spoof", help="generate spoofed transcripts")
    _add_common(p); _add_model(p)
    p.add_argument("--order", required=True,
                   help="recovered order JSON (list, attack-full output, or "
                        "{'rank_of': {token: rank}})")
    p.add_argument("--bounds", required=True, help="KeyBounds JSON file")
    p.add_argument("--fill-seed", type=int, default=0)
    p.add_argument("--prompt", help="fixed prompt tokens (default: random)")
    p.add_argument("-m", "--tokens", type=int, default=50)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_spoof)

    p = sub.add_parser("experiment", help="run the full toy benchmark")
    _add_common(p)
    p.add_argument("--out-dir", default=".",
                   help="directory for report.json / report.csv")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except AssumptionViolation as e:
        print(f"assumption violated: {e}", file=sys.stderr)
        return 3
    except WmLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except OSError as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
