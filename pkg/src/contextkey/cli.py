"""Command-line front end: run, attack, sweep, verify.

Exit codes: 0 success (inequality violated), 2 inequality not violated
(eavesdropping indicated), 64 usage error, 70 internal invariant failure.

All artifacts are deterministic functions of the seed and flags: the
transcript (one JSON record per round), the machine report, the key files,
and the sweep CSVs are byte-identical across reruns and thread counts.
Wall-clock timing lives only in the manifest.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, adversary, inequality, noise, protocol, verification
from .qmath import InvariantViolation

EXIT_OK = 0
EXIT_NO_VIOLATION = 2
EXIT_USAGE = 64
EXIT_INTERNAL = 70

OUTDIR_ENV = "CONTEXTKEY_OUTDIR"

OBSERVABLE_HELP = """\
Observable labels (prefix + qudit-party digit):
  Xk, Yk, Zk     Pauli observables of party k (Mermin settings; any k <= N)
  XpZk           (X_k + Z_k)/sqrt(2)
  ZmXk           (Z_k - X_k)/sqrt(2)
Setting sets:
  Mermin party k:        Xk, Yk, Zk          (key setting: Zk)
  CHSH odd parties:      X1, XpZ1, Z1        (key settings: XpZ1, Z1)
  CHSH even parties:     XpZ2, Z2, ZmX2      (key settings: XpZ2, Z2)
"""


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_run_flags(parser, with_noise=True):
    parser.add_argument("--kind", choices=("mermin", "chsh"), required=True)
    parser.add_argument("--parties", type=int, required=True)
    parser.add_argument("--rounds", type=int, required=True)
    parser.add_argument("--seed", type=int, default=None, help="default: randomized, printed")
    parser.add_argument("--no-masking", action="store_true")
    parser.add_argument(
        "--masking-exclude-key",
        action="store_true",
        help="drop the key observable from the masking generators",
    )
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--outdir", default=None)
    parser.add_argument("--prefix", default=None, help="output file prefix")
    parser.add_argument("--config", default=None, help="key = value file mirroring these flags")
    if with_noise:
        parser.add_argument("--prep-noise", default=None, help="flip:EPS1,EPS2 or white:EPS")
        parser.add_argument("--detector-noise", default=None, help="misread:ETA or loss:ETA")


def build_parser() -> _Parser:
    parser = _Parser(prog="contextkey", description=__doc__)
    parser.add_argument("--list-observables", action="store_true", help="print label table and exit")
    parser.add_argument("--version", action="version", version=f"contextkey {__version__}")
    sub = parser.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="execute a protocol and sift a key")
    _add_run_flags(run_p)

    attack_p = sub.add_parser("attack", help="run with an eavesdropper and report leakage")
    _add_run_flags(attack_p)
    attack_p.add_argument("--eve-link", type=int, required=True)
    attack_p.add_argument("--eve-obs", required=True, help="observable label, see --list-observables")
    attack_p.add_argument(
        "--eve-strategy",
        choices=("auto", "commuting-measure", "noncommuting-measure", "measure-resend"),
        default="auto",
    )
    attack_p.add_argument("--eve-activity", type=float, default=1.0)
    attack_p.add_argument("--eve-resend", choices=("post-state", "fresh-reference"), default="post-state")

    sweep_p = sub.add_parser("sweep", help="emit analytic key-rate surfaces as CSV")
    sweep_p.add_argument("--model", choices=noise.MODELS, required=True)
    sweep_p.add_argument("--kind", choices=("mermin", "chsh"), default="mermin")
    sweep_p.add_argument("--grid", type=int, default=None, help="points per axis (default 51 / 101)")
    sweep_p.add_argument("--eta", type=float, default=None, help="detector parameter for model1/model2")
    sweep_p.add_argument("--outdir", default=None)
    sweep_p.add_argument("--config", default=None)
    sweep_p.add_argument("--empirical-rounds", type=int, default=None)
    sweep_p.add_argument("--empirical-grid", type=int, default=6)
    sweep_p.add_argument("--seed", type=int, default=None)

    sub.add_parser("verify", help="run the deterministic invariant checks")
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Insert flags from a key = value file right after the subcommand."""
    if "--config" not in argv:
        return argv
    path = argv[argv.index("--config") + 1]
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"malformed config line: {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() in ("true", "yes", "on"):
            tokens.append(flag)
        elif value.lower() in ("false", "no", "off"):
            continue
        else:
            tokens.extend([flag, value])
    return argv[:1] + tokens + argv[1:]


def _parse_prep_noise(spec: str | None):
    if spec is None:
        return None
    kind, _, params = spec.partition(":")
    try:
        if kind == "flip":
            eps1, eps2 = (float(x) for x in params.split(","))
            return noise.FlipPrep(eps1, eps2)
        if kind == "white":
            return noise.WhitePrep(float(params))
    except ValueError as exc:
        raise UsageError(f"bad --prep-noise {spec!r}: {exc}") from exc
    raise UsageError(f"unknown preparation noise kind {kind!r}")


def _parse_detector_noise(spec: str | None):
    if spec is None:
        return None
    kind, _, params = spec.partition(":")
    try:
        if kind == "misread":
            return noise.MisreadDetector(float(params))
        if kind == "loss":
            return noise.LossDetector(float(params))
    except ValueError as exc:
        raise UsageError(f"bad --detector-noise {spec!r}: {exc}") from exc
    raise UsageError(f"unknown detector noise kind {kind!r}")


def _resolve_outdir(flag_value: str | None) -> Path:
    outdir = Path(flag_value or os.environ.get(OUTDIR_ENV) or "contextkey-out")
    outdir.mkdir(parents=True, exist_ok=True)
    return outdir


def _resolve_seed(flag_value: int | None) -> int:
    if flag_value is not None:
        return flag_value
    return int(np.random.SeedSequence().entropy % (2**63))


def _build_config(args, eve=None) -> protocol.ProtocolConfig:
    noise_cfg = None
    prep = _parse_prep_noise(getattr(args, "prep_noise", None))
    detector = _parse_detector_noise(getattr(args, "detector_noise", None))
    if prep is not None or detector is not None:
        noise_cfg = noise.NoiseConfig(prep=prep, detector=detector)
    try:
        return protocol.ProtocolConfig(
            kind=args.kind,
            num_parties=args.parties,
            rounds=args.rounds,
            seed=args.seed,
            masking_enabled=not args.no_masking,
            masking_include_key=not args.masking_exclude_key,
            noise=noise_cfg,
            eve=eve,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _estimate_dict(est: inequality.InequalityEstimate) -> dict:
    return {
        "value": est.value if math.isfinite(est.value) else None,
        "standard_error": est.standard_error if math.isfinite(est.standard_error) else None,
        "classical_bound": est.classical_bound,
        "violated": est.violated,
        "usable": est.usable,
        "samples_per_term": est.samples_per_term,
    }


def _record_dict(rec: protocol.RoundRecord) -> dict:
    return {
        "round": rec.round_id,
        "labels": list(rec.labels),
        "outcomes": list(rec.outcomes),
        "eve_label": rec.eve_label,
        "eve_outcome": rec.eve_outcome,
        "revealed": rec.revealed,
        "key_round": rec.key_round,
    }


def write_transcript(transcript: protocol.Transcript, path: Path):
    with path.open("w") as handle:
        for rec in transcript.records:
            handle.write(json.dumps(_record_dict(rec), sort_keys=True))
            handle.write("\n")


def read_transcript(path: Path, config: protocol.ProtocolConfig) -> protocol.Transcript:
    records = []
    for line in path.read_text().splitlines():
        raw = json.loads(line)
        records.append(
            protocol.RoundRecord(
                round_id=raw["round"],
                labels=tuple(raw["labels"]),
                outcomes=tuple(raw["outcomes"]),
                eve_label=raw["eve_label"],
                eve_outcome=raw["eve_outcome"],
                revealed=raw["revealed"],
                key_round=raw["key_round"],
            )
        )
    return protocol.Transcript(config=config, records=tuple(records), seed=config.seed)


def _write_json(payload: dict, path: Path):
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _manifest(command: str, args_echo: dict, seed: int, outputs: list[Path], rounds: int, started: float) -> dict:
    return {
        "command": command,
        "config": args_echo,
        "seed": seed,
        "artifact_version": __version__,
        "schema_version": 1,
        "outputs": [str(p) for p in outputs],
        "rounds": rounds,
        "wall_clock_s": round(time.monotonic() - started, 3),
    }


def _execute_protocol(args, eve=None):
    args.seed = _resolve_seed(args.seed)
    config = _build_config(args, eve=eve)
    transcript = protocol.run_protocol(config, threads=max(1, args.threads))
    sifting = protocol.sift(transcript)
    key = protocol.extract_key(sifting)
    estimates = protocol.check_estimates(transcript)
    return config, transcript, sifting, key, estimates


def _key_rate_section(transcript) -> dict | None:
    if transcript.config.noise is None:
        return None
    try:
        report = noise.empirical_key_rate(transcript)
    except noise.InsufficientKeyRounds as exc:
        return {"error": str(exc)}
    return {
        "pairwise_mi": {f"{i}-{j}": mi for (i, j), mi in sorted(report.pairwise_mi.items())},
        "key_rate": report.key_rate,
        "min_pair": f"{report.min_pair[0]}-{report.min_pair[1]}",
    }


def _run_report(config, transcript, sifting, key, estimates) -> dict:
    expected_fraction = (2.0 if config.kind == "chsh" else 1.0) / 3.0**config.num_parties
    return {
        "kind": config.kind,
        "parties": config.num_parties,
        "rounds": config.rounds,
        "seed": config.seed,
        "masking": config.masking_enabled,
        "sifting": {
            "key_rounds": len(sifting.key_rounds),
            "check_rounds": len(sifting.check_rounds),
            "discarded": len(sifting.discarded),
        },
        "key_fraction": len(sifting.key_rounds) / config.rounds,
        "expected_key_fraction": expected_fraction,
        "key_agreement": key.agreement_fraction,
        "complete_key_rounds": key.num_complete,
        "estimates": {name: _estimate_dict(est) for name, est in sorted(estimates.items())},
        "violated": protocol.all_checks_violated(estimates),
        "empirical_key_rate": None,
    }


def _write_key_files(key: protocol.KeyMaterial, outdir: Path, prefix: str) -> list[Path]:
    paths = []
    for party, bits in enumerate(key.bits, start=1):
        path = outdir / f"{prefix}-key-party{party}.txt"
        path.write_text("".join("e" if b is None else str(b) for b in bits) + "\n")
        paths.append(path)
    return paths


def _print_run_summary(report: dict):
    print(f"kind={report['kind']} parties={report['parties']} rounds={report['rounds']} seed={report['seed']}")
    sift_line = report["sifting"]
    print(
        f"sifted: key={sift_line['key_rounds']} check={sift_line['check_rounds']} "
        f"discarded={sift_line['discarded']} (key fraction {report['key_fraction']:.5f}, "
        f"expected {report['expected_key_fraction']:.5f})"
    )
    for name, est in report["estimates"].items():
        if est["value"] is None:
            print(f"{name}: insufficient data")
            continue
        print(
            f"{name}: value={est['value']:.4f} ± {est['standard_error']:.4f} "
            f"bound={est['classical_bound']:.4f} violated={est['violated']}"
        )
    agreement = report["key_agreement"]
    print(f"key agreement: {'n/a' if agreement is None else f'{agreement:.4f}'}")
    print("verdict: " + ("inequality violated (no eavesdropping indicated)" if report["violated"]
                         else "NO violation (presence of eavesdropping is indicated)"))


def cmd_run(args) -> int:
    started = time.monotonic()
    config, transcript, sifting, key, estimates = _execute_protocol(args)
    outdir = _resolve_outdir(args.outdir)
    prefix = args.prefix or "run"
    report = _run_report(config, transcript, sifting, key, estimates)
    report["empirical_key_rate"] = _key_rate_section(transcript)
    transcript_path = outdir / f"{prefix}-transcript.jsonl"
    write_transcript(transcript, transcript_path)
    report_path = outdir / f"{prefix}-report.json"
    _write_json(report, report_path)
    key_paths = _write_key_files(key, outdir, prefix)
    outputs = [transcript_path, report_path, *key_paths]
    manifest = _manifest("run", report | {"outdir": str(outdir)}, config.seed, outputs, config.rounds, started)
    _write_json(manifest, outdir / f"{prefix}-manifest.json")
    _print_run_summary(report)
    return EXIT_OK if report["violated"] else EXIT_NO_VIOLATION


def _classify_eve_strategy(args) -> str:
    """Resolve --eve-strategy auto by checking commutation."""
    probe = adversary.EveConfig(
        position=args.eve_link,
        observable=args.eve_obs,
        strategy="commuting-measure",
        activity_rate=args.eve_activity,
        resend=args.eve_resend,
    )
    try:
        protocol._Engine(
            protocol.ProtocolConfig(
                kind=args.kind, num_parties=args.parties, rounds=1, seed=0, eve=probe
            )
        )
    except InvariantViolation:
        return "noncommuting-measure"
    return "commuting-measure"


def cmd_attack(args) -> int:
    started = time.monotonic()
    try:
        strategy = args.eve_strategy
        if strategy == "auto":
            strategy = _classify_eve_strategy(args)
        eve = adversary.EveConfig(
            position=args.eve_link,
            observable=args.eve_obs,
            strategy=strategy,
            activity_rate=args.eve_activity,
            resend=args.eve_resend,
        )
        # surface bad labels / wrong commuting claims as usage errors
        protocol._Engine(
            protocol.ProtocolConfig(kind=args.kind, num_parties=args.parties, rounds=1, seed=0, eve=eve)
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    config, transcript, sifting, key, estimates = _execute_protocol(args, eve=eve)
    leakage = adversary.leakage_analysis(transcript)
    outdir = _resolve_outdir(args.outdir)
    prefix = args.prefix or "attack"
    report = _run_report(config, transcript, sifting, key, estimates)
    report["empirical_key_rate"] = _key_rate_section(transcript)
    report["eve"] = {
        "link": eve.position,
        "observable": eve.observable,
        "strategy": eve.strategy,
        "activity_rate": eve.activity_rate,
        "mutual_information_bits": leakage.eve_key_mutual_information,
        "attacked_key_rounds": leakage.attacked_key_rounds,
        "detected": leakage.detected,
        "sufficient_data": leakage.sufficient_data,
    }
    if config.kind == "chsh":
        try:
            links = adversary.localize_eve(protocol.chsh_pair_estimates(transcript))
            report["eve"]["localized_links"] = sorted(links)
        except adversary.InsufficientCheckData as exc:
            report["eve"]["localized_links"] = None
            report["eve"]["localization_error"] = str(exc)
    transcript_path = outdir / f"{prefix}-transcript.jsonl"
    write_transcript(transcript, transcript_path)
    report_path = outdir / f"{prefix}-report.json"
    _write_json(report, report_path)
    key_paths = _write_key_files(key, outdir, prefix)
    outputs = [transcript_path, report_path, *key_paths]
    manifest = _manifest("attack", report | {"outdir": str(outdir)}, config.seed, outputs, config.rounds, started)
    _write_json(manifest, outdir / f"{prefix}-manifest.json")
    _print_run_summary(report)
    mi = leakage.eve_key_mutual_information
    print(f"eve: strategy={eve.strategy} MI={'n/a' if mi is None else f'{mi:.4f}'} bits "
          f"over {leakage.attacked_key_rounds} attacked key rounds; detected={leakage.detected}")
    if config.kind == "chsh":
        localized = report["eve"]["localized_links"]
        if localized is None:
            print("localization: insufficient check data")
        else:
            print(f"localization: {'links ' + str(localized) if localized else 'no failing link'}")
    return EXIT_OK if report["violated"] else EXIT_NO_VIOLATION


def _format_float(value: float) -> str:
    return f"{value:.10g}"


def _sweep_rows(model: str, kind: str, grid: int, eta: float | None):
    """(header, rows) of the analytic surface for one model."""
    if model in ("flip", "model1", "model2"):
        if model != "flip" and eta is None:
            raise UsageError(f"--eta is required for {model}")
        axis = np.linspace(0.0, 0.5, grid)
        conventions = ("conditional", "throughput") if model == "model2" else ("conditional",)
        header = ["eps1", "eps2"]
        for conv in conventions:
            tag = f"_{conv}" if model == "model2" else ""
            header += [f"mi_12{tag}", f"mi_13{tag}", f"mi_23{tag}", f"key_rate{tag}", f"min_pair{tag}"]
        rows = []
        for eps1 in axis:
            for eps2 in axis:
                row = [_format_float(eps1), _format_float(eps2)]
                for conv in conventions:
                    report = noise.analytic_key_rate(
                        model, kind, eps1=eps1, eps2=eps2, eta=(eta or 0.0), convention=conv
                    )
                    row += [
                        _format_float(report.pairwise_mi[(1, 2)]),
                        _format_float(report.pairwise_mi[(1, 3)]),
                        _format_float(report.pairwise_mi[(2, 3)]),
                        _format_float(report.key_rate),
                        f"{report.min_pair[0]}-{report.min_pair[1]}",
                    ]
                rows.append(row)
        return header, rows
    if model == "white":
        axis = np.linspace(0.0, 1.0, grid)
        header = ["eps", "mi_12", "mi_13", "mi_23", "key_rate", "min_pair"]
        rows = []
        for eps in axis:
            report = noise.analytic_key_rate(model, kind, eps=eps)
            rows.append([
                _format_float(eps),
                _format_float(report.pairwise_mi[(1, 2)]),
                _format_float(report.pairwise_mi[(1, 3)]),
                _format_float(report.pairwise_mi[(2, 3)]),
                _format_float(report.key_rate),
                f"{report.min_pair[0]}-{report.min_pair[1]}",
            ])
        return header, rows
    # detector: eta is the misread probability
    axis = np.linspace(0.0, 0.5, grid)
    header = ["eta", "mi_12", "mi_13", "mi_23", "key_rate", "min_pair"]
    rows = []
    for eta_value in axis:
        report = noise.analytic_key_rate(model, kind, eta=eta_value)
        rows.append([
            _format_float(eta_value),
            _format_float(report.pairwise_mi[(1, 2)]),
            _format_float(report.pairwise_mi[(1, 3)]),
            _format_float(report.pairwise_mi[(2, 3)]),
            _format_float(report.key_rate),
            f"{report.min_pair[0]}-{report.min_pair[1]}",
        ])
    return header, rows


def _validate_sweep(model: str, kind: str, eta: float | None):
    """Endpoint and symmetry sanity on the analytic surfaces."""
    zero_noise = {
        "flip": dict(),
        "white": dict(),
        "detector": dict(),
        "model1": dict(),
        "model2": dict(eta=1.0),
    }[model]
    report = noise.analytic_key_rate(model, kind, **zero_noise)
    if abs(report.key_rate - 1.0) > 1e-12:
        raise InvariantViolation(f"{model}: zero-noise key rate is {report.key_rate}, not 1")
    if model == "flip":
        a = noise.analytic_key_rate(model, kind, eps1=0.1, eps2=0.3).key_rate
        b = noise.analytic_key_rate(model, kind, eps1=0.3, eps2=0.1).key_rate
        if abs(a - b) > 1e-12:
            raise InvariantViolation("flip: key rate is not symmetric in (eps1, eps2)")


def _empirical_sweep(model, kind, grid_points, eta, rounds, seed):
    header = ["eps1", "eps2", "key_rate_empirical"] if model in ("flip", "model1", "model2") else ["param", "key_rate_empirical"]
    rows = []
    for params in grid_points:
        prep = None
        detector = None
        if model in ("flip", "model1", "model2"):
            prep = noise.FlipPrep(params[0], params[1])
        if model == "white":
            prep = noise.WhitePrep(params[0])
        if model in ("detector", "model1"):
            detector = noise.MisreadDetector(eta if model == "model1" else params[0])
        if model == "model2":
            detector = noise.LossDetector(eta)
        config = protocol.ProtocolConfig(
            kind=kind,
            num_parties=3,
            rounds=rounds,
            seed=seed,
            masking_enabled=False,
            noise=noise.NoiseConfig(prep=prep, detector=detector),
        )
        transcript = protocol.run_protocol(config)
        report = noise.empirical_key_rate(transcript, min_key_rounds=1)
        rows.append([_format_float(p) for p in params] + [_format_float(report.key_rate)])
    return header, rows


def cmd_sweep(args) -> int:
    started = time.monotonic()
    grid = args.grid or (51 if args.model in ("flip", "model1", "model2") else 101)
    if grid < 2:
        raise UsageError("--grid must be at least 2")
    _validate_sweep(args.model, args.kind, args.eta)
    header, rows = _sweep_rows(args.model, args.kind, grid, args.eta)
    outdir = _resolve_outdir(args.outdir)
    suffix = f"-eta{args.eta:g}" if args.eta is not None else ""
    csv_path = outdir / f"sweep-{args.model}-{args.kind}{suffix}.csv"
    with csv_path.open("w") as handle:
        handle.write(",".join(header) + "\n")
        for row in rows:
            handle.write(",".join(row) + "\n")
    outputs = [csv_path]
    if args.empirical_rounds:
        seed = _resolve_seed(args.seed)
        coarse = np.linspace(0.0, 0.5, args.empirical_grid)
        if args.model in ("flip", "model1", "model2"):
            points = [(a, b) for a in coarse for b in coarse]
        else:
            points = [(a,) for a in coarse]
        emp_header, emp_rows = _empirical_sweep(
            args.model, args.kind, points, args.eta, args.empirical_rounds, seed
        )
        emp_path = outdir / f"sweep-{args.model}-{args.kind}{suffix}-empirical.csv"
        with emp_path.open("w") as handle:
            handle.write(",".join(emp_header) + "\n")
            for row in emp_rows:
                handle.write(",".join(row) + "\n")
        outputs.append(emp_path)
    manifest = _manifest(
        "sweep",
        {"model": args.model, "kind": args.kind, "grid": grid, "eta": args.eta},
        args.seed or 0,
        outputs,
        0,
        started,
    )
    _write_json(manifest, outdir / f"sweep-{args.model}-{args.kind}{suffix}-manifest.json")
    print(f"wrote {csv_path}")
    return EXIT_OK


def cmd_verify(_args) -> int:
    results = verification.run_all()
    failed = [name for name, ok, _ in results if not ok]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_OK if not failed else EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_file(argv)
        args = parser.parse_args(argv)
        if args.list_observables:
            print(OBSERVABLE_HELP, end="")
            return EXIT_OK
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        handler = {
            "run": cmd_run,
            "attack": cmd_attack,
            "sweep": cmd_sweep,
            "verify": cmd_verify,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvariantViolation as exc:
        print(f"internal invariant failure: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
