"""Command-line interface.

Subcommands::

    poolforge validate --pool DIR
    poolforge synth    --out DIR [--seed N --classes C --per-class N --d D --separation S]
    poolforge query    --pool DIR --out DIR [--strategy NAME --b N --lambda F ...]
    poolforge loop     --pool DIR --out DIR --rounds T --initial M [--mode oracle|serve ...]
    poolforge analyze  --run DIR --reference DIR [--k N]

Exit codes: 0 success, 1 validation or usage error, 2 internal error.
All randomness flows from ``--seed`` through named streams, so outputs
are byte-reproducible for fixed inputs. ``POOLFORGE_THREADS`` caps
numeric-library parallelism; ``POOLFORGE_UI_DIR`` points the annotation
server at a built web console; ``SOURCE_DATE_EPOCH`` stamps run
manifests (0 when unset, keeping runs bit-identical).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

__all__ = ["main", "build_parser"]

_TOOL_VERSION = "0.1.0"


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors on exit code 1 (2 is for internal bugs)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poolforge",
                     description="Pool-based few-shot active-learning engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p_validate = sub.add_parser("validate", help="check an artifact directory")
    p_validate.add_argument("--pool", required=True, help="artifact directory")

    p_synth = sub.add_parser("synth", help="generate a synthetic pool")
    p_synth.add_argument("--out", required=True, help="output artifact directory")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--classes", type=int, default=4)
    p_synth.add_argument("--per-class", dest="per_class", type=int, default=500)
    p_synth.add_argument("--d", type=int, default=16)
    p_synth.add_argument("--separation", type=float, default=10.0)

    def add_strategy_flags(p):
        p.add_argument("--strategy", default="joint",
                       help="joint | entropy | least_confidence | kmeans_encoder | random")
        p.add_argument("--b", type=int, default=32, help="batch size per query")
        p.add_argument("--lambda", dest="lam", type=float, default=0.9,
                       help="uncertainty weight in the joint score")
        p.add_argument("--k", type=int, default=100, help="calibration support size")
        p.add_argument("--k-prime", dest="k_prime", type=int, default=10,
                       help="labeled neighbors for local diversity")
        p.add_argument("--seed", type=int, default=0)

    p_query = sub.add_parser("query", help="one selection pass, no state change")
    p_query.add_argument("--pool", required=True)
    p_query.add_argument("--out", required=True, help="directory for the batch report")
    p_query.add_argument("--initial", type=int, default=32,
                         help="oracle-seeded labeled-set size (strategies that need one)")
    add_strategy_flags(p_query)

    p_loop = sub.add_parser("loop", help="run (or resume) the active-learning loop")
    p_loop.add_argument("--pool", required=True)
    p_loop.add_argument("--out", required=True, help="run directory")
    p_loop.add_argument("--rounds", type=int, default=10)
    p_loop.add_argument("--initial", type=int, default=32,
                        help="seed labeled-set size")
    p_loop.add_argument("--mode", choices=("oracle", "serve"), default="oracle")
    p_loop.add_argument("--adapter-cmd", dest="adapter_cmd", default=None,
                        help="external model-adapter command (exchange dir appended)")
    p_loop.add_argument("--bind", default="127.0.0.1:8765",
                        help="annotation service address in serve mode")
    add_strategy_flags(p_loop)

    p_analyze = sub.add_parser("analyze", help="selection metrics for a finished run")
    p_analyze.add_argument("--run", required=True, help="run directory")
    p_analyze.add_argument("--reference", required=True,
                           help="reference artifact directory")
    p_analyze.add_argument("--k", type=int, default=10,
                           help="neighborhood size for representativeness")

    return parser


def _cmd_validate(args) -> int:
    from .artifacts import load_artifacts

    artifacts = load_artifacts(args.pool)
    print(
        f"ok: n={artifacts.n} d={artifacts.d} c={artifacts.c} "
        f"texts={artifacts.texts is not None} "
        f"oracle_labels={artifacts.oracle_labels is not None}"
    )
    return 0


def _cmd_synth(args) -> int:
    from .artifacts import write_artifacts
    from .synth import make_synthetic_pool

    pool = make_synthetic_pool(
        args.seed, classes=args.classes, per_class=args.per_class,
        d=args.d, separation=args.separation,
    )
    write_artifacts(pool, args.out)
    print(f"wrote {pool.n} samples to {args.out}")
    return 0


def _strategy_config(args):
    from .strategies import StrategyConfig

    return StrategyConfig(
        strategy=args.strategy, b=args.b, lam=args.lam, k=args.k,
        k_prime=args.k_prime, seed=args.seed,
    ).validate()


def _cmd_query(args) -> int:
    import numpy as np

    from .artifacts import LabeledSet, load_artifacts
    from .errors import ConfigError
    from .rng import stream
    from .strategies import make_strategy

    cfg = _strategy_config(args)
    pool = load_artifacts(args.pool)
    labeled = LabeledSet()
    if cfg.strategy == "joint":
        # Stateless pass: seed a labeled set exactly the way init_run would.
        if pool.oracle_labels is None:
            raise ConfigError(
                "query: the joint strategy needs labeled samples; the pool has "
                "no oracle labels to seed them from (run a loop instead)"
            )
        rng = stream(cfg.seed, "init")
        chosen = np.sort(rng.choice(np.sort(pool.sample_ids),
                                    size=args.initial, replace=False))
        lookup = pool.row_of()
        for sid in chosen:
            labeled.add(int(sid), int(pool.oracle_labels[lookup[int(sid)]]), "seed")
    report = make_strategy(cfg).select(pool, labeled, round_index=0)
    report.write(args.out)
    for sid in report.selected_ids:
        print(sid)
    return 0


def _write_run_manifest(args, cfg, pool_digest: str, run_dir: Path) -> None:
    manifest = {
        "config": {
            **cfg.to_dict(),
            "rounds": args.rounds,
            "initial": args.initial,
            "mode": args.mode,
        },
        "tool_version": _TOOL_VERSION,
        "seed": args.seed,
        "created_unix": int(os.environ.get("SOURCE_DATE_EPOCH", "0")),
        "pool_digest": pool_digest,
    }
    (run_dir / "run_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _cmd_loop(args) -> int:
    from .annotation import AnnotationServer, AnnotationSession
    from .artifacts import digest_artifacts, load_artifacts
    from .errors import ConfigError
    from .loop import AdapterHandle, ALState, STATE_NAME, init_run, run_loop

    cfg = _strategy_config(args)
    run_dir = Path(args.out)
    pool_digest = digest_artifacts(args.pool)

    if (run_dir / STATE_NAME).exists():
        state = ALState.load(run_dir)
        if state.cfg.to_dict() != cfg.to_dict():
            raise ConfigError(
                "resume: configuration differs from the stored run; "
                "pass the original flags or use a fresh --out"
            )
        manifest = json.loads(
            (run_dir / "run_manifest.json").read_text(encoding="utf-8")
        )
        if manifest["pool_digest"] != pool_digest:
            raise ConfigError("resume: --pool contents differ from the original run")
        print(f"resuming at round {state.round_index}/{state.total_rounds}")
    else:
        state = init_run(args.pool, cfg, args.rounds, args.initial, args.seed, run_dir)
        _write_run_manifest(args, cfg, pool_digest, run_dir)

    adapter = None
    if args.adapter_cmd:
        adapter = AdapterHandle(args.adapter_cmd, run_dir / "exchange")

    if args.mode == "serve":
        artifacts = load_artifacts(state.artifacts_dir(state.round_index))
        if artifacts.texts is None:
            raise ConfigError("serve mode: artifacts carry no texts to annotate")
        session = AnnotationSession(artifacts.label_words)
        server = AnnotationServer(
            session, bind=args.bind, ui_dir=os.environ.get("POOLFORGE_UI_DIR")
        )
        server.start()
        print(f"annotation service on http://{server.address}")
        try:
            state = run_loop(state, "service", adapter=adapter, session=session)
            session.finish()
        finally:
            server.stop()
    else:
        state = run_loop(state, "oracle", adapter=adapter)

    print(
        f"done: {state.total_rounds} rounds, labeled {len(state.labeled)}, "
        f"pool {len(state.pool_ids)}"
    )
    return 0


def _cmd_analyze(args) -> int:
    from .metrics import analyze_run, _cell, _TABLE_COLUMNS

    rows = analyze_run(args.run, args.reference, k=args.k)
    print("\t".join(_TABLE_COLUMNS))
    for record in rows:
        print("\t".join(_cell(record[col]) for col in _TABLE_COLUMNS))
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "synth": _cmd_synth,
    "query": _cmd_query,
    "loop": _cmd_loop,
    "analyze": _cmd_analyze,
}


def _cap_threads() -> None:
    cap = os.environ.get("POOLFORGE_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001 - single exit-code mapping point
        from .errors import PoolforgeError

        if isinstance(exc, (PoolforgeError, SystemExit)):
            if isinstance(exc, SystemExit):
                raise
            print(f"error: {exc}", file=sys.stderr)
            return 1
        import traceback

        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
