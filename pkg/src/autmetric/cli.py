"""Command line driver: ``autmetric run <config.json>`` and ``autmetric selftest``.

Exit codes: 0 pass, 1 error, 2 failed certificate or check.  The thread count
of the compiled kernels comes from ``AUTMETRIC_THREADS`` when set.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

SCHEMA_VERSION = 1
KINDS = ("trace", "phi", "homogenize", "calabi_ratio", "vanishing", "zk", "independence", "restricted_bound")

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


class ConfigError(ValueError):
    pass


def _set_threads() -> None:
    v = os.environ.get("AUTMETRIC_THREADS")
    if v:
        import numba

        numba.set_num_threads(max(1, min(int(v), numba.config.NUMBA_NUM_THREADS)))


def config_digest(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------------------
# config pieces


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"{where}: missing '{key}'")
    return d[key]


def build_layout(d):
    from . import flowlab as F

    if d is None or d == "regime":
        return F.regime_layout()
    if d == "disc":
        return F.disc_layout()
    if isinstance(d, dict):
        return F.TwistSystem.from_dict(d)
    raise ConfigError(f"unknown layout {d!r}")


def build_flow(d: dict):
    """Flow from a config entry: ``spec``, ``bump``, ``twist_word`` or ``twist``."""
    from . import flowlab as F

    if not isinstance(d, dict):
        raise ConfigError("flow must be an object")
    t = d.get("type", "spec")
    if t == "spec":
        return F.FlowSpec.from_dict(d)
    if t == "bump":
        H = F.build_radial_bump(tuple(d.get("center", (0.0, 0.0))), float(_require(d, "rho", "bump")),
                                float(_require(d, "h0", "bump")))
        return F.FlowSpec.single(H, float(d.get("duration", 1.0)))
    if t in ("twist_word", "twist"):
        lay = build_layout(d.get("layout"))
        word = d.get("word") if t == "twist_word" else {"h": "x", "h'": "y"}.get(d.get("which", "h"))
        if word is None:
            raise ConfigError("twist needs which = h or h'")
        return F.twist_word_flow(lay, word)
    raise ConfigError(f"unknown flow type {t!r}")


def build_qm(d):
    from .braid_core import BrooksQM, FreeWord, InvariantQM
    from .gg_estimator import LINKING

    if d == "linking" or (isinstance(d, dict) and d.get("type") == "linking"):
        return LINKING
    if not isinstance(d, dict):
        raise ConfigError("qm must be an object or 'linking'")
    t = d.get("type", "invariant")
    pat = _require(d, "pattern", "qm")
    if t == "brooks":
        return BrooksQM(FreeWord(pat))
    if t == "invariant":
        return InvariantQM.from_pattern(pat, bool(d.get("mirror", False)))
    raise ConfigError(f"unknown qm type {t!r}")


def _schedule(cfg: dict, default_powers=(1, 2, 4, 8, 16)):
    from .gg_estimator import Schedule

    return Schedule(tuple(cfg.get("schedule", default_powers)), int(cfg.get("samples", 1000)))


def validate(cfg: dict) -> None:
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if int(cfg.get("version", SCHEMA_VERSION)) != SCHEMA_VERSION:
        raise ConfigError(f"unsupported config version {cfg.get('version')}")
    kind = _require(cfg, "kind", "config")
    if kind not in KINDS:
        raise ConfigError(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}")
    need = {
        "trace": ["flow"],
        "phi": ["flow", "qm"],
        "homogenize": ["flow", "qm"],
        "calabi_ratio": ["flows"],
        "vanishing": ["fields", "qms"],
        "zk": ["k", "d"],
        "independence": [],
        "restricted_bound": ["flow", "r"],
    }[kind]
    for k in need:
        _require(cfg, k, kind)
    if "samples" in cfg and int(cfg["samples"]) < 1:
        raise ConfigError("samples must be positive")


# ---------------------------------------------------------------------------
# experiments: each returns (passed, results dict, csv rows or None)


def _run_trace(cfg):
    from . import braid_trace as T

    spec = build_flow(cfg["flow"])
    lay = cfg["flow"].get("layout") if isinstance(cfg["flow"], dict) else None
    z = cfg.get("basepoints")
    if z is None and cfg["flow"].get("type") in ("twist", "twist_word"):
        z = build_layout(lay).basepoints
    n = int(cfg.get("n", 3 if z is None else len(z)))
    z = np.asarray(z if z is not None else T.default_basepoints(n), dtype=float)
    x = np.asarray(cfg.get("x", z), dtype=float)
    w = T.trace_braid(spec, x, int(cfg.get("power", 1)), z, float(cfg.get("direction", 0.0)))
    res = {"braid": w.to_list(), "strands": w.strands}
    if w.strands == 3:
        from .braid_core import p3_to_f2

        res["free_word"] = p3_to_f2(w).letters
    return True, res, None, {"braid.txt": " ".join(str(v) for v in w.to_list()) + "\n"}


def _run_phi(cfg):
    from . import gg_estimator as GG

    spec = build_flow(cfg["flow"])
    n = int(cfg.get("n", 3))
    e = GG.phi_n(spec, build_qm(cfg["qm"]), n, int(cfg.get("samples", 1000)), int(cfg["seed"]),
                 power=int(cfg.get("power", 1)))
    return True, {"estimate": GG.estimate_record(e, cfg, n)}, None, {}


def _run_homogenize(cfg):
    from . import gg_estimator as GG

    spec = build_flow(cfg["flow"])
    n = int(cfg.get("n", 3))
    e = GG.phi_n_bar(spec, build_qm(cfg["qm"]), n, _schedule(cfg), int(cfg["seed"]))
    rows = [["p", "value_over_p", "half_width"]] + [list(t) for t in e.trace]
    return e.converged, {"estimate": GG.estimate_record(e, cfg, n)}, rows, {}


def _run_calabi_ratio(cfg):
    from . import gg_estimator as GG

    specs = [build_flow(f) for f in cfg["flows"]]
    rep = GG.calabi_ratio(specs, _schedule(cfg), int(cfg["seed"]), float(cfg.get("tolerance", 0.05)))
    rows = [["flow", "calabi", "ratio", "half_width"]] + [
        [i, c, r, h] for i, (c, r, h) in enumerate(zip(rep.calabi_values, rep.ratios, rep.half_widths))
    ]
    return rep.passed, rep.to_dict(), rows, {}


def _run_vanishing(cfg):
    from . import flowlab as F
    from . import gg_estimator as GG

    fields = []
    for f in cfg["fields"]:
        if f.get("type", "bump") == "bump":
            fields.append(F.build_radial_bump(tuple(f.get("center", (0, 0))), float(f["rho"]), float(f["h0"])))
        else:
            fields.append(F.field_from_dict(f))
    qms = [build_qm(q) for q in cfg["qms"]]
    pert = cfg.get("perturbation")
    pfield = F.build_radial_bump(tuple(pert.get("center", (0, 0))), float(pert["rho"]), float(pert["h0"])) if pert else None
    controls = [(c.get("label", f"control{i}"), build_flow(c)) for i, c in enumerate(cfg.get("controls", []))]
    rows = GG.vanishing_report(fields, qms, _schedule(cfg), int(cfg["seed"]), pfield,
                               tuple(cfg.get("deltas", ())), controls)
    ok = all(r.vanishes for r in rows if not r.control) and all(not r.vanishes for r in rows if r.control)
    table = [["field", "qm", "control", "mean", "half_width", "vanishes"]] + [
        [r.field, r.qm, r.control, r.estimate.mean, r.estimate.half_width, r.vanishes] for r in rows
    ]
    return ok, {"rows": [r.to_dict() for r in rows]}, table, {}


def _run_zk(cfg):
    from . import gg_estimator as GG
    from . import qm_toolkit as Q

    k = int(cfg["k"])
    ds = cfg["d"]
    ds = [ds] if ds and not isinstance(ds[0], list) else ds
    if any(len(d) != k for d in ds):
        raise ConfigError("every d must have k entries")
    sched = _schedule(cfg, (4, 8, 16))
    seed = int(cfg["seed"])
    if all(not any(d) for d in ds):
        # nothing to estimate: the zero element, bounded by exact-level duals
        psis, words, _C = Q.exact_dual([Q.InvariantQM.from_pattern(p) for p in Q.DEFAULT_PATTERNS[:k]])
        defects = [Q.g_defect_bound(q) for q in psis]
        counts = [Q.factor_count(w.letters) for w in words]
        zero = [GG.Estimate(0.0, 0.0, 0, seed, sched.powers) for _ in range(k)]
        certs = [Q.zk_certificate(d, zero, defects, counts) for d in ds]
    else:
        dual = Q.zk_dual(k, sched, seed)
        defects = [Q.g_defect_bound(q) for q in dual.duals]
        counts = [Q.factor_count(w) for w in dual.words]
        certs = [Q.zk_certificate(d, Q.zk_evaluate(dual, d, sched, seed + 1 + i), defects, counts)
                 for i, d in enumerate(ds)]
    return all(c.passed for c in certs), {"certificates": [c.to_dict() for c in certs]}, None, {
        "certificates.txt": "\n\n".join(c.render() for c in certs) + "\n"}


def _run_independence(cfg):
    from . import flowlab as F
    from . import gg_estimator as GG
    from . import qm_toolkit as Q

    lay = build_layout(cfg.get("layout"))
    N = int(cfg.get("N", 2))
    pats = cfg.get("patterns", list(Q.DEFAULT_PATTERNS[:N]))
    psis, words, _C = Q.exact_dual([Q.InvariantQM.from_pattern(p) for p in pats])
    sched = _schedule(cfg, (4, 8, 16))
    cols = [GG.phi_n_bar_multi(F.twist_word_flow(lay, w), psis, 3, sched, int(cfg["seed"]) + j,
                               basepoints=lay.basepoints) for j, w in enumerate(words)]
    table = [[cols[j][i] for j in range(N)] for i in range(N)]
    cert = Q.independence_matrix(table, lay.u_areas(), names=[p.name for p in psis], words=[w.letters for w in words])
    return cert.passed, cert.to_dict(), None, {"certificate.txt": cert.render() + "\n"}


def _run_restricted(cfg):
    from . import flowlab as F
    from . import qm_toolkit as Q

    cert = Q.restricted_lower_bound(F.calabi(build_flow(cfg["flow"])), float(cfg["r"]))
    return cert.passed, cert.to_dict(), None, {}


RUNNERS = {
    "trace": _run_trace,
    "phi": _run_phi,
    "homogenize": _run_homogenize,
    "calabi_ratio": _run_calabi_ratio,
    "vanishing": _run_vanishing,
    "zk": _run_zk,
    "independence": _run_independence,
    "restricted_bound": _run_restricted,
}


def run(config_path: str, seed: int | None = None, samples: int | None = None, out: str | None = None) -> int:
    cfg = json.loads(Path(config_path).read_text())
    validate(cfg)
    if seed is not None:
        cfg["seed"] = int(seed)
    if samples is not None:
        cfg["samples"] = int(samples)
    cfg.setdefault("seed", 0)
    cfg.setdefault("version", SCHEMA_VERSION)
    digest = config_digest(cfg)
    outdir = Path(out or cfg.get("out", "autmetric_out"))
    outdir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    passed, results, rows, extra = RUNNERS[cfg["kind"]](cfg)
    wall = time.time() - t0
    header = {"config_digest": digest, "seed": cfg["seed"], "kind": cfg["kind"]}
    (outdir / "results.json").write_text(json.dumps({**header, "passed": passed, "results": results},
                                                    indent=2, sort_keys=True) + "\n")
    if rows is not None:
        with open(outdir / "table.csv", "w", newline="") as fh:
            fh.write(f"# config_digest={digest} seed={cfg['seed']}\n")
            csv.writer(fh).writerows(rows)
    for name, text in extra.items():
        (outdir / name).write_text(f"# config_digest={digest} seed={cfg['seed']}\n{text}")
    manifest = {
        **header,
        "config": cfg,
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "wall_time_s": wall,
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    print(f"{cfg['kind']}: {'pass' if passed else 'FAIL'}  ({outdir})")
    return EXIT_PASS if passed else EXIT_FAIL


# ---------------------------------------------------------------------------
# self test


def selftest_checks(eta_fn=None) -> list[tuple[str, bool]]:
    """Exact-algebra invariants; ``eta_fn`` substitutes the eta convention (for mutation tests)."""
    from . import braid_core as B

    eta = eta_fn or B.eta
    rng = np.random.default_rng(2024)
    out = []
    delta = eta(2, 3) * eta(3, 3)
    twist = B.BraidWord(3, (1, 2) * 3)
    out.append(("delta = eta(2,3) eta(3,3)", B.sl2_matrix(delta) == B.sl2_matrix(twist) == B.IntMatrix2(-1, 0, 0, -1)
                and B.writhe(delta) == B.writhe(twist)))
    out.append(("braid relation on matrices",
                B.sl2_matrix(B.BraidWord(3, (1, 2, 1))) == B.sl2_matrix(B.BraidWord(3, (2, 1, 2)))))
    ok = True
    for _ in range(200):
        w = B.BraidWord(3, tuple(int(v) for v in rng.choice([1, -1, 2, -2], size=int(rng.integers(0, 30)))))
        if not B.is_pure(w):
            continue
        m = B.evaluate_free_word(B.p3_to_f2(w))
        s = B.sl2_matrix(w)
        ok &= m == s or m == -s
    out.append(("p3_to_f2 round trip", bool(ok)))
    ok = True
    for pat in ("xy", "xY", "xxy"):
        q = B.BrooksQM(B.FreeWord(pat))
        for _ in range(40):
            g = B.FreeWord("".join(rng.choice(list("xXyY"), size=int(rng.integers(1, 12)))))
            if not g.letters:
                continue
            ok &= abs(B.brooks_count(q, g**64) / 64 - B.brooks_hom(q, g)) <= 1 / 8
    out.append(("Brooks homogenisation oracle", bool(ok)))
    q = B.BrooksQM(B.FreeWord("xy"))
    out.append(("Brooks examples", B.brooks_count(q, B.FreeWord("xyxy")) == 2 and B.brooks_hom(q, B.FreeWord("yx")) == 1
                and B.brooks_count(q, B.FreeWord("YX")) == -1))
    out.append(("full twist projects to identity", B.p3_to_f2(B.full_twist(3)).letters == ""))
    out.append(("invariant pattern vanishes on A3", B.InvariantQM.from_pattern("xxy").is_admissible()))
    return out


def selftest() -> int:
    results = selftest_checks()
    for name, ok in results:
        print(f"{'pass' if ok else 'FAIL'}  {name}")
    return EXIT_PASS if all(ok for _, ok in results) else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="autmetric", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--samples", type=int)
    r.add_argument("--out")
    sub.add_parser("selftest", help="exact-algebra invariant suite")
    args = ap.parse_args(argv)
    _set_threads()
    try:
        if args.cmd == "selftest":
            return selftest()
        return run(args.config, args.seed, args.samples, args.out)
    except (ConfigError, json.JSONDecodeError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:  # noqa: BLE001 - any failure is an error exit
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
