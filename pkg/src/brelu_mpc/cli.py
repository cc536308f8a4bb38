"""Command line interface (``brelu-mpc``).

Exit codes: 0 success, 2 configuration or input error, 3 protocol abort,
4 verification mismatch. Failures print one JSON object on stderr.
"""
from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import click
import numpy as np

from . import bits as bits_mod
from . import comm_model as cm
from .config import PRESETS, ConfigError, load_config, run_manifest, validate_config
from .engine import SecureParams, run_party, secure_infer
from .ledger import CommLedger
from .nn import (PatchPlan, apply_plan, drelu_count, forward, gen_toy_model, load_model, load_tensor,
                 save_model, save_tensor, transform_model)
from .planner import DistortionTable, additive_vs_real, alternative_plans, budget_curve, build_distortion_table, scatter_csv
from .protocols import ProtocolError
from .sharing import PartyId
from .transport import HandshakeError, TcpTransport, TransportError, default_addresses

EXIT_CONFIG, EXIT_PROTOCOL, EXIT_VERIFY = 2, 3, 4


class VerificationError(RuntimeError):
    """Secure and plaintext results disagree."""


def _fail(code: int, exc: BaseException):
    click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), err=True)
    sys.exit(code)


def _cfg(ctx) -> dict:
    return ctx.obj["cfg"]


def _params(cfg) -> SecureParams:
    return SecureParams(cfg["codec"]["frac_bits"], cfg["truncation"]["ignore_msb"], cfg["truncation"]["ignore_lsb"])


def _write(path, text: str):
    Path(path).write_text(text)


def _samples(model, n: int, seed: int, data=None) -> np.ndarray:
    if data is not None:
        return load_tensor(data)
    return np.random.default_rng(seed).normal(size=(n, *model.input_shape))


def _load_plan(path):
    return PatchPlan.from_json(Path(path).read_text()) if path else None


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file.")
@click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Named parameter preset.")
@click.option("--seed", help="Master seed as hex (overrides config).")
@click.option("--transport", type=click.Choice(["inprocess", "tcp"]), help="Party transport.")
@click.option("--ledger-out", type=click.Path(dir_okay=False), help="Write the communication ledger here (.json or .csv).")
@click.pass_context
def cli(ctx, config_path, preset, seed, transport, ledger_out):
    """Three-party secure CNN inference with block ReLUs."""
    cfg = load_config(config_path, preset)
    if seed is not None:
        cfg["seed"] = seed
    if transport is not None:
        cfg["transport"]["kind"] = transport
    validate_config(cfg)
    ctx.obj = {"cfg": cfg, "ledger_out": ledger_out, "config_path": config_path}


def _emit_ledger(ctx, ledger: CommLedger, override=None):
    path = override or ctx.obj["ledger_out"]
    if path:
        _write(path, ledger.to_csv() if str(path).endswith(".csv") else ledger.to_json())


@cli.command("gen-model")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--model-seed", default=0, show_default=True)
@click.option("--hw", default=8, show_default=True, help="Input height and width.")
@click.option("--classes", default=10, show_default=True)
@click.option("--residual/--no-residual", default=False)
@click.option("--pool", type=click.Choice(["avgpool", "maxpool"]), default="avgpool")
@click.option("--inputs", default=0, help="Also write this many random inputs.")
@click.option("--inputs-out", type=click.Path(dir_okay=False))
@click.pass_context
def gen_model(ctx, out, model_seed, hw, classes, residual, pool, inputs, inputs_out):
    """Write a seeded toy CNN."""
    model = gen_toy_model(model_seed, hw=hw, classes=classes, residual=residual,
                          frac_bits=_cfg(ctx)["codec"]["frac_bits"], pool=pool)
    save_model(model, out)
    if inputs:
        if not inputs_out:
            raise ConfigError("--inputs needs --inputs-out")
        save_tensor(np.random.default_rng(model_seed + 1).normal(size=(inputs, *model.input_shape)), inputs_out)
    click.echo(json.dumps({"model": out, "layers": len(model.layers), "channels": len(model.channels()),
                           "full_drelus": model.full_drelu_count()}))


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
def transform(model_path, out):
    """Replace MaxPool by AvgPool and ReLU6 by ReLU."""
    model = transform_model(load_model(model_path))
    save_model(model, out)
    click.echo(json.dumps({"model": out, "layers": [l.kind for l in model.layers]}))


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--samples", type=int, help="Number of synthetic samples (default from config).")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Sample tensor file instead.")
@click.option("--jobs", default=1, show_default=True)
@click.pass_context
def estimate(ctx, model_path, out, samples, data, jobs):
    """Build the per-channel distortion table (CSV)."""
    cfg = _cfg(ctx)["planner"]
    model = transform_model(load_model(model_path))
    X = _samples(model, samples or cfg["samples"], cfg["sample_seed"], data)
    table = build_distortion_table(model, X, jobs)
    _write(out, table.to_csv())
    click.echo(json.dumps({"table": out, "channels": table.m, "samples": table.samples,
                           "full_weight": table.full_weight()}))


@cli.command()
@click.option("--table", "table_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Adds layer/channel metadata to the plan.")
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--budget", type=int, help="DReLU budget.")
@click.option("--budget-frac", type=float, help="Budget as a fraction of the full DReLU count.")
@click.option("--mode", type=click.Choice(["optimal", "shuffled", "constant"]))
@click.pass_context
def plan(ctx, table_path, model_path, out, budget, budget_frac, mode):
    """Solve the knapsack and write a patch plan (JSON)."""
    cfg = _cfg(ctx)
    table = DistortionTable.from_csv(Path(table_path).read_text())
    if budget is not None and budget_frac is not None:
        raise ConfigError("give either --budget or --budget-frac")
    if budget is None:
        frac = cfg["planner"]["budget_frac"] if budget_frac is None else budget_frac
        if not 0 <= frac <= 1:
            raise ConfigError("--budget-frac must lie in [0, 1]")
        budget = int(frac * table.full_weight())
    if budget < 0:
        raise ConfigError("--budget must be non-negative")
    p = alternative_plans(table, budget, mode or cfg["planner"]["mode"], int(cfg["seed"][-8:], 16),
                          bucket=cfg["planner"]["bucket"])
    p.budget = budget
    model = transform_model(load_model(model_path)) if model_path else None
    weight = sum(s.weight(c.h, c.w) for s, c in zip(p.specs, table.channels))
    _write(out, p.to_json(model))
    click.echo(json.dumps({"plan": out, "budget": budget, "weight": weight, "full_weight": table.full_weight()}))


@cli.command("analyze-bits")
@click.option("--out", type=click.Path(dir_okay=False), help="Error surface CSV.")
@click.option("--data", type=click.Path(exists=True, dir_okay=False), help="Activation tensor file.")
@click.option("--synthetic", type=int, help="Use this many synthetic Gaussian activations.")
@click.option("--uniform-bits", type=int, help="Use uniform non-negative integers of this width.")
@click.option("--target", type=float, help="Error target for the recommendation.")
@click.option("--repeats", default=1, show_default=True)
@click.pass_context
def analyze_bits(ctx, out, data, synthetic, uniform_bits, target, repeats):
    """Error surface over ignored bits and a recommended truncation."""
    cfg = _cfg(ctx)
    f = cfg["codec"]["frac_bits"]
    n = synthetic or cfg["bits"]["samples"]
    if data:
        acts = load_tensor(data).ravel()
    elif uniform_bits:
        acts = np.random.default_rng(0).integers(0, 1 << uniform_bits, n).astype(np.int64)
    else:
        acts = bits_mod.synthetic_activations(n, seed=0)
    target = target if target is not None else cfg["bits"]["target_error"]
    rec = bits_mod.recommend_bits(acts, target, repeats, frac_bits=f)
    if out:
        rows = bits_mod.error_surface(acts, range(0, 50, 2), range(0, 13), repeats, frac_bits=f)
        _write(out, bits_mod.surface_csv(rows))
    click.echo(json.dumps({"k_msb": rec.k_msb, "k_lsb": rec.k_lsb, "compare_bits": rec.compare_bits,
                           "target": target,
                           "error": bits_mod.empirical_error(acts, rec, repeats, frac_bits=f)}))


@cli.command("comm-model")
@click.option("--preset", "cm_preset", type=click.Choice(["table1"]), help="The standard typical parameters.")
@click.option("--h", type=int)
@click.option("--i", "i_", type=int)
@click.option("--o", type=int)
@click.option("--f", type=int)
@click.option("--ell", type=int)
@click.option("--ell-star", type=int)
@click.option("--q", type=float)
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), help="Sweep image sizes for this model.")
@click.option("--sizes", default="8,16,32,64,128,256", show_default=True)
@click.option("--csv", "csv_out", type=click.Path(dir_okay=False))
def comm_model(cm_preset, h, i_, o, f, ell, ell_star, q, model_path, sizes, csv_out):
    """Analytic communication costs (and the ReLU share versus image size)."""
    if model_path:
        model = transform_model(load_model(model_path))
        rows = cm.relu_cost_sweep(model, [int(s) for s in sizes.split(",")])
        text = "image_size,relu_fraction\n" + "".join(f"{r['image_size']},{r['relu_fraction']:.6f}\n" for r in rows)
    else:
        p = cm.CommParams.table1()
        changes = {k: v for k, v in dict(h=h, i=i_, o=o, f=f, ell=ell, ell_star=ell_star, q=q).items() if v is not None}
        p = cm.with_params(p, **changes)
        text = cm.table1_csv(p)
    if csv_out:
        _write(csv_out, text)
    click.echo(text, nl=False)


@cli.command("infer-plain")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--mode", type=click.Choice(["float", "fixed"]), default="fixed", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False))
@click.pass_context
def infer_plain(ctx, model_path, input_path, plan_path, mode, out):
    """Plaintext reference inference."""
    model = transform_model(load_model(model_path))
    model.frac_bits = _cfg(ctx)["codec"]["frac_bits"]
    y = forward(model, load_tensor(input_path), mode, plan=_load_plan(plan_path))
    if out:
        save_tensor(y, out)
    click.echo(json.dumps({"argmax": np.argmax(y, axis=1).tolist()}))


def _party_args(model_path, input_path, plan_path):
    model = transform_model(load_model(model_path))
    return model, load_tensor(input_path), _load_plan(plan_path)


@cli.command()
@click.option("--role", type=click.IntRange(0, 2), required=True)
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--base-port", type=int)
@click.option("--out", type=click.Path(dir_okay=False), help="Output share (.npy).")
@click.option("--ledger-out", "ledger_out", type=click.Path(dir_okay=False), help="Ledger file (.json or .csv).")
@click.pass_context
def party(ctx, role, model_path, input_path, plan_path, host, base_port, out, ledger_out):
    """Run one party of a TCP session."""
    cfg = _cfg(ctx)
    model, x, p = _party_args(model_path, input_path, plan_path)
    model.frac_bits = cfg["codec"]["frac_bits"]
    addrs = default_addresses(base_port or cfg["transport"]["base_port"], host)
    t = TcpTransport(PartyId(role), addrs, cfg["transport"]["timeout"]).connect()
    try:
        res = run_party(role, t, model, None if role == 2 else x, cfg["seed"], _params(cfg), p, x.shape)
    finally:
        t.close()
    if out:
        np.save(out, res.output_share)
    _emit_ledger(ctx, res.ledger, ledger_out)
    click.echo(json.dumps({"party": role, "payload_bytes": res.ledger.payload(), "drelus": sum(res.drelu_counts.values())}))


def _spawn_tcp(ctx, model_path, input_path, plan_path, workdir: Path):
    cfg = _cfg(ctx)
    procs, shares, ledgers = [], [], []
    for role in range(3):
        share = workdir / f"share{role}.npy"
        led = workdir / f"ledger{role}.json"
        cmd = [sys.executable, "-m", "brelu_mpc.cli", "--seed", cfg["seed"]]
        if ctx.obj["config_path"]:
            cmd += ["--config", ctx.obj["config_path"]]
        if cfg["preset"]:
            cmd += ["--preset", cfg["preset"]]
        cmd += ["party", "--role", str(role), "--model", model_path, "--input", input_path,
                "--base-port", str(cfg["transport"]["base_port"]), "--out", str(share), "--ledger-out", str(led)]
        if plan_path:
            cmd += ["--plan", plan_path]
        procs.append(subprocess.Popen(cmd, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True))
        shares.append(share)
        ledgers.append(led)
    codes = []
    for pr in procs:
        _, err = pr.communicate()
        codes.append((pr.returncode, err))
    for code, err in codes:
        if code != 0:
            raise ProtocolError(f"party process failed ({code}): {err.strip()[-400:]}")
    s = [np.load(sh) for sh in shares]
    return s, [CommLedger.from_json(l.read_text()) for l in ledgers]


@cli.command("secure-infer")
@click.option("--model", "model_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--plan", "plan_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Reconstructed outputs (tensor file).")
@click.option("--verify/--no-verify", default=False, help="Compare with the fixed-point interpreter.")
@click.option("--tolerance", default=2.0 ** -8, show_default=True)
@click.option("--manifest-out", type=click.Path(dir_okay=False))
@click.option("--workdir", type=click.Path(file_okay=False), default=".", show_default=True,
              help="Where TCP party processes leave their shares.")
@click.option("--ledger-out", "ledger_out", type=click.Path(dir_okay=False), help="Ledger file (.json or .csv).")
@click.pass_context
def secure_infer_cmd(ctx, model_path, input_path, plan_path, out, verify, tolerance, manifest_out, workdir, ledger_out):
    """Three-party secure inference (in-process threads or local TCP processes)."""
    cfg = _cfg(ctx)
    params = _params(cfg)
    model, x, p = _party_args(model_path, input_path, plan_path)
    model.frac_bits = params.frac_bits
    if cfg["transport"]["kind"] == "tcp":
        from .ring import FixedPointCodec
        from .sharing import reconstruct

        shares, ledgers = _spawn_tcp(ctx, model_path, input_path, plan_path, Path(workdir))
        y = FixedPointCodec(params.frac_bits).decode(reconstruct(shares[0], shares[1]))
        ledger = CommLedger.merge(ledgers)
        drelus = drelu_count(apply_plan(model, p) if p else model) * x.shape[0]
    else:
        res = secure_infer(model, x, p, cfg["seed"], params, "inprocess", timeout=cfg["transport"]["timeout"])
        y, ledger, drelus = res.output, res.ledger, res.drelu_total
    if out:
        save_tensor(y, out)
    _emit_ledger(ctx, ledger, ledger_out)
    if manifest_out:
        _write(manifest_out, json.dumps(run_manifest(cfg, model=model_path, input=input_path, plan=plan_path,
                                                     ledger=ledger_out or ctx.obj["ledger_out"]), indent=1, sort_keys=True))
    summary = {"argmax": np.argmax(y, axis=1).tolist(), "payload_bytes": ledger.payload(),
               "rounds": ledger.rounds(), "drelus": drelus}
    if verify:
        ref = forward(model, x, "fixed", plan=p)
        err = float(np.abs(ref - y).max())
        agree = float(np.mean(np.argmax(ref, 1) == np.argmax(y, 1)))
        summary.update(max_abs_error=err, argmax_agreement=agree)
        if err > tolerance or agree < 1.0:
            click.echo(json.dumps(summary))
            raise VerificationError(f"secure output deviates from the plaintext oracle (max error {err:.3g}, "
                                    f"argmax agreement {agree:.3f})")
    click.echo(json.dumps(summary))


@cli.command()
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False),
              help="Model to study (default: seeded residual toy CNN).")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--samples", type=int)
@click.option("--trials", default=200, show_default=True)
@click.pass_context
def report(ctx, model_path, out_dir, samples, trials):
    """Write the cost table comparison and the figure-style CSVs."""
    cfg = _cfg(ctx)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = transform_model(load_model(model_path)) if model_path else gen_toy_model(0, residual=True)
    X = _samples(model, samples or cfg["planner"]["samples"], cfg["planner"]["sample_seed"])
    _write(out / "table1.csv", cm.table1_csv())
    table = build_distortion_table(model, X)
    _write(out / "distortion_table.csv", table.to_csv())
    exp = additive_vs_real(model, X, table, trials, seed=0)
    _write(out / "fig4_additive_vs_real.csv", scatter_csv(exp["rows"]))
    curve = budget_curve(table, [0.02, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0])
    _write(out / "fig1_budget_curve.csv", "budget_frac,budget,weight,additive_distortion\n" +
           "".join(f"{r['budget_frac']},{r['budget']},{r['weight']},{r['additive_distortion']!r}\n" for r in curve))
    acts = forward(model, X, "float", return_all=True)[model.activation_layers()[0] - 1].ravel()
    rows = bits_mod.error_surface(acts, range(0, 50, 2), range(0, 13), repeats=4, frac_bits=cfg["codec"]["frac_bits"])
    _write(out / "fig6_bit_error.csv", bits_mod.surface_csv(rows))
    sweep = cm.relu_cost_sweep(model, [8, 16, 32, 64, 128, 256])
    _write(out / "fig8_relu_cost.csv", "image_size,relu_fraction\n" +
           "".join(f"{r['image_size']},{r['relu_fraction']:.6f}\n" for r in sweep))
    summary = {"spearman_additive_vs_real": exp["spearman"], "channels": table.m,
               "full_drelus": table.full_weight(), "files": sorted(p.name for p in out.iterdir())}
    _write(out / "summary.json", json.dumps(summary, indent=1, sort_keys=True))
    click.echo(json.dumps(summary))


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="brelu-mpc", standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(1)
    except click.ClickException as exc:
        _fail(EXIT_CONFIG, exc)
    except (ConfigError, FileNotFoundError, ValueError, KeyError, TypeError) as exc:
        _fail(EXIT_CONFIG, exc)
    except (HandshakeError, TransportError, ProtocolError) as exc:
        _fail(EXIT_PROTOCOL, exc)
    except VerificationError as exc:
        _fail(EXIT_VERIFY, exc)
    return 0


if __name__ == "__main__":
    main()
