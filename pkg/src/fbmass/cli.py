"""``lab`` command line: config-driven runs plus one subcommand per experiment kind."""
from __future__ import annotations

import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click

from .errors import ConfigInvalid, IoFailure
from .lab import COMMON, SCHEMA, emit_report, load_config, run, validate
from .spectral import lab_threads


def _out_dir(cfg, output):
    if output:
        return Path(output)
    return Path(cfg.output) if cfg.output else Path("lab-out") / cfg.name


def _print(cfg, rep, out):
    for c in rep.checks:
        click.echo(f"{'PASS' if c.passed else 'FAIL'}  {c.name}  value={c.value:.6g}  {c.relation} {c.tolerance:.3g}")
    for e in rep.errors:
        click.echo(f"ERROR  {e['type']} in {e['where']}: {e['message']}")
    status = "passed" if rep.passed else "FAILED"
    click.echo(f"[{cfg.name}] {status}: {sum(c.passed for c in rep.checks)}/{len(rep.checks)} checks; report in {out}")


def _execute(cfgs, output=None) -> int:
    def one(cfg):
        rep = run(cfg)
        out = _out_dir(cfg, output if len(cfgs) == 1 else None)
        emit_report(rep, out)
        return cfg, rep, out

    try:
        with ThreadPoolExecutor(max_workers=min(lab_threads(), len(cfgs))) as pool:
            results = list(pool.map(one, cfgs))
    except IoFailure as exc:
        click.echo(f"error: {exc}", err=True)
        return 3
    for cfg, rep, out in results:
        _print(cfg, rep, out)
    return 0 if all(rep.passed for _, rep, _ in results) else 1


def _fail_config(exc):
    click.echo(f"invalid config: {exc}", err=True)
    sys.exit(2)


@click.group()
def main():
    """Numerical laboratory: mass, free-boundary minimal graphs, conformal spectra."""


@main.command("run")
@click.argument("configs", nargs=-1, required=True, type=click.Path(dir_okay=False))
@click.option("--output", "-o", default=None, help="Output directory (single config only).")
def run_cmd(configs, output):
    """Run one or more TOML experiment configs (concurrently, up to LAB_THREADS)."""
    try:
        cfgs = [load_config(p) for p in configs]
    except ConfigInvalid as exc:
        _fail_config(exc)
    sys.exit(_execute(cfgs, output))


@main.group()
def suite():
    """Named check suites."""


@suite.command("identities")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--samples", default=None, type=int, help="Random stability test functions.")
@click.option("--output", "-o", default=None)
def identities(seed, samples, output):
    """Seeded identity checks across all modules."""
    table = {"kind": "identity-suite", "seed": seed}
    if samples is not None:
        table["samples"] = samples
    try:
        cfg = validate(table)
    except ConfigInvalid as exc:
        _fail_config(exc)
    sys.exit(_execute([cfg], output))


def _list_option(key, text):
    try:
        return [float(v) if any(ch in v for ch in ".eE") else int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigInvalid(f"{key}: expected comma-separated numbers, got {text!r}") from None


def _make_command(kind):
    fields = {**COMMON, **SCHEMA[kind]}

    def cmd(output, **flags):
        table = {"kind": kind}
        try:
            for key, value in flags.items():
                if value is not None:
                    table[key] = _list_option(key, value) if fields[key].type is list else value
            cfg = validate(table)
        except ConfigInvalid as exc:
            _fail_config(exc)
        sys.exit(_execute([cfg], output))

    for key, p in reversed(list(fields.items())):
        if key == "output":
            continue
        flag = "--" + key.replace("_", "-")
        default = p.default if p.type is not list else ",".join(str(v) for v in p.default)
        help_text = f"[default: {default}]" + (f" ({p.rule})" if p.rule else "")
        if p.type is bool:
            opt = click.option(f"{flag}/--no-{key.replace('_', '-')}", key, default=None, help=help_text)
        elif p.type is list:
            opt = click.option(flag, key, default=None, type=str, help=help_text + " comma-separated")
        else:
            names = ("-n", flag) if key == "n" else (flag,)
            opt = click.option(*names, key, default=None, type=p.type, help=help_text)
        cmd = opt(cmd)
    cmd = click.option("--output", "-o", default=None, help="Output directory.")(cmd)
    cmd.__doc__ = f"Run a single '{kind}' experiment; flags mirror the config fields."
    return main.command(kind)(cmd)


for _kind in ("mass", "graph", "stability", "spectra", "reduce"):
    _make_command(_kind)


if __name__ == "__main__":
    main()
