"""Command line front end.

    educhain sim run --scenario happy-path --seed 7
    educhain sim run --scenario path/to/custom.yaml --config overrides.yaml
    educhain sim faults --list
    educhain node serve --config gateway.yaml

`sim run` prints the deterministic run report on stdout (wall time goes to
stderr so reports stay byte-comparable). `node serve` boots a real HTTP
gateway over a freshly seeded single-university network; it is a demo
surface, not part of the deterministic assertions.
"""

import sys
import time
from importlib import resources

import click
import yaml

from .harness import (
    FAULT_KINDS,
    AssertionFailed,
    ConfigInvalid,
    NetworkConfig,
    Role,
    UnknownTarget,
    build_network,
    load_scenario,
    run_scenario,
)


def _resolve_scenario(name: str) -> str:
    """A filesystem path as given, or a bundled scenario by bare name."""
    import os

    if os.path.exists(name):
        return name
    bundled = resources.files("educhain") / "scenarios" / f"{name}.yaml"
    if bundled.is_file():
        return str(bundled)
    raise click.ClickException(
        f"scenario {name!r} not found (no such file, and not a bundled name)"
    )


@click.group()
def main():
    """Education-records ledger tools."""


@main.group()
def sim():
    """Deterministic multi-node simulation."""


@sim.command("run")
@click.option("--scenario", required=True, help="Scenario file, or a bundled scenario name.")
@click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
              help="Override the run seed (u64).")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML network-config overrides, applied over the scenario's own.")
@click.option("--report-out", type=click.Path(), default=None,
              help="Also write the rendered report to this file.")
def sim_run(scenario, seed, config_path, report_out):
    """Run a scripted scenario and print its run report."""
    path = _resolve_scenario(scenario)
    started = time.monotonic()
    try:
        script = load_scenario(path)
        merged = dict(script.config)
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                merged.update(yaml.safe_load(fh) or {})
        if seed is not None:
            merged["rng_seed"] = seed
        cfg = NetworkConfig.from_mapping(merged)
        report = run_scenario(build_network(cfg), script)
    except AssertionFailed as exc:
        if exc.report_text:
            click.echo(exc.report_text, nl=False)
            if report_out:
                with open(report_out, "w", encoding="utf-8") as fh:
                    fh.write(exc.report_text)
        click.echo(f"scenario failed: {exc}", err=True)
        sys.exit(2)
    except (ConfigInvalid, UnknownTarget) as exc:
        raise click.ClickException(str(exc)) from exc
    text = report.render_text()
    click.echo(text, nl=False)
    if report_out:
        with open(report_out, "w", encoding="utf-8") as fh:
            fh.write(text)
    click.echo(f"wall {time.monotonic() - started:.2f}s", err=True)


@sim.command("faults")
@click.option("--list", "list_kinds", is_flag=True, required=True,
              help="List injectable fault kinds and their fields.")
def sim_faults(list_kinds):
    """Describe the fault-injection vocabulary."""
    for kind, fields in FAULT_KINDS.items():
        click.echo(f"{kind}: {', '.join(fields)} (plus scheduled_at)")


@main.group()
def node():
    """Single-node / real-transport tools."""


@node.command("serve")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="YAML with host, port, seed, optional nodes count, and keysOut path.")
def node_serve(config_path):
    """Serve the HTTP gateway over a seeded demo network (real sockets)."""
    import asyncio
    import json

    import uvicorn

    from .gateway import create_app
    from .ledger import RegisterCourse, RegisterStudent, UpsertGrade

    settings = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            settings = yaml.safe_load(fh) or {}
    host = settings.get("host", "127.0.0.1")
    port = int(settings.get("port", 8440))
    seed = int(settings.get("seed", 0))
    nodes = int(settings.get("nodes", 5))
    keys_out = settings.get("keysOut")

    cfg = NetworkConfig(universities=1, nodes_per_university=nodes, rng_seed=seed)
    bed = build_network(cfg)
    registrar = bed.create_account("registrar", Role.REGISTRAR, "office", "Records Office")
    staff = bed.create_account("t1", Role.STAFF, "T1", "Dr. Ng")
    student = bed.create_account("s1", Role.STUDENT, "S1", "Ada Lovelace")
    student2 = bed.create_account("s2", Role.STUDENT, "S2", "Grace Hopper")
    auditor = bed.create_account("aud1", Role.AUDITOR, "AUD1", "Consortium Audit")
    uni = bed.universities["uni-1"]
    intake = uni.nodes[uni.node_order[0]]

    from .ledger import decode_transaction

    def back_office(label, op):
        raw = bytes.fromhex(bed.sign(label, op))
        result = intake.submit_transaction(decode_transaction(raw))
        if not result.accepted:
            raise click.ClickException(f"seed data rejected: {result.reason}")

    back_office("registrar", RegisterStudent("S1", "Ada Lovelace", "MATH"))
    back_office("registrar", RegisterStudent("S2", "Grace Hopper", "MATH"))
    back_office("registrar", RegisterCourse("C1", "Analysis I", "2025S1", "T1"))
    intake.produce_block()
    back_office("t1", UpsertGrade("S1", "C1", "2025S1", 93, "A"))
    back_office("t1", UpsertGrade("S2", "C1", "2025S1", 88, "B"))
    intake.produce_block()
    bed.settle()

    # Publish the period's credential commitments and give this gateway the
    # consortium view, so the public /verify form works against the same
    # origin the portal talks to.
    outcome = uni.hub.publish_commitments("2025S1")
    if not outcome.accepted:
        raise click.ClickException(f"commitment publish failed: {outcome.reason}")
    uni.gateway.member_log = bed.ministry_log

    demo = (("registrar", registrar), ("t1", staff), ("s1", student),
            ("s2", student2), ("aud1", auditor))
    if keys_out:
        # Client-side signing needs the key in the client's hands; this file
        # is the demo's provisioning channel (the portal imports it, the CLI
        # reads it directly). Seeds are secrets: demo use only.
        doc = {
            "format": "educhain-keys v1",
            "gatewayUrl": f"http://{host}:{port}",
            "accounts": [
                {
                    "label": label,
                    "role": account.role.value,
                    "accountId": account.key.account_id.hex(),
                    "publicKey": account.key.public_key.hex(),
                    "keySeed": account.key.secret_key.hex(),
                    "password": f"pw-{label}",
                }
                for label, account in demo
            ],
        }
        with open(keys_out, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
        click.echo(f"wrote demo key file to {keys_out}", err=True)

    click.echo(f"serving gateway for uni-1 on http://{host}:{port}", err=True)
    click.echo("demo accounts (password is pw-<label>):", err=True)
    for label, account in demo:
        click.echo(f"  {label}: accountId={account.key.account_id.hex()}", err=True)

    async def produce_blocks():
        # Writes arrive over HTTP into mempools; the testbed's own stepping
        # relays, mines, and gossips them until quiescent. Runs on the same
        # event loop as the request handlers, so node state is never touched
        # from two threads.
        while True:
            await asyncio.sleep(0.1)
            if not bed.quiescent():
                bed.settle()

    server = uvicorn.Server(uvicorn.Config(
        create_app(uni.gateway), host=host, port=port, log_level="info",
    ))

    async def serve_with_miner():
        miner = asyncio.ensure_future(produce_blocks())
        try:
            await server.serve()
        finally:
            miner.cancel()

    asyncio.run(serve_with_miner())


if __name__ == "__main__":
    main()
