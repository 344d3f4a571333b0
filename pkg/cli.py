#!/usr/bin/env python3
"""
Consent Framework CLI
Run scenarios, verify traces, serve the registry and drive a custodian session
"""

import sys
import argparse
import logging
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

from config.config import env_override, get_config, load_env_variables

EXIT_OK = 0
EXIT_VIOLATION = 1
EXIT_USAGE = 2

logger = logging.getLogger(__name__)


def cmd_simulate(scenario, seed=None, transport=None, out=None, config=None):
    """Run a scenario script, write its trace and verify it."""
    from helper.errors import ConsentFrameworkError
    from utils.scenario import RUNNERS, load_script
    from utils.semantics import write_trace

    if not scenario:
        print("❌ No scenario given (--scenario or CONSENT_SCENARIO)")
        return EXIT_USAGE
    config = config or get_config()
    try:
        script = load_script(scenario)
        result = RUNNERS[script.kind](script, seed=seed, transport=transport, config=config)
    except ConsentFrameworkError as e:
        print(f"❌ {e.message}")
        return EXIT_USAGE

    out = out or config.get('simulation.out', 'output/trace.jsonl')
    write_trace(result.trace, out)
    print(f"🧪 {script.name} over {result.transport} (seed {result.seed}): "
          f"{len(result.trace)} steps, {len(result.receipts)} receipts")
    for label in sorted(result.gates):
        print(f"   {label} enabled during {result.enabled_intervals(label)}")
    print(f"📝 Trace written to {out}")

    if result.violations:
        for violation in result.violations:
            print(f"   ⚠️  {violation}")
        print(f"❌ {len(result.violations)} property violation(s)")
        return EXIT_VIOLATION
    print("✅ All properties hold")
    return EXIT_OK


def cmd_verify(trace_path, config=None):
    """Replay a trace file and report property violations."""
    from helper.errors import ConsentFrameworkError
    from utils.semantics import load_trace, verify_trace

    if not trace_path:
        print("❌ No trace given (--trace or CONSENT_TRACE)")
        return EXIT_USAGE
    config = config or get_config()
    try:
        trace = load_trace(trace_path)
        if not trace:
            print(f"❌ Trace {trace_path} is empty")
            return EXIT_USAGE
        violations = verify_trace(trace, config.get('semantics.gateway_knows_check', False))
    except OSError as e:
        print(f"❌ Cannot read trace: {e}")
        return EXIT_USAGE
    except ConsentFrameworkError as e:
        print(f"❌ Trace cannot be replayed: {e.message}")
        return EXIT_USAGE

    if violations:
        for violation in violations:
            print(f"   ⚠️  {violation}")
        print(f"❌ {len(violations)} property violation(s) in {len(trace)} steps")
        return EXIT_VIOLATION
    print(f"✅ {len(trace)} steps, all properties hold")
    return EXIT_OK


def parse_bind(bind):
    host, _, port = bind.rpartition(':')
    if not host or not port.isdigit():
        raise ValueError(f"Bind address must be host:port, got '{bind}'")
    return host, int(port)


def cmd_registry_serve(bind=None, tokens=None, config=None):
    """Serve the registry API until interrupted."""
    from helper.errors import ConsentFrameworkError
    from service.registry_app import create_app
    from utils.registry import RegistryStore, TokenBook

    config = config or get_config()
    bind = bind or f"{config.get('registry.host', '127.0.0.1')}:{config.get('registry.port', 8080)}"
    tokens = tokens or config.get('registry.tokens_file', 'tokens.yml')
    try:
        host, port = parse_bind(bind)
        store = RegistryStore(TokenBook.load(tokens), grid_cell_m=config.get('registry.grid_cell_m', 0))
    except ValueError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConsentFrameworkError as e:
        print(f"❌ {e.message}", file=sys.stderr)
        return EXIT_USAGE

    print(f"🌐 Registry listening on http://{host}:{port}")
    try:
        create_app(store).run(host=host, port=port)
    except KeyboardInterrupt:
        print("\n👋 Registry stopped by user")
    except OSError as e:
        print(f"❌ Cannot start registry: {e}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


def cmd_pdc(rules=None, transport=None, capture=None, out=None, config=None, stdin=None, stdout=None):
    """Interactive custodian session over captured advertisements or a registry poll."""
    from app import PdcSession, beacon_emitter, read_capture, registry_emitter, session_identifiers, \
        session_position
    from helper.errors import ConsentFrameworkError
    from utils.registry_client import RegistryClient

    config = config or get_config()
    rules = rules or config.get('pdc.rules_file', 'rules.json')
    transport = transport or config.get('simulation.transport', 'beacon')
    stdout = stdout or sys.stdout
    out_file = None
    try:
        if transport == 'beacon':
            if not capture:
                print("❌ The beacon session reads a capture file (--capture)", file=stdout)
                return EXIT_USAGE
            declarations = read_capture(capture)
            emit = None
            if out:
                out_file = open(out, 'w', encoding='utf-8')
                emit = beacon_emitter(out_file)
        elif transport == 'registry':
            client = RegistryClient(config.get('registry.url', 'http://127.0.0.1:8080'),
                                    config.get('registry.token'), timeout=config.get('registry.timeout_s', 5.0))
            records = client.nearby(session_position(config), config.get('registry.lookahead_m', 0.0))
            declarations = [record.declaration for record in records]
            emit = registry_emitter(client)
        else:
            print(f"❌ Unknown transport '{transport}'", file=stdout)
            return EXIT_USAGE

        session = PdcSession(rules, stdin=stdin, stdout=stdout, identifiers=session_identifiers(config), emit=emit)
        print(f"📡 {len(declarations)} declaration(s) received", file=stdout)
        session.run(declarations)
    except (OSError, KeyError) as e:
        print(f"❌ {e}", file=stdout)
        return EXIT_USAGE
    except ConsentFrameworkError as e:
        print(f"❌ {e.message}", file=stdout)
        return EXIT_USAGE
    finally:
        if out_file:
            out_file.close()
    return EXIT_OK


def cmd_rules_list(rules=None, config=None, stdout=None):
    """Print the ordered rule set."""
    from helper.errors import ConsentFrameworkError
    from utils.pdc import load_rules

    config = config or get_config()
    rules = rules or config.get('pdc.rules_file', 'rules.json')
    stdout = stdout or sys.stdout
    try:
        loaded = load_rules(rules)
    except ConsentFrameworkError as e:
        print(f"❌ {e.message}", file=stdout)
        return EXIT_USAGE
    if not loaded:
        print("No rules", file=stdout)
    for index, rule in enumerate(loaded, 1):
        print(f"{index:3d}. {rule.describe()}", file=stdout)
    return EXIT_OK


def cmd_advertise(scenario, device, out, config=None):
    """Write one round of a scripted device's advertisement frames as hex lines."""
    from helper.errors import ConsentFrameworkError
    from utils.beacon import capture_to_hex, encode_declaration
    from utils.scenario import load_script

    if not scenario or not device:
        print("❌ advertise needs --scenario and --device")
        return EXIT_USAGE
    try:
        spec = load_script(scenario).device(device)
        frames = [fragment.serialize() for fragment in encode_declaration(spec.declaration)]
    except ConsentFrameworkError as e:
        print(f"❌ {e.message}")
        return EXIT_USAGE

    text = capture_to_hex(frames)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding='utf-8')
        print(f"📡 {len(frames)} frame(s) written to {out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        description="IoT Consent Framework CLI",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python cli.py simulate --scenario assets/scenarios/anpr_basic.json --transport registry
  python cli.py verify --trace output/trace.jsonl
  python cli.py registry-serve --bind 127.0.0.1:8080 --tokens tokens.yml
  python cli.py advertise --scenario assets/scenarios/mall_walk.json --device tracker-a --out capture.hex
  python cli.py pdc --rules rules.json --capture capture.hex
  python cli.py rules list --rules rules.json

Flags fall back to CONSENT_<FLAG> environment variables (see .env.example).
        """
    )
    sub = parser.add_subparsers(dest='command', required=True)

    simulate = sub.add_parser('simulate', help='Run a scenario script and verify its trace')
    simulate.add_argument('--scenario', default=env_override('scenario'))
    simulate.add_argument('--seed', type=int, default=env_override('seed'))
    simulate.add_argument('--transport', choices=['beacon', 'registry'], default=env_override('transport'))
    simulate.add_argument('--out', default=env_override('out'))

    verify = sub.add_parser('verify', help='Replay a trace and check the consent properties')
    verify.add_argument('--trace', default=env_override('trace'))

    serve = sub.add_parser('registry-serve', help='Serve the device/consent registry')
    serve.add_argument('--bind', default=env_override('bind'))
    serve.add_argument('--tokens', default=env_override('tokens'))

    pdc = sub.add_parser('pdc', help='Interactive custodian session')
    pdc.add_argument('--rules', default=env_override('rules'))
    pdc.add_argument('--transport', choices=['beacon', 'registry'], default=env_override('transport'))
    pdc.add_argument('--capture', help='Captured advertisement frames, one hex frame per line')
    pdc.add_argument('--out', default=None, help='Where consent frames are written (beacon)')

    rules = sub.add_parser('rules', help='Inspect the rule file')
    rules.add_argument('action', choices=['list'])
    rules.add_argument('--rules', default=env_override('rules'))

    advertise = sub.add_parser('advertise', help='Emit the advertisement frames of a scripted device')
    advertise.add_argument('--scenario', default=env_override('scenario'))
    advertise.add_argument('--device')
    advertise.add_argument('--out', default=None)
    return parser


def main(argv=None):
    """Main CLI entry point; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE

    if args.command == 'simulate':
        return cmd_simulate(args.scenario, args.seed, args.transport, args.out)
    if args.command == 'verify':
        return cmd_verify(args.trace)
    if args.command == 'registry-serve':
        return cmd_registry_serve(args.bind, args.tokens)
    if args.command == 'pdc':
        return cmd_pdc(args.rules, args.transport, args.capture, args.out)
    if args.command == 'rules':
        return cmd_rules_list(args.rules)
    if args.command == 'advertise':
        return cmd_advertise(args.scenario, args.device, args.out)
    return EXIT_USAGE


if __name__ == "__main__":
    load_env_variables()
    from app import setup_logging
    setup_logging(get_config())
    sys.exit(main())
