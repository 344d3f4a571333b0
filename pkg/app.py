#!/usr/bin/env python3
"""
Consent Framework Application
Logging setup and the interactive Personal Data Custodian session
"""

import sys
import logging
from pathlib import Path

# Add project root to Python path
project_root = Path(__file__).parent
sys.path.insert(0, str(project_root))

import numpy as np

from config.config import get_config, load_env_variables
from helper.errors import ConsentFrameworkError, MissingIdentifierError
from models.policy import DataTypeCode, render_policy
from models.state import Position
from utils.beacon import ConsentFrame, declarations_from_capture
from utils.pdc import Answer, DecisionKind, decide, handle_prompt, lasting, load_rules, save_rules
from utils.registry import ConsentRecord
from utils.scenario import subject_identifier

ANSWER_HELP = "[o] accept once  [a] accept always  [r] refuse once  [n] refuse always"


def setup_logging(config=None):
    """Setup logging configuration."""
    config = config or get_config()
    log_level = str(config.get('logging.level', 'INFO'))
    log_file = str(config.get('logging.file', 'logs/consent.log'))
    console_log = bool(config.get('logging.console', True))

    # Create logs directory if it doesn't exist
    log_path = Path(log_file)
    log_path.parent.mkdir(parents=True, exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, log_level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler() if console_log else logging.NullHandler()
        ]
    )
    return logging.getLogger(__name__)


class PdcSession:
    """
    Line-oriented custodian session.

    Each incoming declaration is rendered, decided from the rule file and,
    when no rule applies, answered with one letter read from the input.
    Accept/refuse-always answers are written back to the rule file.
    """

    def __init__(self, rules_path, stdin=None, stdout=None, identifiers=None, emit=None, seed=None):
        self.rules_path = Path(rules_path)
        self.rules = load_rules(self.rules_path)
        self.stdin = stdin or sys.stdin
        self.stdout = stdout or sys.stdout
        self.identifiers = dict(identifiers or {})
        self.emit = emit
        self.rng = np.random.default_rng(seed)
        self.logger = logging.getLogger(__name__)

    def say(self, text=""):
        print(text, file=self.stdout)

    def ask(self, decl):
        """Read answers until one letter is valid; None at end of input."""
        while True:
            self.say(ANSWER_HELP)
            line = self.stdin.readline()
            if not line:
                return None
            letter = line.strip().lower()
            try:
                return Answer(letter)
            except ValueError:
                self.say(f"Unknown answer '{letter}'")

    def handle(self, decl, now=0):
        self.say(f"Device {decl.device_id} collects {decl.data_type.name.lower().replace('_', ' ')} "
                 f"within {decl.range.meters:g} m of {decl.position.to_meters()}")
        self.say(f"  {render_policy(decl.policy)}")

        decision = decide(self.rules, decl, now)
        if decision.kind == DecisionKind.PROMPT:
            answer = self.ask(decl)
            if answer is None:
                self.say("No answer, nothing sent")
                return decision
            decision, delta = handle_prompt(decl, answer)
            kept = lasting(delta)
            if kept:
                self.rules.extend(kept)
                save_rules(self.rules_path, self.rules)
                for rule in kept:
                    self.say(f"Saved rule: {rule.describe()}")

        if decision.kind == DecisionKind.REFUSE:
            self.say("refused")
            return decision

        self.say("consented")
        if self.emit:
            text = self.identifiers.get(decl.data_type)
            if text is None:
                raise MissingIdentifierError(decl.data_type.name)
            self.emit(decl, subject_identifier(decl.data_type, text), decision.policy, now, self.rng.bytes(8))
        return decision

    def run(self, declarations, now=0):
        """Handle every declaration; returns the decisions in order."""
        decisions = []
        for decl in declarations:
            try:
                decisions.append(self.handle(decl, now))
            except ConsentFrameworkError as e:
                self.logger.warning(f"Device {decl.device_id}: {e.message}")
                self.say(f"error: {e.message}")
        return decisions


def beacon_emitter(out):
    """Consent frames written as hex lines, ready for a beacon writer."""
    def emit(decl, subject, policy, now, nonce):
        frame = ConsentFrame(decl.device_id, subject, now, nonce, policy).serialize()
        out.write(frame.hex() + "\n")
    return emit


def registry_emitter(client):
    def emit(decl, subject, policy, now, nonce):
        client.post_consent(ConsentRecord(decl.device_id, subject, policy, now, nonce=nonce))
    return emit


def read_capture(path):
    with open(path, 'r', encoding='utf-8') as file:
        return declarations_from_capture(file)


def session_identifiers(config):
    identifiers = {}
    for name, text in (config.get('pdc.identifiers', {}) or {}).items():
        identifiers[DataTypeCode[name]] = str(text)
    return identifiers


def session_position(config):
    x, y = config.get('pdc.position', [0, 0])
    return Position.from_meters(float(x), float(y))


def main():
    """Main entry point."""
    load_env_variables()
    config = get_config()
    setup_logging(config)
    from cli import main as cli_main
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
