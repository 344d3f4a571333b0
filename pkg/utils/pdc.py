"""
Personal Data Custodian
Runs on a subject's gateway device. Decides, from the subject's rules,
whether to consent to each declared device, asks the subject when no rule
applies, sends consents over a transport and withdraws them on request.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, FrozenSet, List, Optional, Tuple

import numpy as np

from helper.errors import (
    ConsentFrameworkError, MissingIdentifierError, RuleFileError, TransportError, UninformedDeviceError,
)
from models.policy import ControllerCategory, DataTypeCode, Policy, Purpose, implies
from models.state import Declaration, DeviceId, SubjectDeviceId
from utils.semantics import Define, Outcome, Require, SemanticsEngine, apply

logger = logging.getLogger(__name__)


class Polarity(Enum):
    POSITIVE = "POSITIVE"
    NEGATIVE = "NEGATIVE"


class Duration(Enum):
    PERMANENT = "PERMANENT"
    ONCE = "ONCE"
    UNTIL = "UNTIL"


class DecisionKind(Enum):
    CONSENT = "consent"
    REFUSE = "refuse"
    PROMPT = "prompt"


class Answer(Enum):
    ACCEPT_ONCE = "o"
    ACCEPT_ALWAYS = "a"
    REFUSE_ONCE = "r"
    REFUSE_ALWAYS = "n"


@dataclass(frozen=True)
class ConsentRule:
    polarity: Polarity
    data_type: DataTypeCode
    controller_category: Optional[ControllerCategory] = None
    controller_id: Optional[str] = None
    purposes: FrozenSet[Purpose] = field(default_factory=frozenset)
    bound: Optional[Policy] = None
    duration: Duration = Duration.PERMANENT
    until: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "purposes", frozenset(Purpose(p) for p in self.purposes))
        if self.polarity == Polarity.NEGATIVE and self.bound is not None:
            raise ValueError("Negative rules carry no bound")
        if self.polarity == Polarity.POSITIVE and self.bound is None:
            raise ValueError("Positive rules need a bound")
        if (self.duration == Duration.UNTIL) != (self.until is not None):
            raise ValueError("'until' is set exactly for UNTIL rules")

    def expired(self, now: int) -> bool:
        return self.duration == Duration.UNTIL and now >= self.until

    def matches(self, decl: Declaration) -> bool:
        """Scope check: data type, controller and overlapping purposes."""
        if decl.data_type != self.data_type:
            return False
        if self.controller_category is not None and decl.policy.controller_category != self.controller_category:
            return False
        if self.controller_id is not None and decl.policy.controller_id != self.controller_id:
            return False
        if self.purposes and not self.purposes & decl.policy.purposes:
            return False
        return True

    def describe(self) -> str:
        scope = [self.data_type.name]
        scope.append(self.controller_id if self.controller_id is not None else
                     (self.controller_category.name if self.controller_category is not None else "any controller"))
        if self.purposes:
            scope.append("/".join(p.name for p in sorted(self.purposes)))
        timing = self.duration.name if self.duration != Duration.UNTIL else f"UNTIL {self.until}"
        return f"{self.polarity.name} {', '.join(scope)} [{timing}]"

    def to_dict(self) -> Dict[str, Any]:
        return {
            "polarity": self.polarity.value,
            "data_type": self.data_type.name,
            "controller_category": self.controller_category.name if self.controller_category is not None else None,
            "controller_id": self.controller_id,
            "purposes": [p.name for p in sorted(self.purposes)],
            "bound": self.bound.to_dict() if self.bound is not None else None,
            "duration": self.duration.value,
            "until": self.until,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ConsentRule":
        category = data.get("controller_category")
        bound = data.get("bound")
        return cls(
            Polarity(data["polarity"]),
            DataTypeCode[data["data_type"]],
            ControllerCategory[category] if category is not None else None,
            data.get("controller_id"),
            frozenset(Purpose[p] for p in data.get("purposes", [])),
            Policy.from_dict(bound) if bound is not None else None,
            Duration(data.get("duration", "PERMANENT")),
            data.get("until"),
        )


@dataclass(frozen=True)
class Decision:
    kind: DecisionKind
    policy: Optional[Policy] = None
    rule_index: Optional[int] = None

    @classmethod
    def consent(cls, policy: Policy, rule_index=None) -> "Decision":
        return cls(DecisionKind.CONSENT, policy, rule_index)

    @classmethod
    def refuse(cls, rule_index=None) -> "Decision":
        return cls(DecisionKind.REFUSE, None, rule_index)

    @classmethod
    def prompt(cls) -> "Decision":
        return cls(DecisionKind.PROMPT)


def load_rules(path) -> List[ConsentRule]:
    path = Path(path)
    if not path.exists():
        return []
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        if not isinstance(data, list):
            raise RuleFileError(f"{path} must hold a JSON list of rules")
        return [ConsentRule.from_dict(item) for item in data]
    except json.JSONDecodeError as e:
        raise RuleFileError(f"{path} is not valid JSON: {e}")
    except (KeyError, TypeError, ValueError) as e:
        raise RuleFileError(f"Invalid rule in {path}: {e}")


def save_rules(path, rules: List[ConsentRule]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in rules], f, indent=2)


def instantiate(rule: ConsentRule, decl: Declaration) -> Policy:
    """Pin a generic bound to the declaring controller."""
    return replace(rule.bound,
                   controller_id=decl.policy.controller_id,
                   controller_category=decl.policy.controller_category)


def decide(rules: List[ConsentRule], decl: Declaration, now: int) -> Decision:
    """
    Decide on one declaration.

    Negative rules win over positive ones; within a polarity the first
    matching rule in list order applies. Unmatched declarations prompt.
    """
    live = [(i, r) for i, r in enumerate(rules) if not r.expired(now) and r.matches(decl)]
    for i, rule in live:
        if rule.polarity == Polarity.NEGATIVE:
            return Decision.refuse(i)
    for i, rule in live:
        if rule.polarity == Polarity.POSITIVE and implies(decl.policy, rule.bound):
            return Decision.consent(instantiate(rule, decl), i)
    return Decision.prompt()


def handle_prompt(decl: Declaration, answer: Answer) -> Tuple[Decision, List[ConsentRule]]:
    """
    Turn a prompt answer into a decision and the rules it creates.

    Every rule is scoped to the declaring controller and the declared
    purposes. Once answers create a ONCE rule that this decision consumes,
    so callers must not keep it; Always answers create a permanent rule.
    """
    policy = decl.policy
    duration = Duration.ONCE if answer in (Answer.ACCEPT_ONCE, Answer.REFUSE_ONCE) else Duration.PERMANENT
    if answer in (Answer.ACCEPT_ONCE, Answer.ACCEPT_ALWAYS):
        rule = ConsentRule(Polarity.POSITIVE, decl.data_type, None, policy.controller_id,
                           policy.purposes, policy, duration)
        return Decision.consent(instantiate(rule, decl)), [rule]
    rule = ConsentRule(Polarity.NEGATIVE, decl.data_type, None, policy.controller_id,
                       policy.purposes, None, duration)
    return Decision.refuse(), [rule]


def lasting(rules: List[ConsentRule]) -> List[ConsentRule]:
    """Rules that outlive the decision that created them."""
    return [r for r in rules if r.duration != Duration.ONCE]


@dataclass(frozen=True)
class ConsentMessage:
    """A consent in transit from a gateway to one device."""
    device_id: DeviceId
    subject: SubjectDeviceId
    policy: Policy
    timestamp: int
    nonce: bytes


class PersonalDataCustodian:
    """
    Decision loop for one gateway device.

    Declarations arrive from a transport (scanner or registry poller); a
    consent is only sent once the semantics state shows the gateway has been
    informed of the device, otherwise it waits in `pending`.
    """

    def __init__(self, gateway: SubjectDeviceId, engine: SemanticsEngine, transport, transport_context,
                 identifiers: Optional[Dict[DataTypeCode, SubjectDeviceId]] = None,
                 rules: Optional[List[ConsentRule]] = None, rules_path=None,
                 prompt_handler: Optional[Callable[[Declaration], Optional[Answer]]] = None,
                 retries=3, seed=None):
        self.gateway = gateway
        self.engine = engine
        self.transport = transport
        self.transport_context = transport_context
        self.identifiers = dict(identifiers or {})
        self.rules_path = rules_path
        self.rules = list(rules) if rules is not None else (load_rules(rules_path) if rules_path else [])
        self.prompt_handler = prompt_handler
        self.retries = max(1, int(retries))
        self.rng = np.random.default_rng(seed)

        self.declarations: Dict[DeviceId, Declaration] = {}
        self.pending: Dict[DeviceId, Tuple[Declaration, Decision]] = {}
        self.decisions: Dict[DeviceId, Decision] = {}
        self.consented: Dict[DeviceId, Policy] = {}
        self.history: List[Tuple[int, Declaration, Decision]] = []
        self.consumed: List[ConsentRule] = []
        self.logger = logging.getLogger(__name__)

    def informed(self, decl: Declaration) -> bool:
        return self.engine.state.knows.get((self.gateway, decl.device_id)) == decl.info

    def forget(self, device_id: DeviceId):
        """Drop a received declaration so a later visit is decided afresh."""
        self.declarations.pop(device_id, None)
        self.decisions.pop(device_id, None)
        self.pending.pop(device_id, None)

    def add_rules(self, delta: List[ConsentRule]):
        for rule in delta:
            if rule.duration == Duration.ONCE:
                self.consumed.append(rule)
                self.logger.info(f"Consumed rule: {rule.describe()}")
        kept = lasting(delta)
        if not kept:
            return
        self.rules.extend(kept)
        if self.rules_path:
            save_rules(self.rules_path, self.rules)
        for rule in kept:
            self.logger.info(f"New rule: {rule.describe()}")

    def on_declaration(self, decl: Declaration, now: int) -> Decision:
        """Handle one received declaration."""
        if self.declarations.get(decl.device_id) == decl:
            return self.decisions[decl.device_id]
        self.declarations[decl.device_id] = decl

        decision = decide(self.rules, decl, now)
        if decision.rule_index is not None and self.rules[decision.rule_index].duration == Duration.ONCE:
            consumed = self.rules.pop(decision.rule_index)
            self.consumed.append(consumed)
            self.logger.info(f"Consumed rule: {consumed.describe()}")
            if self.rules_path:
                save_rules(self.rules_path, self.rules)

        if decision.kind == DecisionKind.PROMPT and self.prompt_handler:
            answer = self.prompt_handler(decl)
            if answer is not None:
                decision, delta = handle_prompt(decl, answer)
                self.add_rules(delta)

        self.history.append((now, decl, decision))
        self.decisions[decl.device_id] = decision
        self.logger.info(f"Device {decl.device_id} ({decl.policy.controller_id or 'unnamed'}): {decision.kind.value}")

        if decision.kind == DecisionKind.CONSENT:
            self.pending[decl.device_id] = (decl, decision)
            self.flush(now)
        else:
            self.pending.pop(decl.device_id, None)
        return decision

    def flush(self, now: int) -> List[int]:
        """Send every pending consent whose device the gateway now knows."""
        statuses = []
        for device_id, (decl, decision) in list(self.pending.items()):
            if not self.informed(decl):
                continue
            del self.pending[device_id]
            try:
                statuses.append(self.emit_consent(decision, decl, now))
            except ConsentFrameworkError as e:
                self.logger.warning(f"Consent for device {device_id} not delivered: {e.message}")
        return statuses

    def emit_consent(self, decision: Decision, decl: Declaration, now: int) -> int:
        """
        Send a consent and record the consented policy in the subject store.

        Returns:
            Transport status octet (0 accepted)

        Raises:
            MissingIdentifierError: no identifier for the declared data type
            UninformedDeviceError: the gateway does not know the device
            TransportError: delivery failed after all retries
        """
        if decision.kind != DecisionKind.CONSENT or decision.policy is None:
            raise ConsentFrameworkError("Only consent decisions can be emitted", error_code="NOT_CONSENT")
        source = self.identifiers.get(decl.data_type)
        if source is None:
            raise MissingIdentifierError(decl.data_type.name)
        if not self.informed(decl):
            raise UninformedDeviceError(decl.device_id)
        if not implies(decl.policy, decision.policy):
            raise ConsentFrameworkError("Declared policy does not meet the consent", error_code="NOT_IMPLIED")

        message = ConsentMessage(decl.device_id, source, decision.policy, now,
                                 self.rng.bytes(8))
        status = None
        for attempt in range(1, self.retries + 1):
            try:
                status = self.transport.deliver(message, self.transport_context)
                break
            except TransportError as e:
                self.logger.warning(
                    f"Delivery attempt {attempt}/{self.retries} to {decl.device_id} failed: {e.message}")
        if status is None:
            raise TransportError(f"Consent for device {decl.device_id} undelivered after {self.retries} attempts")

        if status == 0:
            self.consented[decl.device_id] = decision.policy
            self.engine.execute(Define(source, decl.data_type, decision.policy, None), now)
        else:
            self.logger.info(f"Device {decl.device_id} answered status 0x{status:02x}")
        return status

    def withdraw(self, device_id: DeviceId, data_type: DataTypeCode, now: int) -> Outcome:
        """
        Ask a device to delete what it collected: publish a zero-retention
        bound on the gateway, require it from the device, then apply it to the
        data source so later collections are not stored.

        Nothing is defined when the device would reject the requirement (out
        of range, nothing stored); the rejection is returned as is.
        """
        source = self.identifiers.get(data_type)
        if source is None:
            raise MissingIdentifierError(data_type.name)
        st = self.engine.state
        bound = st.store_s_get((source, data_type))[0] \
            or st.store_c_get((device_id, source, data_type))[0] \
            or self.consented.get(device_id) \
            or Policy()
        zero = bound.with_retention(0)
        define = Define(self.gateway, data_type, zero, None)
        require = Require(self.gateway, source, device_id, data_type, zero, st.store_s_get((source, data_type))[1])

        _, outcome = apply(apply(st, define, now)[0], require, now)
        if not outcome.is_applied:
            self.logger.info(f"Withdrawal from device {device_id} not possible: {outcome.reason}")
            return outcome

        self.engine.execute(define, now)
        outcome = self.engine.execute(require, now)
        if source != self.gateway:
            self.engine.execute(Define(source, data_type, zero, None), now)

        self.consented.pop(device_id, None)
        self.logger.info(f"Withdrawal from device {device_id}: {outcome.status}")
        return outcome
