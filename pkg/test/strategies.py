"""
Hypothesis strategies for policies, declarations, states and operations.
Small pools of ids and positions keep collisions frequent so that drawn
operations hit their applied branches as well as their rejections.
"""

from hypothesis import strategies as st

from models.policy import ControllerCategory, DataTypeCode, Policy, Purpose, Recipient
from models.state import Declaration, DeviceId, DeviceInfo, Position, Range, SubjectDeviceId, SystemState
from utils.semantics import Collect, Declare, Define, Install, Move, Pair, Require, apply

CONTROLLER_IDS = ("", "acme", "north-road-operator")
DEVICE_IDS = tuple(DeviceId.from_label(f"device-{i}") for i in range(4))
DATA_TYPES = (DataTypeCode.PLATE_NUMBER, DataTypeCode.MAC_ADDRESS)
SUBJECTS = (
    SubjectDeviceId.plate("AB-123-CD"),
    SubjectDeviceId.plate("EF-456-GH"),
    SubjectDeviceId.mac("02:00:00:00:00:01"),
    SubjectDeviceId.label("phone-1"),
    SubjectDeviceId.label("phone-2"),
)
RETENTIONS = (0, 60, 3600, 86400, 2592000)
PLATES = (b"AB-123-CD", b"EF-456-GH", b"IJ-789-KL")


def policies(controller_ids=CONTROLLER_IDS):
    return st.builds(
        Policy,
        controller_id=st.sampled_from(controller_ids),
        controller_category=st.sampled_from(list(ControllerCategory)),
        purposes=st.frozensets(st.sampled_from(list(Purpose))),
        retention=st.sampled_from(RETENTIONS),
        recipients=st.frozensets(st.sampled_from(list(Recipient))),
        cross_border=st.booleans(),
    )


def maybe_policies():
    return st.none() | policies()


def positions(spread_m=30):
    coord = st.integers(-spread_m, spread_m)
    return st.builds(Position.from_meters, coord, coord)


def values(data_type):
    if data_type == DataTypeCode.MAC_ADDRESS:
        stored = st.binary(min_size=6, max_size=6)
    else:
        stored = st.sampled_from(PLATES)
    return st.none() | stored


def device_ids():
    return st.builds(DeviceId, st.binary(min_size=16, max_size=16))


def declarations(device_id=None):
    coord = st.integers(-10**6, 10**6)
    return st.builds(
        Declaration,
        st.just(device_id) if device_id else device_ids(),
        st.builds(Position, coord, coord),
        st.builds(Range, st.integers(0, 2000)),
        st.sampled_from(list(DataTypeCode)),
        policies(),
    )


def device_infos():
    return st.builds(DeviceInfo, positions(), st.sampled_from([5, 15, 40]).map(Range.from_meters),
                     st.sampled_from(DATA_TYPES), policies())


class OperationFactory:
    """
    Operations drawn against the current state: most parameters are read
    from existing entries so preconditions can hold.

    draw is a hypothesis draw function, usually data.draw from st.data().
    """

    def __init__(self, draw):
        self.draw = draw
        # one fixed tuple per device keeps the derived properties provable
        self.infos = {device_id: draw(device_infos()) for device_id in DEVICE_IDS}

    def pick(self, options):
        return self.draw(st.sampled_from(options))

    def chance(self, p):
        return self.draw(st.floats(0, 1, exclude_max=True)) < p

    def install(self, state):
        device_id = self.pick(DEVICE_IDS)
        if self.chance(0.9):
            info = self.infos[device_id]
        else:
            info = DeviceInfo(self.draw(positions()), Range(10), DataTypeCode.IMAGE, self.draw(policies()))
        return Install(device_id, info.position, info.range, info.data_type, info.policy)

    def declare(self, state):
        device_id = self.pick(DEVICE_IDS)
        info = self.infos[device_id]
        return Declare(device_id, info.position, info.range, info.data_type, info.policy)

    def move(self, state):
        subject = self.pick(SUBJECTS)
        if self.chance(0.5):
            info = self.infos[self.pick(DEVICE_IDS)]
            shift = st.integers(-300, 300)
            return Move(subject, info.position.offset(self.draw(shift), self.draw(shift)))
        return Move(subject, self.draw(positions()))

    def define(self, state):
        subject = self.pick(SUBJECTS)
        data_type = self.pick(DATA_TYPES)
        return Define(subject, data_type, self.draw(maybe_policies()), self.draw(values(data_type)))

    def pair(self, state):
        return Pair(self.pick(SUBJECTS), self.pick(SUBJECTS))

    def collect(self, state):
        device_id = self.pick(DEVICE_IDS)
        subject = self.pick(SUBJECTS)
        data_type = self.infos[device_id].data_type if self.chance(0.8) else self.pick(DATA_TYPES)
        if self.chance(0.8):
            policy, value = state.store_s_get((subject, data_type))
        else:
            policy, value = self.draw(maybe_policies()), self.draw(values(data_type))
        return Collect(device_id, subject, data_type, policy, value)

    def require(self, state):
        if state.store_c and self.chance(0.8):
            device_id, subject, data_type = self.pick(sorted(state.store_c))
        else:
            device_id = self.pick(DEVICE_IDS)
            subject = self.pick(SUBJECTS)
            data_type = self.pick(DATA_TYPES)
        requester = state.paired_to(subject) if self.chance(0.8) else self.pick(SUBJECTS)
        if self.chance(0.8):
            policy = state.store_s_get((requester, data_type))[0]
        else:
            policy = self.draw(maybe_policies())
        value = state.store_s_get((subject, data_type))[1]
        return Require(requester, subject, device_id, data_type, policy, value)

    def any(self, state):
        maker = self.pick([self.install, self.declare, self.move, self.define, self.pair,
                           self.collect, self.collect, self.require])
        return maker(state)

    def by_tag(self, tag):
        return getattr(self, tag)


def reachable_state(factory: OperationFactory, steps=30) -> SystemState:
    """A reachable state built from drawn operations through apply()."""
    state = SystemState()
    for _ in range(factory.draw(st.integers(0, steps))):
        state, _ = apply(state, factory.any(state))
    return state
