"""Around-the-ear electrode montage handling.

Twenty electrode positions, ten per ear, labeled L1-L10 and R1-R10
going around each ear. One position per ear is consumed by hardware
wiring (ground on the left, reference on the right) and one further
position per ear is excluded to leave 16 recordable channels: right-ear
electrodes land on amplifier channels 1-8, left-ear electrodes on 9-16.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .ingest import Recording

SIDES = ("L", "R")
POSITIONS_PER_SIDE = 10


class MontageError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class ElectrodeLabel:
    side: str
    index: int

    def __post_init__(self):
        if self.side not in SIDES:
            raise MontageError(f"side must be L or R, got {self.side!r}")
        if not 1 <= self.index <= POSITIONS_PER_SIDE:
            raise MontageError(f"electrode index {self.index} outside 1-{POSITIONS_PER_SIDE}")

    @classmethod
    def parse(cls, text: str) -> "ElectrodeLabel":
        text = text.strip()
        if len(text) < 2 or text[0] not in SIDES:
            raise MontageError(f"cannot parse electrode label {text!r}")
        try:
            idx = int(text[1:])
        except ValueError as exc:
            raise MontageError(f"cannot parse electrode label {text!r}") from exc
        return cls(text[0], idx)

    def __str__(self) -> str:
        return f"{self.side}{self.index}"


def _as_label(label) -> ElectrodeLabel:
    if isinstance(label, ElectrodeLabel):
        return label
    return ElectrodeLabel.parse(str(label))


CANONICAL_LABELS = tuple(
    ElectrodeLabel(side, i) for side in SIDES for i in range(1, POSITIONS_PER_SIDE + 1)
)


@dataclass(frozen=True)
class MontageMap:
    """Mapping from recordable electrode labels to amplifier channels 1-16."""

    channel_of: dict
    reference: ElectrodeLabel
    ground: ElectrodeLabel
    excluded: frozenset

    def channel(self, label) -> int:
        lab = _as_label(label)
        try:
            return self.channel_of[lab]
        except KeyError:
            raise MontageError(f"electrode {lab} is not mapped to a channel") from None

    def label_for_channel(self, channel: int) -> ElectrodeLabel:
        for lab, ch in self.channel_of.items():
            if ch == channel:
                return lab
        raise MontageError(f"no electrode mapped to channel {channel}")

    def ordered_labels(self) -> list[ElectrodeLabel]:
        """Labels sorted by their channel number."""
        return [lab for lab, _ in sorted(self.channel_of.items(), key=lambda kv: kv[1])]


def _build(excluded_pair: tuple[str, str]) -> MontageMap:
    ground = ElectrodeLabel.parse("L6")
    reference = ElectrodeLabel.parse("R6")
    excluded = frozenset(ElectrodeLabel.parse(t) for t in excluded_pair)
    taken = {ground, reference} | excluded
    mapping: dict[ElectrodeLabel, int] = {}
    ch = 1
    for side in ("R", "L"):  # right ear first: channels 1-8, then left: 9-16
        for i in range(1, POSITIONS_PER_SIDE + 1):
            lab = ElectrodeLabel(side, i)
            if lab in taken:
                continue
            mapping[lab] = ch
            ch += 1
    return MontageMap(channel_of=mapping, reference=reference, ground=ground, excluded=excluded)


def default_montage() -> MontageMap:
    """Default map: ground L6, reference R6, exclude L3/R3."""
    return _build(("L3", "R3"))


def below_ear_montage() -> MontageMap:
    """Alternate map excluding the below-ear positions L8/R8 instead."""
    return _build(("L8", "R8"))


def validate(m: MontageMap) -> list[str]:
    """Return violated-constraint names; an empty list means the map is valid."""
    violations: list[str] = []
    channels = list(m.channel_of.values())
    if len(set(channels)) != len(channels):
        violations.append("injectivity")
    if sorted(channels) != list(range(1, 17)):
        violations.append("channel-coverage")
    mapped = set(m.channel_of)
    role_list = [m.reference, m.ground, *m.excluded]
    roles = set(role_list)
    if mapped & roles or len(roles) != len(role_list):
        violations.append("role-overlap")
    by_side = {s: sum(1 for e in m.excluded if e.side == s) for s in SIDES}
    if set(by_side.values()) != {1} or len(m.excluded) != 2:
        violations.append("one-excluded-per-ear")
    for lab, ch in m.channel_of.items():
        if lab.side == "R" and not 1 <= ch <= 8:
            violations.append("side-assignment")
            break
        if lab.side == "L" and not 9 <= ch <= 16:
            violations.append("side-assignment")
            break
    return violations


def save_montage_csv(m: MontageMap, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "role", "channel"])
        for lab in CANONICAL_LABELS:
            if lab == m.ground:
                writer.writerow([str(lab), "ground", ""])
            elif lab == m.reference:
                writer.writerow([str(lab), "reference", ""])
            elif lab in m.excluded:
                writer.writerow([str(lab), "excluded", ""])
            else:
                writer.writerow([str(lab), "record", m.channel_of[lab]])


def load_montage_csv(path) -> MontageMap:
    mapping: dict[ElectrodeLabel, int] = {}
    reference = None
    ground = None
    excluded = set()
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"label", "role", "channel"}
        if reader.fieldnames is None or need - set(reader.fieldnames):
            raise MontageError(f"{path}: expected header label,role,channel")
        for row in reader:
            lab = ElectrodeLabel.parse(row["label"])
            role = row["role"].strip().lower()
            if role == "record":
                mapping[lab] = int(row["channel"])
            elif role == "reference":
                reference = lab
            elif role == "ground":
                ground = lab
            elif role == "excluded":
                excluded.add(lab)
            else:
                raise MontageError(f"{path}: unknown role {role!r} for {lab}")
    if reference is None or ground is None:
        raise MontageError(f"{path}: montage must name a reference and a ground")
    return MontageMap(
        channel_of=mapping, reference=reference, ground=ground, excluded=frozenset(excluded)
    )


def builtin_montage_path():
    return resources.files("earpipe").joinpath("data/montage.csv")


def rereference_linked_mastoid(rec: Recording, m: MontageMap, left="L5", right="R5") -> Recording:
    """Re-reference every channel to the mean of the two mastoid channels.

    Output row i is data[i] - (v_left + v_right) / 2 where v_left/v_right
    are the rows the montage maps the two mastoid-adjacent electrodes to.
    Recording rows are assumed to be in amplifier-channel order (row 0 is
    channel 1).
    """
    li = m.channel(left) - 1
    ri = m.channel(right) - 1
    for idx, name in ((li, left), (ri, right)):
        if not 0 <= idx < rec.n_channels:
            raise MontageError(f"mastoid electrode {name} maps to channel {idx + 1}, "
                               f"but the recording has {rec.n_channels} rows")
    ref = 0.5 * (rec.data[li] + rec.data[ri])
    out = rec.copy()
    out.data = rec.data - ref[None, :]
    return out


def relabel_by_montage(rec: Recording, m: MontageMap) -> Recording:
    """Rename ch1..ch16 recording rows to their electrode labels."""
    out = rec.copy()
    out.labels = [str(m.label_for_channel(i + 1)) for i in range(rec.n_channels)]
    return out
