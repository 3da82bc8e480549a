"""Medical event relations and their integrity rules."""
from __future__ import annotations

from collections.abc import Mapping

from gridbox.errors import CycleDetected, DanglingRelation, UnknownPatient
from gridbox.mom.records import MedicalEvent


def _reaches(events: Mapping, start: str, goal: str) -> bool:
    """True when ``goal`` is reachable from ``start`` over CONSEQUENCE_OF edges."""
    stack, seen = [start], set()
    while stack:
        current = stack.pop()
        if current == goal:
            return True
        if current in seen or current not in events:
            continue
        seen.add(current)
        stack.extend(t for t, kind in events[current].relations if kind == "CONSEQUENCE_OF")
    return False


def validate_event(event: MedicalEvent, events: Mapping, patient_exists: bool = True) -> None:
    if not patient_exists:
        raise UnknownPatient(f"no patient {event.patient_id!r}")
    for target, kind in event.relations:
        if target == event.event_id:
            raise DanglingRelation(f"event {event.event_id} relates to itself")
        if target not in events:
            raise DanglingRelation(f"relation target {target!r} does not exist")
    if event.event_id in events:
        # re-adding an event may only extend its relations; check the merged edge set
        merged = dict(events)
        prior = events[event.event_id].relations
        merged[event.event_id] = MedicalEvent(
            event.event_id, event.kind, event.patient_id, event.timestamp,
            tuple(dict.fromkeys(prior + event.relations)),
        )
        events = merged
    for target, kind in event.relations:
        if kind == "CONSEQUENCE_OF" and _reaches(events, target, event.event_id):
            raise CycleDetected(f"{event.event_id} -> {target} closes a CONSEQUENCE_OF cycle")


def add_medical_event(event: MedicalEvent, store) -> str:
    """Validate and persist ``event``.

    ``store`` supplies ``events`` (id -> MedicalEvent), ``has_patient(pid)``
    and ``put_event(event)``.
    """
    validate_event(event, store.events, store.has_patient(event.patient_id))
    store.put_event(event)
    return event.event_id


def related_events(event_id: str, events: Mapping) -> dict:
    """Both directions of every relation touching ``event_id``."""
    outgoing = list(events[event_id].relations) if event_id in events else []
    incoming = [
        (other.event_id, kind)
        for other in events.values()
        for target, kind in other.relations
        if target == event_id
    ]
    return {"outgoing": sorted(outgoing), "incoming": sorted(incoming)}
