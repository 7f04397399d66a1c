#!/usr/bin/env python3
"""Recomputes episodes and KPI series straight from the raw source files.

Independent of the Rust engine: parses the three standard exports, derives
event ids, links episodes and aggregates every KPI for every bucket size and
group-by subset over a window. Prints JSON shaped like ground_truth.json
(episodes and series only).

    kpi_oracle.py DATA_DIR --from 2015-01-01T00:00:00Z --to 2015-04-01T00:00:00Z \
        [--capacity 40] [--antibiotic antibiotic] [--grace-hours 72] [--gap-hours 24]
"""

import argparse
import bisect
import csv
import hashlib
import json
import os
import statistics
import sys
from datetime import datetime, timedelta, timezone

UTC = timezone.utc
MS_DAY = 86_400_000

KPIS = [
    "OCCUPANCY_RATE", "AVG_LOS", "MORTALITY_RATE", "READMISSION_30D",
    "CONTRIBUTION_MARGIN", "SEPSIS_DOOR_TO_ANTIBIOTIC", "ADMISSION_COUNT",
    "REVENUE", "COSTS",
]
ZERO_WHEN_EMPTY = {"OCCUPANCY_RATE", "ADMISSION_COUNT", "REVENUE", "COSTS"}
FIELDS = ["gender", "age_band", "department"]

ADT_TYPES = {"ADMISSAO": "ADMISSION", "ALTA": "DISCHARGE", "TRANSFERENCIA": "TRANSFER", "OBITO": "DEATH"}
BILLING_TYPES = {"charge": "BILLING_CHARGE", "cost": "COST_ENTRY"}
CLINICAL_TYPES = {
    "procedure": "PROCEDURE", "diagnosis": "DIAGNOSIS", "lab": "LAB_RESULT",
    "medication": "MEDICATION_ADMIN", "sepsis_flag": "SEPSIS_FLAG", "appointment": "APPOINTMENT",
}


def event_id(source, key):
    digest = hashlib.sha256(source.encode() + b"\x1f" + key.encode()).digest()
    return "ev_" + digest[:16].hex()


def val(row, name):
    v = row.get(name)
    if v is None:
        return None
    v = str(v).strip()
    return v or None


def ms(dt):
    return int(dt.timestamp()) * 1000 + dt.microsecond // 1000


def parse_iso(text):
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        raise ValueError("naive timestamp")
    return dt.astimezone(UTC)


def cents(text):
    neg = text.startswith("-")
    body = text[1:] if neg else text
    whole, _, frac = body.partition(".")
    if not whole.isdigit() or len(frac) > 2 or (frac and not frac.isdigit()):
        raise ValueError(text)
    c = int(whole) * 100 + int((frac + "00")[:2])
    return -c if neg else c


class Event:
    __slots__ = ("id", "ts", "patient", "encounter", "dept", "type", "amount", "klass")

    def __init__(self, **kw):
        for k in self.__slots__:
            setattr(self, k, kw.get(k))


def read_sources(data):
    events = {}
    patients = {}

    def put(ev):
        events[ev.id] = ev

    with open(os.path.join(data, "adt.csv"), newline="") as f:
        for row in csv.DictReader(f):
            try:
                key, patient, tipo = val(row, "id_registro"), val(row, "paciente"), val(row, "tipo")
                ts = datetime.strptime(val(row, "data"), "%d/%m/%Y %H:%M").replace(tzinfo=UTC)
                if not key or not patient or tipo not in ADT_TYPES:
                    continue
                birth = val(row, "nascimento")
                born = datetime.strptime(birth, "%d/%m/%Y").date() if birth else None
            except (TypeError, ValueError):
                continue
            put(Event(id=event_id("adt", key), ts=ts, patient=patient, encounter=val(row, "atendimento"),
                      dept=val(row, "setor"), type=ADT_TYPES[tipo]))
            if born:
                patients[patient] = (val(row, "sexo") if val(row, "sexo") in ("F", "M") else "U", born)

    for line in open(os.path.join(data, "billing.jsonl")):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            key, patient, kind = val(row, "txn_id"), val(row, "patient_ref"), val(row, "entry_type")
            ts = datetime.fromtimestamp(int(val(row, "posted_at")), UTC)
            if not key or not patient or kind not in BILLING_TYPES:
                continue
            amount = cents(val(row, "valor"))
        except (TypeError, ValueError):
            continue
        put(Event(id=event_id("billing", key), ts=ts, patient=patient, encounter=val(row, "account_no"),
                  dept=val(row, "cost_center"), type=BILLING_TYPES[kind], amount=amount))

    for line in open(os.path.join(data, "clinical.jsonl")):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            key, patient, cat = val(row, "obs_id"), val(row, "subject"), val(row, "category")
            ts = parse_iso(val(row, "recorded"))
            if not key or not patient or cat not in CLINICAL_TYPES:
                continue
        except (TypeError, ValueError):
            continue
        put(Event(id=event_id("clinical", key), ts=ts, patient=patient, encounter=val(row, "visit"),
                  dept=val(row, "unit"), type=CLINICAL_TYPES[cat], klass=val(row, "class")))
    return list(events.values()), patients


class Episode:
    def __init__(self, patient, members, admission, discharge, inpatient, dept_event=None):
        self.patient = patient
        self.members = sorted(members, key=lambda e: (e.ts, e.id))
        self.admission = admission
        self.discharge = discharge
        self.inpatient = inpatient
        source = [dept_event] if dept_event and dept_event.dept else []
        source += [e for e in self.members if e.dept]
        self.dept = source[0].dept if source else None


def link_patient(patient, evs, grace, gap):
    evs = sorted(evs, key=lambda e: (e.ts, e.id))
    groups = {}
    for e in evs:
        if e.encounter:
            groups.setdefault(e.encounter, []).append(e)
    anchors = []
    for key, members in groups.items():
        adms = [e for e in members if e.type == "ADMISSION"]
        if adms:
            anchors.append({"adm": adms[0], "group": members})
    for e in evs:
        if not e.encounter and e.type == "ADMISSION":
            anchors.append({"adm": e, "group": None})
    anchors.sort(key=lambda a: (a["adm"].ts, a["adm"].id))

    for i, a in enumerate(anchors):
        adm = a["adm"].ts
        nxt = anchors[i + 1]["adm"].ts if i + 1 < len(anchors) else None
        if a["group"] is not None:
            ds = [e.ts for e in a["group"] if e.type == "DISCHARGE" and e.ts >= adm]
            d = max(ds) if ds else None
        else:
            ds = [e.ts for e in evs if not e.encounter and e.type == "DISCHARGE"
                  and adm <= e.ts and (nxt is None or e.ts < nxt)]
            d = ds[0] if ds else None
        if d is not None:
            end, excl = d + grace, False
            if nxt is not None and nxt <= end:
                end, excl = nxt, True
        elif nxt is not None:
            d, end, excl = nxt, nxt, True
        else:
            end, excl = None, False
        a.update(discharge=d, end=end, excl=excl,
                 members=list(a["group"]) if a["group"] is not None else [a["adm"]])

    def covers(a, t):
        if t < a["adm"].ts:
            return False
        if a["end"] is None:
            return True
        return t < a["end"] if a["excl"] else t <= a["end"]

    loose = []
    for e in evs:
        if e.encounter or e.type == "ADMISSION":
            continue
        home = next((a for a in anchors if covers(a, e.ts)), None)
        if home is None:
            loose.append(e)
        else:
            home["members"].append(e)

    out = [Episode(patient, a["members"], a["adm"].ts, a["discharge"], True, a["adm"]) for a in anchors]
    for members in groups.values():
        if not any(e.type == "ADMISSION" for e in members):
            out.append(Episode(patient, members, members[0].ts, members[-1].ts, False))
    chain = []
    for e in loose:
        if chain and e.ts - chain[-1].ts > gap:
            out.append(Episode(patient, chain, chain[0].ts, chain[-1].ts, False))
            chain = []
        chain.append(e)
    if chain:
        out.append(Episode(patient, chain, chain[0].ts, chain[-1].ts, False))
    return out


def link(events, grace, gap):
    by_patient = {}
    for e in events:
        by_patient.setdefault(e.patient, []).append(e)
    eps = []
    for p in sorted(by_patient):
        eps += link_patient(p, by_patient[p], grace, gap)
    return eps


def boundaries(start, end, bucket):
    starts = [start]
    day = datetime(start.year, start.month, start.day, tzinfo=UTC) + timedelta(days=1)
    while day < end:
        if bucket == "DAY" or (bucket == "WEEK" and day.weekday() == 0) or (bucket == "MONTH" and day.day == 1):
            starts.append(day)
        day += timedelta(days=1)
    return [(s, starts[i + 1] if i + 1 < len(starts) else end) for i, s in enumerate(starts)]


def age_band(born, at):
    d = at.date()
    age = d.year - born.year - ((d.month, d.day) < (born.month, born.day))
    for hi, name in ((18, "0-17"), (40, "18-39"), (60, "40-59"), (80, "60-79")):
        if age < hi:
            return name
    return "80+"


def contributions(kpi, eps, bounds, admissions, data_end, classes):
    """(bucket index, episode, number) triples for one KPI and bucket grid."""
    starts = [b[0] for b in bounds]

    def slot(t):
        i = bisect.bisect_right(starts, t) - 1
        return i if i >= 0 and t < bounds[i][1] else None

    out = []
    for ep in eps:
        d = ep.discharge
        here = slot(d) if d is not None else None
        if kpi == "OCCUPANCY_RATE" and ep.inpatient:
            for i, (bs, be) in enumerate(bounds):
                lo = max(ep.admission, bs)
                hi = min(d if d is not None else be, be)
                if hi > lo:
                    out.append((i, ep, float(ms(hi) - ms(lo))))
        elif kpi == "AVG_LOS" and ep.inpatient and here is not None:
            out.append((here, ep, (ms(d) - ms(ep.admission)) / MS_DAY))
        elif kpi == "MORTALITY_RATE" and ep.inpatient and here is not None:
            out.append((here, ep, 1.0 if any(e.type == "DEATH" for e in ep.members) else 0.0))
        elif kpi == "READMISSION_30D" and ep.inpatient and here is not None:
            limit = d + timedelta(days=30)
            if data_end is not None and limit <= data_end:
                back = any(d < t <= limit for t in admissions.get(ep.patient, []))
                out.append((here, ep, 1.0 if back else 0.0))
        elif kpi == "CONTRIBUTION_MARGIN" and here is not None:
            net = sum(e.amount if e.type == "BILLING_CHARGE" else -e.amount
                      for e in ep.members if e.type in ("BILLING_CHARGE", "COST_ENTRY"))
            out.append((here, ep, float(net)))
        elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
            flag = next((e for e in ep.members if e.type == "SEPSIS_FLAG"), None)
            if flag is None or slot(flag.ts) is None:
                continue
            dose = next((e for e in ep.members if e.type == "MEDICATION_ADMIN"
                         and e.klass in classes and e.ts >= flag.ts), None)
            if dose is not None:
                out.append((slot(flag.ts), ep, (ms(dose.ts) - ms(flag.ts)) / 60_000))
        elif kpi in ("ADMISSION_COUNT", "REVENUE", "COSTS"):
            want = {"ADMISSION_COUNT": "ADMISSION", "REVENUE": "BILLING_CHARGE", "COSTS": "COST_ENTRY"}[kpi]
            for e in ep.members:
                i = slot(e.ts) if e.type == want else None
                if i is not None:
                    out.append((i, ep, 1.0 if kpi == "ADMISSION_COUNT" else float(e.amount)))
    return out


def reduce(kpi, xs, capacity, bucket_ms):
    if not xs:
        return {"value": 0.0 if kpi in ZERO_WHEN_EMPTY else None, "n": 0}
    total = sum(xs)
    if kpi == "OCCUPANCY_RATE":
        v = total / (capacity * bucket_ms)
    elif kpi == "ADMISSION_COUNT":
        v = total
    elif kpi in ("REVENUE", "COSTS"):
        v = total / 100
    elif kpi == "CONTRIBUTION_MARGIN":
        v = total / 100 / len(xs)
    elif kpi == "SEPSIS_DOOR_TO_ANTIBIOTIC":
        v = float(statistics.median(xs))
    else:
        v = total / len(xs)
    return {"value": v, "n": len(xs)}


def iso(dt):
    return dt.strftime("%Y-%m-%dT%H:%M:%SZ")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("data")
    ap.add_argument("--from", dest="start", required=True)
    ap.add_argument("--to", dest="end", required=True)
    ap.add_argument("--capacity", type=int, default=40)
    ap.add_argument("--antibiotic", action="append", default=None)
    ap.add_argument("--grace-hours", type=float, default=72)
    ap.add_argument("--gap-hours", type=float, default=24)
    args = ap.parse_args()
    start, end = parse_iso(args.start), parse_iso(args.end)
    classes = set(args.antibiotic or ["antibiotic"])

    events, patients = read_sources(args.data)
    eps = link(events, timedelta(hours=args.grace_hours), timedelta(hours=args.gap_hours))
    data_end = max((e.ts for e in events), default=None)
    admissions = {}
    for e in events:
        if e.type == "ADMISSION":
            admissions.setdefault(e.patient, []).append(e.ts)

    def key(ep, fields):
        if not fields:
            return "all"
        p = patients.get(ep.patient)
        parts = []
        for f in fields:
            if f == "gender":
                v = p[0] if p else "unknown"
            elif f == "age_band":
                v = age_band(p[1], ep.admission) if p else "unknown"
            else:
                v = ep.dept or "unknown"
            parts.append(f"{f}={v}")
        return "|".join(parts)

    series = []
    for kpi in KPIS:
        for bucket in ("DAY", "WEEK", "MONTH"):
            bounds = boundaries(start, end, bucket)
            contrib = contributions(kpi, eps, bounds, admissions, data_end, classes)
            for mask in range(8):
                fields = [f for i, f in enumerate(FIELDS) if mask >> i & 1]
                cells = [dict() for _ in bounds]
                totals = [[] for _ in bounds]
                for i, ep, x in contrib:
                    totals[i].append(x)
                    cells[i].setdefault(key(ep, fields), []).append(x)
                rows = []
                for i, (bs, be) in enumerate(bounds):
                    bms = ms(be) - ms(bs)
                    total = reduce(kpi, totals[i], args.capacity, bms)
                    strata = {k: reduce(kpi, xs, args.capacity, bms) for k, xs in cells[i].items()}
                    if not fields:
                        strata["all"] = total
                    rows.append({"bucket_start": iso(bs), "bucket_end": iso(be),
                                 "value": total["value"], "n": total["n"], "strata": strata})
                series.append({"kpi": kpi, "bucket": bucket, "group_by": fields, "buckets": rows})

    episodes = sorted(({"patient_id": ep.patient, "event_ids": sorted(e.id for e in ep.members)} for ep in eps),
                      key=lambda x: x["event_ids"])
    json.dump({"data_end": iso(data_end) if data_end else None, "episodes": episodes, "series": series},
              sys.stdout, sort_keys=True)


if __name__ == "__main__":
    main()
