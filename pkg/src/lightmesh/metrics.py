"""Metrics derived purely from an event trace.

Everything here recomputes from trace records alone, so a summary
produced during a live run and one recomputed from the saved trace file
are identical by construction.  Flow survival is decided by scanning the
destination host's light transitions against the flow's timeout budget.
"""

from __future__ import annotations

from .sim import TraceRecord, parse_trace_line

COUNTERS = {
    "requests": "request-received",
    "commits": "path-committed",
    "rollbacks": "path-rolled-back",
    "rejects": "request-rejected",
    "reroutes": "reroute-done",
    "reroute_failures": "reroute-failed",
    "teardowns": "path-torn-down",
    "path_lease_expiries": "path-lease-expired",
    "service_lease_expiries": "lease-expired",
    "sends": "send",
    "delivers": "deliver",
    "drops": "drop",
    "undeliverable": "undeliverable",
}


def detail_fields(detail: str) -> dict[str, str]:
    out = {}
    for token in detail.split():
        if "=" in token:
            k, _, v = token.partition("=")
            out[k] = v
    return out


def load_trace(path: str) -> list[TraceRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return [parse_trace_line(line) for line in fh if line.strip()]


def compute_metrics(records: list[TraceRecord]) -> dict[str, object]:
    end_time = records[-1].time if records else 0
    metrics: dict[str, object] = {"trace_end_ms": end_time}
    counts = {key: 0 for key in COUNTERS}
    by_kind = {kind: key for key, kind in COUNTERS.items()}

    request_times: dict[str, int] = {}
    commit_times: dict[str, int] = {}
    commit_reqs: dict[str, str] = {}
    reroute_counts: dict[str, int] = {}
    flow_attach: dict[str, dict] = {}
    host_events: dict[str, list[tuple[int, bool]]] = {}

    for rec in records:
        key = by_kind.get(rec.kind)
        if key is not None:
            counts[key] += 1
        if rec.kind == "request-received":
            f = detail_fields(rec.detail)
            request_times[f["req"]] = rec.time
        elif rec.kind == "path-committed":
            f = detail_fields(rec.detail)
            commit_times[f["path"]] = rec.time
            commit_reqs[f["path"]] = f.get("req", "")
        elif rec.kind == "reroute-done":
            f = detail_fields(rec.detail)
            reroute_counts[f["path"]] = reroute_counts.get(f["path"], 0) + 1
        elif rec.kind == "flow-attach":
            f = detail_fields(rec.detail)
            flow_attach[f["path"]] = {
                "flow": f["flow"], "host": rec.node, "at": rec.time,
                "budget": int(f["budget"]), "lit": f.get("lit", "1") == "1"}
        elif rec.kind in ("host-lit", "host-dark"):
            host_events.setdefault(rec.node, []).append(
                (rec.time, rec.kind == "host-lit"))

    metrics.update(counts)

    for path, t in sorted(commit_times.items()):
        req = commit_reqs.get(path, "")
        if req in request_times:
            metrics[f"setup_ms.{path}"] = t - request_times[req]
        metrics[f"setup_depth.{path}"] = _setup_depth(records, path, t)

    for path, n in sorted(reroute_counts.items()):
        metrics[f"path_reroutes.{path}"] = n

    for path in sorted(flow_attach):
        info = flow_attach[path]
        intervals = _dark_intervals(info, host_events.get(info["host"], ()),
                                    end_time)
        max_dark = max((e - s for s, e in intervals), default=0)
        alive = all(e - s <= info["budget"] for s, e in intervals)
        flow = info["flow"]
        metrics[f"flow_alive.{flow}"] = "true" if alive else "false"
        metrics[f"flow_max_dark_ms.{flow}"] = max_dark
        metrics[f"flow_dark_intervals.{flow}"] = len(intervals)
        for k, (s, e) in enumerate(intervals, start=1):
            metrics[f"flow_dark_ms.{flow}.{k}"] = e - s

    metrics["flows_alive"] = sum(
        1 for k, v in metrics.items()
        if k.startswith("flow_alive.") and v == "true")
    metrics["flows_dead"] = sum(
        1 for k, v in metrics.items()
        if k.startswith("flow_alive.") and v == "false")
    return metrics


def _setup_depth(records: list[TraceRecord], path: str, commit_time: int) -> int:
    """Longest send->deliver chain within the setup window: fan-out requests
    count one stage, fan-in acks a second, regardless of hop count."""
    saw_request = False
    saw_ack = False
    needle_req = f"type=XConnRequest path={path} "
    needle_ack = f"type=XConnAck path={path} "
    for rec in records:
        if rec.time > commit_time:
            break
        if rec.kind != "deliver":
            continue
        if needle_req in rec.detail + " ":
            saw_request = True
        elif needle_ack in rec.detail + " " and "purpose=setup" in rec.detail:
            saw_ack = True
    return int(saw_request) + int(saw_ack)


def _dark_intervals(info: dict, events, end_time: int) -> list[tuple[int, int]]:
    intervals = []
    dark_since = None if info["lit"] else info["at"]
    for t, lit in events:
        if t < info["at"]:
            continue
        if lit and dark_since is not None:
            intervals.append((dark_since, t))
            dark_since = None
        elif not lit and dark_since is None:
            dark_since = t
    if dark_since is not None and end_time > dark_since:
        intervals.append((dark_since, end_time))
    return intervals


def render_metrics(metrics: dict[str, object]) -> str:
    return "".join(f"{k}={metrics[k]}\n" for k in sorted(metrics))
