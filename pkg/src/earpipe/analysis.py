"""Group-level analysis: join band-power tables with questionnaire
scores, then run the workload/flow regressions and condition contrasts.

Scores are standardized within participant before regression so that
between-person offsets in rating style or absolute band power do not
masquerade as effects. Rest conditions (eyes open/closed) are excluded
from the workload and flow models by default but kept in the condition
contrasts, where they are the point of comparison.
"""

from __future__ import annotations

import numpy as np

from .spectral import BandPowerRow
from .stats import (
    SurveyResponse,
    aggregate_survey,
    fit_linear,
    fit_quadratic_orthogonal,
    pairwise_contrasts,
    z_standardize,
)

TLX_COLUMNS = tuple(f"tlx_{i}" for i in range(1, 7))
FLOW_COLUMNS = tuple(f"flow_{i}" for i in range(1, 4))


def read_scores(path, default_participant: str = "P01") -> dict:
    """Read questionnaire scores keyed by (participant, condition).

    Two layouts are accepted, detected from the header: raw item
    responses (tlx_1..tlx_6, flow_1..flow_3) which are aggregated here,
    or pre-aggregated columns (tlx_total, flow_mean). Repeated rows for
    the same participant and condition are averaged.
    """
    with open(path, newline="") as fh:
        header = [h.strip() for h in fh.readline().strip().split(",")]
        if "condition" not in header:
            raise ValueError(f"{path}: scores need a 'condition' column")
        raw_items = all(c in header for c in TLX_COLUMNS + FLOW_COLUMNS)
        aggregated = "tlx_total" in header and "flow_mean" in header
        if not raw_items and not aggregated:
            raise ValueError(
                f"{path}: expected either item columns "
                f"({', '.join(TLX_COLUMNS + FLOW_COLUMNS)}) or tlx_total,flow_mean"
            )
        col = {name: i for i, name in enumerate(header)}
        sums: dict[tuple, list] = {}
        for line_no, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != len(header):
                raise ValueError(f"{path}:{line_no}: expected {len(header)} fields")
            participant = parts[col["participant"]] if "participant" in col else default_participant
            condition = parts[col["condition"]]
            try:
                if raw_items:
                    resp = SurveyResponse(
                        nasa_tlx=tuple(float(parts[col[c]]) for c in TLX_COLUMNS),
                        flow=tuple(float(parts[col[c]]) for c in FLOW_COLUMNS),
                    )
                    tlx, flow = aggregate_survey(resp)
                else:
                    tlx = float(parts[col["tlx_total"]])
                    flow = float(parts[col["flow_mean"]])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: {exc}") from None
            sums.setdefault((participant, condition), []).append((tlx, flow))
    return {
        key: (
            float(np.mean([t for t, _ in vals])),
            float(np.mean([f for _, f in vals])),
        )
        for key, vals in sums.items()
    }


def pool_channels(rows: list[BandPowerRow]) -> dict:
    """Mean band power across channels per (participant, condition, band)."""
    cells: dict[tuple, list] = {}
    for r in rows:
        cells.setdefault((r.participant, r.condition, r.band), []).append(r.power_db)
    return {key: float(np.mean(vals)) for key, vals in cells.items()}


def _band_names(rows: list[BandPowerRow]) -> list[str]:
    seen: list[str] = []
    for r in rows:
        if r.band not in seen:
            seen.append(r.band)
    return seen


def _joined_arrays(pooled: dict, scores: dict, band: str, exclude: tuple):
    participants: list[str] = []
    power: list[float] = []
    tlx: list[float] = []
    flow: list[float] = []
    for (p, c, b), value in sorted(pooled.items()):
        if b != band or c in exclude or (p, c) not in scores:
            continue
        participants.append(p)
        power.append(value)
        t, f = scores[(p, c)]
        tlx.append(t)
        flow.append(f)
    return participants, np.array(power), np.array(tlx), np.array(flow)


def _fit_or_reason(fit_fn, *args) -> dict:
    try:
        return {"status": "ok", **fit_fn(*args).to_dict()}
    except ValueError as exc:
        return {"status": "not_computed", "reason": str(exc)}


def band_score_models(rows: list[BandPowerRow], scores: dict, exclude: tuple = ()) -> dict:
    """Per band: linear workload model and quadratic flow model on
    within-participant z scores."""
    pooled = pool_channels(rows)
    out: dict = {"workload_linear": {}, "flow_quadratic": {}}
    for band in _band_names(rows):
        participants, power, tlx, flow = _joined_arrays(pooled, scores, band, exclude)
        if len(power) < 3:
            why = f"only {len(power)} joined observations"
            out["workload_linear"][band] = {"status": "not_computed", "reason": why}
            out["flow_quadratic"][band] = {"status": "not_computed", "reason": why}
            continue
        try:
            pz = z_standardize(power, participants)
            tz = z_standardize(tlx, participants)
            fz = z_standardize(flow, participants)
        except ValueError as exc:
            why = str(exc)
            out["workload_linear"][band] = {"status": "not_computed", "reason": why}
            out["flow_quadratic"][band] = {"status": "not_computed", "reason": why}
            continue
        out["workload_linear"][band] = _fit_or_reason(fit_linear, pz, tz)
        out["flow_quadratic"][band] = _fit_or_reason(fit_quadratic_orthogonal, pz, fz)
    return out


def band_condition_contrasts(rows: list[BandPowerRow]) -> dict:
    """Per band: omnibus F plus Bonferroni-adjusted pairwise paired t-tests
    across conditions (all conditions, rest included)."""
    pooled_rows: dict[tuple, list] = {}
    for r in rows:
        pooled_rows.setdefault((r.participant, r.condition, r.band), []).append(r.power_db)
    out: dict = {}
    for band in _band_names(rows):
        cells = {
            (p, c): vals
            for (p, c, b), vals in pooled_rows.items()
            if b == band
        }
        try:
            out[band] = {"status": "ok", **pairwise_contrasts(cells).to_dict()}
        except ValueError as exc:
            out[band] = {"status": "not_computed", "reason": str(exc)}
    return out


def analyze_tables(rows: list[BandPowerRow], scores: dict | None, exclude: tuple = ()) -> dict:
    payload: dict = {
        "n_rows": len(rows),
        "bands": _band_names(rows),
        "excluded_conditions": list(exclude),
        "contrasts": band_condition_contrasts(rows),
    }
    if scores:
        payload.update(band_score_models(rows, scores, exclude))
    else:
        payload["workload_linear"] = {"status": "not_computed", "reason": "no scores supplied"}
        payload["flow_quadratic"] = {"status": "not_computed", "reason": "no scores supplied"}
    return payload


def session_regressions(cfg, band_rows: list[BandPowerRow]) -> dict:
    """Single-session regression report for the run pipeline."""
    scores = read_scores(cfg.surveys, default_participant=cfg.participant)
    result = band_score_models(band_rows, scores, exclude=cfg.exclude_conditions)
    return {"status": "ok", "excluded_conditions": list(cfg.exclude_conditions), **result}
