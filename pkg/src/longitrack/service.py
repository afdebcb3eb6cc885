"""HTTP service for the verified-tracking loop.

Read-only over the dataset; the only mutable state is per-(case, lesion)
SessionState, which moves strictly forward through
proposed -> verified -> segmented. Segmentations cross the wire run-length
encoded along x (runs never cross an x-row) with a header carrying the VOI
shape and its offset in full-volume coordinates::

    {"schema": 1, "volume_shape": [Z,Y,X], "voi_shape": [z,y,x],
     "voi_start": [z0,y0,x0], "runs": [[flat_start, length], ...]}

Endpoints (JSON unless noted):

    GET  /cases
    GET  /cases/{id}
    GET  /cases/{id}/slice?tp=&axis=&index=&window=&level=
    GET  /cases/{id}/lesions/{lid}/proposal
    POST /cases/{id}/lesions/{lid}/verify      body {"point": [z,y,x]} or {}
    GET  /cases/{id}/lesions/{lid}/segmentation
"""

from __future__ import annotations

import base64
import io
import threading
from dataclasses import dataclass
from typing import Optional

import numpy as np
from fastapi import Body, FastAPI, HTTPException, Query
from PIL import Image

from .core import LongitudinalCase, PromptPoint, Role
from .errors import OutOfBounds
from .estimator import LongitudinalSegmenter
from .harness import RegistrationSpec, case_registration
from .registration import RegistrationResult, propose_followup_prompt
from .validation import check_point_in_bounds

RLE_SCHEMA = 1


def rle_encode(mask: np.ndarray, volume_shape, voi_start) -> dict:
    """Run-length encode a boolean VOI mask along x (runs never cross rows)."""
    mask = np.asarray(mask, dtype=bool)
    rows = mask.reshape(-1, mask.shape[-1])
    padded = np.zeros((rows.shape[0], rows.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = rows
    diffs = np.diff(padded, axis=1)
    rows_s, cols_s = np.nonzero(diffs == 1)
    rows_e, cols_e = np.nonzero(diffs == -1)
    # row-major nonzero order pairs every run start with its end
    starts = rows_s * mask.shape[-1] + cols_s
    lengths = cols_e - cols_s
    return {
        "schema": RLE_SCHEMA,
        "volume_shape": [int(v) for v in volume_shape],
        "voi_shape": [int(v) for v in mask.shape],
        "voi_start": [int(v) for v in voi_start],
        "runs": [[int(s), int(n)] for s, n in zip(starts, lengths)],
    }


def rle_decode(payload: dict) -> np.ndarray:
    """Exact inverse of :func:`rle_encode` (the dense VOI mask)."""
    if payload.get("schema") != RLE_SCHEMA:
        raise ValueError(f"unsupported RLE schema {payload.get('schema')}")
    shape = tuple(payload["voi_shape"])
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for start, length in payload["runs"]:
        flat[start:start + length] = True
    return flat.reshape(shape)


def rle_to_volume(payload: dict) -> np.ndarray:
    """Place the VOI mask into full-volume coordinates (clipping padding)."""
    voi = rle_decode(payload)
    vol = np.zeros(tuple(payload["volume_shape"]), dtype=bool)
    start = np.asarray(payload["voi_start"])
    lo = np.maximum(start, 0)
    hi = np.minimum(start + np.asarray(voi.shape), vol.shape)
    if np.all(hi > lo):
        src_lo = lo - start
        src_hi = hi - start
        vol[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = \
            voi[src_lo[0]:src_hi[0], src_lo[1]:src_hi[1], src_lo[2]:src_hi[2]]
    return vol


@dataclass
class SessionState:
    case_id: str
    lesion_id: int
    proposed: PromptPoint
    verified: Optional[PromptPoint] = None
    segmentation: Optional[dict] = None  # RLE payload
    status: str = "proposed"

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "lesion_id": self.lesion_id,
            "proposed": list(self.proposed.coord),
            "verified": list(self.verified.coord) if self.verified else None,
            "status": self.status,
        }


_AXES = {"z": 0, "y": 1, "x": 2}


def _slice_2d(data: np.ndarray, axis: int, index: int) -> np.ndarray:
    if axis == 0:
        return data[index]
    if axis == 1:
        return data[:, index]
    return data[:, :, index]


def _point_to_pane(coord, axis: int) -> tuple[int, int, int]:
    """(along-axis coordinate, row, col) of a voxel for a given slicing axis."""
    z, y, x = coord
    if axis == 0:
        return z, y, x
    if axis == 1:
        return y, z, x
    return x, z, y


def _contour_2d(mask2d: np.ndarray) -> list[list[int]]:
    """Boundary pixels (4-connectivity) of a 2D mask."""
    if not mask2d.any():
        return []
    from scipy import ndimage as ndi

    interior = ndi.binary_erosion(mask2d, structure=ndi.generate_binary_structure(2, 1),
                                  border_value=0)
    edge = mask2d & ~interior
    return [[int(r), int(c)] for r, c in np.argwhere(edge)]


class TrackingService:
    """Owns the dataset, the model, and all sessions."""

    def __init__(self, cases: list[LongitudinalCase],
                 estimator: Optional[LongitudinalSegmenter] = None,
                 reg_spec: RegistrationSpec = RegistrationSpec()):
        self.cases = {c.case_id: c for c in sorted(cases, key=lambda c: c.case_id)}
        self.estimator = estimator
        self.reg_spec = reg_spec
        self.sessions: dict[tuple[str, int], SessionState] = {}
        self._registrations: dict[str, RegistrationResult] = {}
        self._window_defaults: dict[tuple[str, str], tuple[float, float]] = {}
        self._infer_lock = threading.Lock()
        self._session_lock = threading.Lock()
        self._warmup()

    def _warmup(self):
        """One dummy forward at startup keeps first-request latency flat."""
        model = getattr(self.estimator, "model_", None)
        if model is None:
            return
        from .core import Volume
        from .net import forward as net_forward

        size = model.config.voi_size
        dummy = Volume(np.zeros(size, dtype=np.float32))
        center = PromptPoint(tuple(s // 2 for s in size))
        net_forward(model, dummy, center, dummy, center)

    # -- helpers -------------------------------------------------------------

    def case(self, case_id: str) -> LongitudinalCase:
        case = self.cases.get(case_id)
        if case is None:
            raise HTTPException(404, f"unknown case '{case_id}'")
        return case

    def registration(self, case: LongitudinalCase) -> RegistrationResult:
        reg = self._registrations.get(case.case_id)
        if reg is None:
            reg = case_registration(case, self.reg_spec)
            self._registrations[case.case_id] = reg
        return reg

    def session(self, case_id: str, lesion_id: int) -> SessionState:
        case = self.case(case_id)
        if lesion_id not in case.baseline_prompts:
            raise HTTPException(404, f"case '{case_id}' has no lesion {lesion_id} at baseline")
        key = (case_id, lesion_id)
        with self._session_lock:
            state = self.sessions.get(key)
            if state is None:
                proposal = propose_followup_prompt(case, lesion_id, self.registration(case))
                state = SessionState(case_id, lesion_id, proposal)
                self.sessions[key] = state
        return state

    def window_default(self, case_id: str, timepoint: str, data: np.ndarray) -> tuple[float, float]:
        key = (case_id, timepoint)
        if key not in self._window_defaults:
            lo, hi = np.percentile(data, [1.0, 99.0])
            self._window_defaults[key] = (float(hi - lo), float((hi + lo) / 2.0))
        return self._window_defaults[key]

    def segmentation_volume(self, state: SessionState) -> np.ndarray:
        return rle_to_volume(state.segmentation)

    # -- operations ----------------------------------------------------------

    def list_cases(self) -> list[dict]:
        out = []
        for case_id, case in self.cases.items():
            lesions = sorted(case.baseline_prompts)
            out.append({
                "case_id": case_id,
                "kind": case.kind,
                "timepoints": ["baseline", "followup"],
                "shape": list(case.followup[0].shape),
                "lesion_count": len(lesions),
                "lesion_ids": lesions,
                "sessions": {str(lid): self.sessions[(case_id, lid)].status
                             if (case_id, lid) in self.sessions else "proposed"
                             for lid in lesions},
            })
        return out

    def verify(self, case_id: str, lesion_id: int, point: Optional[list[int]]) -> SessionState:
        if self.estimator is None:
            raise HTTPException(503, "no model loaded; start the server with --model")
        case = self.case(case_id)
        state = self.session(case_id, lesion_id)
        if state.status == "segmented":
            raise HTTPException(409, f"lesion {lesion_id} of '{case_id}' is already segmented")
        if point is None:
            verified = PromptPoint(state.proposed.coord, Role.VERIFIED, lesion_id)
        else:
            try:
                coord = check_point_in_bounds(point, case.followup[0].shape, "verified point")
            except (OutOfBounds, ValueError) as exc:
                raise HTTPException(400, str(exc)) from exc
            verified = PromptPoint(coord, Role.VERIFIED, lesion_id)
        with self._infer_lock:
            probs, start = self.estimator.predict_proba_voi(case, lesion_id, verified)
            voi_mask = probs >= self.estimator.threshold
        state.verified = verified
        state.segmentation = rle_encode(voi_mask, case.followup[0].shape, start)
        state.status = "segmented"
        return state


def create_app(cases: list[LongitudinalCase],
               estimator: Optional[LongitudinalSegmenter] = None,
               reg_spec: RegistrationSpec = RegistrationSpec()) -> FastAPI:
    service = TrackingService(cases, estimator, reg_spec)
    app = FastAPI(title="longitrack", version="1")
    app.state.service = service

    @app.get("/cases")
    def list_cases():
        return service.list_cases()

    @app.get("/cases/{case_id}")
    def case_detail(case_id: str):
        case = service.case(case_id)
        return {
            "case_id": case_id,
            "kind": case.kind,
            "shape": list(case.followup[0].shape),
            "spacing": list(case.followup[0].spacing),
            "lesion_ids": sorted(case.baseline_prompts),
            "baseline_prompts": {str(lid): list(p.coord)
                                 for lid, p in sorted(case.baseline_prompts.items())},
            "sessions": {str(lid): service.sessions[(case_id, lid)].to_dict()
                         for lid in sorted(case.baseline_prompts)
                         if (case_id, lid) in service.sessions},
        }

    @app.get("/cases/{case_id}/slice")
    def get_slice(case_id: str,
                  tp: str = Query("followup"),
                  axis: str = Query("z"),
                  index: int = Query(...),
                  window: Optional[float] = Query(None),
                  level: Optional[float] = Query(None)):
        case = service.case(case_id)
        if tp not in ("baseline", "followup"):
            raise HTTPException(400, f"tp must be 'baseline' or 'followup', got '{tp}'")
        if axis not in _AXES:
            raise HTTPException(400, f"axis must be one of z/y/x, got '{axis}'")
        volume = case.baseline[0] if tp == "baseline" else case.followup[0]
        ax = _AXES[axis]
        if not 0 <= index < volume.shape[ax]:
            raise HTTPException(404, f"slice index {index} out of range for axis {axis} "
                                     f"(extent {volume.shape[ax]})")
        default_w, default_l = service.window_default(case_id, tp, volume.data)
        w = default_w if window is None else float(window)
        lvl = default_l if level is None else float(level)
        plane = _slice_2d(volume.data, ax, index).astype(np.float64)
        if w <= 0:
            rendered = np.full(plane.shape, 128, dtype=np.uint8)
        else:
            rendered = np.clip((plane - (lvl - w / 2.0)) / w, 0.0, 1.0)
            rendered = (rendered * 255.0).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(rendered, mode="L").save(buf, format="PNG")

        points = []
        for lid in sorted(case.baseline_prompts):
            candidates: list[tuple[str, PromptPoint]] = []
            if tp == "baseline":
                candidates.append(("baseline", case.baseline_prompts[lid]))
            else:
                state = service.sessions.get((case_id, lid))
                if state is not None:
                    candidates.append(("proposed", state.proposed))
                    if state.verified is not None:
                        candidates.append(("verified", state.verified))
            for kind, p in candidates:
                along, row, col = _point_to_pane(p.coord, ax)
                if abs(along - index) <= 2:
                    points.append({"kind": kind, "lesion_id": lid, "row": row, "col": col,
                                   "slice_offset": along - index})

        contours = []
        if tp == "followup":
            for lid in sorted(case.baseline_prompts):
                state = service.sessions.get((case_id, lid))
                if state is not None and state.status == "segmented":
                    mask = service.segmentation_volume(state)
                    plane_mask = _slice_2d(mask, ax, index)
                    pts = _contour_2d(plane_mask)
                    if pts:
                        contours.append({"lesion_id": lid, "points": pts})

        return {
            "case_id": case_id, "tp": tp, "axis": axis, "index": index,
            "window": w, "level": lvl,
            "height": int(rendered.shape[0]), "width": int(rendered.shape[1]),
            "png": base64.b64encode(buf.getvalue()).decode("ascii"),
            "overlays": {"points": points, "contours": contours},
        }

    @app.get("/cases/{case_id}/lesions/{lesion_id}/proposal")
    def get_proposal(case_id: str, lesion_id: int):
        state = service.session(case_id, lesion_id)
        return {"case_id": case_id, "lesion_id": lesion_id,
                "point": list(state.proposed.coord), "role": "proposed",
                "status": state.status}

    @app.post("/cases/{case_id}/lesions/{lesion_id}/verify")
    def verify(case_id: str, lesion_id: int, body: dict = Body(default={})):
        point = body.get("point") if isinstance(body, dict) else None
        if point is not None and (not isinstance(point, (list, tuple)) or len(point) != 3):
            raise HTTPException(400, "body must be {} or {\"point\": [z, y, x]}")
        state = service.verify(case_id, lesion_id, point)
        payload = state.to_dict()
        payload["segmentation"] = state.segmentation
        return payload

    @app.get("/cases/{case_id}/lesions/{lesion_id}/segmentation")
    def segmentation(case_id: str, lesion_id: int):
        service.case(case_id)
        state = service.sessions.get((case_id, lesion_id))
        if state is None or state.status != "segmented":
            raise HTTPException(404, f"lesion {lesion_id} of '{case_id}' has no segmentation yet")
        payload = state.to_dict()
        payload["segmentation"] = state.segmentation
        return payload

    return app
