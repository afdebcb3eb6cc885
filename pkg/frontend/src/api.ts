/** Typed client for the longitrack HTTP API. */

export type Axis = 'z' | 'y' | 'x';
export type Timepoint = 'baseline' | 'followup';
export type Voxel = [number, number, number];

export interface CaseSummary {
  case_id: string;
  kind: string;
  shape: Voxel;
  lesion_count: number;
  lesion_ids: number[];
  sessions: Record<string, string>;
}

export interface CaseDetail {
  case_id: string;
  kind: string;
  shape: Voxel;
  spacing: [number, number, number];
  lesion_ids: number[];
  baseline_prompts: Record<string, Voxel>;
}

export interface OverlayPoint {
  kind: 'baseline' | 'proposed' | 'verified';
  lesion_id: number;
  row: number;
  col: number;
  slice_offset: number;
}

export interface OverlayContour {
  lesion_id: number;
  points: Array<[number, number]>;
}

export interface SlicePayload {
  case_id: string;
  tp: Timepoint;
  axis: Axis;
  index: number;
  window: number;
  level: number;
  width: number;
  height: number;
  png: string; // base64
  overlays: { points: OverlayPoint[]; contours: OverlayContour[] };
}

export interface Proposal {
  case_id: string;
  lesion_id: number;
  point: Voxel;
  role: string;
  status: string;
}

export interface RlePayload {
  schema: number;
  volume_shape: Voxel;
  voi_shape: Voxel;
  voi_start: Voxel;
  runs: Array<[number, number]>;
}

export interface SessionPayload {
  case_id: string;
  lesion_id: number;
  proposed: Voxel;
  verified: Voxel | null;
  status: string;
  segmentation: RlePayload | null;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    const body = await response.text();
    throw new Error(`HTTP ${response.status}: ${body}`);
  }
  return (await response.json()) as T;
}

/** All methods hit the documented endpoints; `fetchImpl` is injectable for tests. */
export class TrackingApi {
  constructor(
    private readonly base: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  listCases(): Promise<CaseSummary[]> {
    return this.fetchImpl(`${this.base}/cases`).then((r) => asJson<CaseSummary[]>(r));
  }

  caseDetail(caseId: string): Promise<CaseDetail> {
    return this.fetchImpl(`${this.base}/cases/${caseId}`).then((r) => asJson<CaseDetail>(r));
  }

  getSlice(
    caseId: string,
    tp: Timepoint,
    axis: Axis,
    index: number,
    window?: number,
    level?: number,
  ): Promise<SlicePayload> {
    const params = new URLSearchParams({ tp, axis, index: String(index) });
    if (window !== undefined) params.set('window', String(window));
    if (level !== undefined) params.set('level', String(level));
    return this.fetchImpl(`${this.base}/cases/${caseId}/slice?${params}`).then((r) =>
      asJson<SlicePayload>(r),
    );
  }

  getProposal(caseId: string, lesionId: number): Promise<Proposal> {
    return this.fetchImpl(`${this.base}/cases/${caseId}/lesions/${lesionId}/proposal`).then((r) =>
      asJson<Proposal>(r),
    );
  }

  /** Accept the proposal (no point) or submit a corrected voxel. */
  verify(caseId: string, lesionId: number, point?: Voxel): Promise<SessionPayload> {
    return this.fetchImpl(`${this.base}/cases/${caseId}/lesions/${lesionId}/verify`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(point ? { point } : {}),
    }).then((r) => asJson<SessionPayload>(r));
  }

  getSegmentation(caseId: string, lesionId: number): Promise<SessionPayload> {
    return this.fetchImpl(`${this.base}/cases/${caseId}/lesions/${lesionId}/segmentation`).then(
      (r) => asJson<SessionPayload>(r),
    );
  }
}

/** Decode an RLE payload into a flat boolean VOI mask (C order). */
export function rleDecode(payload: RlePayload): Uint8Array {
  const [z, y, x] = payload.voi_shape;
  const mask = new Uint8Array(z * y * x);
  for (const [start, length] of payload.runs) {
    mask.fill(1, start, start + length);
  }
  return mask;
}

/** True if the RLE mask covers a full-volume voxel. */
export function rleContains(payload: RlePayload, voxel: Voxel): boolean {
  const local: Voxel = [
    voxel[0] - payload.voi_start[0],
    voxel[1] - payload.voi_start[1],
    voxel[2] - payload.voi_start[2],
  ];
  const [sz, sy, sx] = payload.voi_shape;
  if (local.some((v, i) => v < 0 || v >= [sz, sy, sx][i])) return false;
  const flat = (local[0] * sy + local[1]) * sx + local[2];
  return rleDecode(payload)[flat] === 1;
}
