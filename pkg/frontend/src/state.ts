/** Client-side state machine for the verify/correct loop.
 *
 * One ViewerState per (case, lesion): two panes (baseline/follow-up), the
 * pending proposal, an optional correction point (settable only while the
 * session is still proposed), and a submission guard so a second submit
 * cannot start while one is in flight. The client never computes masks or
 * metrics; it only reflects server responses.
 */

import type { Axis, Timepoint, Voxel } from './api.js';
import { clampIndex, volumeToPane } from './coords.js';

export type SessionStatus = 'proposed' | 'segmented';

export interface PaneState {
  tp: Timepoint;
  axis: Axis;
  index: number;
  window?: number;
  level?: number;
}

export interface ViewerState {
  caseId: string;
  lesionId: number;
  shape: Voxel;
  baselinePrompt: Voxel;
  proposal: Voxel;
  correction: Voxel | null;
  status: SessionStatus;
  inFlight: boolean;
  panes: { baseline: PaneState; followup: PaneState };
  banner: string | null;
}

/** Initial focus: baseline pane on the baseline click, follow-up pane on the proposal. */
export function initViewer(
  caseId: string,
  lesionId: number,
  shape: Voxel,
  baselinePrompt: Voxel,
  proposal: Voxel,
  status: SessionStatus = 'proposed',
): ViewerState {
  return {
    caseId,
    lesionId,
    shape,
    baselinePrompt,
    proposal,
    correction: null,
    status,
    inFlight: false,
    panes: {
      baseline: { tp: 'baseline', axis: 'z', index: volumeToPane('z', baselinePrompt).along },
      followup: { tp: 'followup', axis: 'z', index: volumeToPane('z', proposal).along },
    },
    banner: null,
  };
}

export function scrollPane(state: ViewerState, pane: 'baseline' | 'followup', delta: number): ViewerState {
  const p = state.panes[pane];
  const index = clampIndex(p.index + delta, p.axis, state.shape);
  return { ...state, panes: { ...state.panes, [pane]: { ...p, index } } };
}

export function setWindowLevel(
  state: ViewerState,
  pane: 'baseline' | 'followup',
  window: number,
  level: number,
): ViewerState {
  const p = { ...state.panes[pane], window, level };
  return { ...state, panes: { ...state.panes, [pane]: p } };
}

/** Record a correction click; ignored once segmented or while submitting. */
export function setCorrection(state: ViewerState, point: Voxel): ViewerState {
  if (state.status !== 'proposed' || state.inFlight) return state;
  const inBounds = point.every((v, i) => v >= 0 && v < state.shape[i]);
  if (!inBounds) return { ...state, banner: `click outside volume: ${point.join(', ')}` };
  return { ...state, correction: point, banner: null };
}

export function clearCorrection(state: ViewerState): ViewerState {
  if (state.status !== 'proposed') return state;
  return { ...state, correction: null };
}

/** The point a submission would carry: null means accept the proposal. */
export function submissionPoint(state: ViewerState): Voxel | null {
  return state.correction;
}

export function beginSubmit(state: ViewerState): ViewerState | null {
  if (state.status !== 'proposed' || state.inFlight) return null;
  return { ...state, inFlight: true, banner: null };
}

export function completeSubmit(state: ViewerState, verified: Voxel): ViewerState {
  return {
    ...state,
    inFlight: false,
    status: 'segmented',
    correction: null,
    proposal: state.proposal,
    banner: null,
    panes: {
      ...state.panes,
      followup: { ...state.panes.followup, index: volumeToPane(state.panes.followup.axis, verified).along },
    },
  };
}

export function failSubmit(state: ViewerState, message: string): ViewerState {
  return { ...state, inFlight: false, banner: message };
}
