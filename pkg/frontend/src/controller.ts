/** Wires the state machine to the API; DOM-free so tests can script it. */

import { TrackingApi, type SessionPayload, type Voxel } from './api.js';
import { canvasToPane, paneToVolume } from './coords.js';
import {
  beginSubmit,
  completeSubmit,
  failSubmit,
  initViewer,
  setCorrection,
  submissionPoint,
  type ViewerState,
} from './state.js';

export class VerifyController {
  state: ViewerState | null = null;

  constructor(private readonly api: TrackingApi) {}

  /** Load a lesion session; the follow-up pane centers on the proposal. */
  async load(caseId: string, lesionId: number): Promise<ViewerState> {
    const detail = await this.api.caseDetail(caseId);
    const proposal = await this.api.getProposal(caseId, lesionId);
    const prompt = detail.baseline_prompts[String(lesionId)];
    this.state = initViewer(
      caseId,
      lesionId,
      detail.shape,
      prompt,
      proposal.point,
      proposal.status === 'segmented' ? 'segmented' : 'proposed',
    );
    return this.state;
  }

  private require(): ViewerState {
    if (!this.state) throw new Error('no session loaded');
    return this.state;
  }

  /** A click on the follow-up canvas becomes a volume-coordinate correction. */
  clickFollowup(px: number, py: number, zoom: number): Voxel | null {
    const state = this.require();
    const pane = state.panes.followup;
    const { row, col } = canvasToPane(px, py, zoom);
    const point = paneToVolume(pane.axis, pane.index, row, col);
    this.state = setCorrection(state, point);
    return this.state.correction;
  }

  /** Accept (no correction set) or submit the correction; guards double-submit. */
  async submit(): Promise<SessionPayload | null> {
    const state = this.require();
    const started = beginSubmit(state);
    if (!started) return null;
    this.state = started;
    const point = submissionPoint(state);
    try {
      const session = await this.api.verify(state.caseId, state.lesionId, point ?? undefined);
      this.state = completeSubmit(this.state, session.verified ?? state.proposal);
      return session;
    } catch (err) {
      this.state = failSubmit(this.state, err instanceof Error ? err.message : String(err));
      return null;
    }
  }
}
