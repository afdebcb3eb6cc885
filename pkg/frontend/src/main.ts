/** Single-page app: case list, side-by-side panes, accept/correct controls. */

import { TrackingApi } from './api.js';
import { VerifyController } from './controller.js';
import { volumeToPane } from './coords.js';
import { drawSlice } from './render.js';
import { scrollPane, setCorrection } from './state.js';

const ZOOM = 8;

const api = new TrackingApi('');
const controller = new VerifyController(api);

const caseSelect = document.getElementById('case-select') as HTMLSelectElement;
const lesionSelect = document.getElementById('lesion-select') as HTMLSelectElement;
const baselineCanvas = document.getElementById('baseline-canvas') as HTMLCanvasElement;
const followupCanvas = document.getElementById('followup-canvas') as HTMLCanvasElement;
const acceptButton = document.getElementById('accept-button') as HTMLButtonElement;
const clearButton = document.getElementById('clear-button') as HTMLButtonElement;
const statusBadge = document.getElementById('status-badge') as HTMLSpanElement;
const banner = document.getElementById('banner') as HTMLDivElement;
const baselineLabel = document.getElementById('baseline-label') as HTMLSpanElement;
const followupLabel = document.getElementById('followup-label') as HTMLSpanElement;

function showBanner(message: string | null): void {
  banner.textContent = message ?? '';
  banner.style.display = message ? 'block' : 'none';
}

async function redraw(): Promise<void> {
  const state = controller.state;
  if (!state) return;
  statusBadge.textContent = state.inFlight ? 'submitting…' : state.status;
  statusBadge.className = `badge ${state.status}`;
  acceptButton.disabled = state.status !== 'proposed' || state.inFlight;
  acceptButton.textContent = state.correction
    ? `Submit correction [${state.correction.join(', ')}]`
    : 'Accept proposal';
  clearButton.disabled = !state.correction;
  showBanner(state.banner);

  const panes = [
    { name: 'baseline' as const, canvas: baselineCanvas, label: baselineLabel },
    { name: 'followup' as const, canvas: followupCanvas, label: followupLabel },
  ];
  for (const { name, canvas, label } of panes) {
    const pane = state.panes[name];
    label.textContent = `${pane.tp} — ${pane.axis}=${pane.index}`;
    try {
      const payload = await api.getSlice(
        state.caseId, pane.tp, pane.axis, pane.index, pane.window, pane.level);
      let crosshair = null;
      const focus = name === 'baseline' ? state.baselinePrompt
        : state.correction ?? state.proposal;
      const mapped = volumeToPane(pane.axis, focus);
      if (mapped.along === pane.index) crosshair = mapped;
      await drawSlice(canvas, payload, ZOOM, crosshair);
    } catch (err) {
      showBanner(err instanceof Error ? err.message : String(err));
    }
  }
}

async function loadSelection(): Promise<void> {
  const caseId = caseSelect.value;
  const lesionId = Number(lesionSelect.value);
  if (!caseId || !lesionId) return;
  await controller.load(caseId, lesionId);
  await redraw();
}

async function boot(): Promise<void> {
  const cases = await api.listCases();
  caseSelect.innerHTML = cases
    .map((c) => `<option value="${c.case_id}">${c.case_id} (${c.kind}, ${c.lesion_count})</option>`)
    .join('');
  caseSelect.onchange = async () => {
    const detail = await api.caseDetail(caseSelect.value);
    lesionSelect.innerHTML = detail.lesion_ids
      .map((lid) => `<option value="${lid}">lesion ${lid}</option>`)
      .join('');
    await loadSelection();
  };
  lesionSelect.onchange = loadSelection;
  if (cases.length) {
    caseSelect.value = cases[0].case_id;
    caseSelect.onchange?.(new Event('change'));
  }

  followupCanvas.onclick = async (ev) => {
    const rect = followupCanvas.getBoundingClientRect();
    controller.clickFollowup(ev.clientX - rect.left, ev.clientY - rect.top, ZOOM);
    await redraw();
  };

  acceptButton.onclick = async () => {
    await redraw();
    const session = await controller.submit();
    if (session && controller.state) {
      controller.state = { ...controller.state };
    }
    await redraw();
  };

  clearButton.onclick = async () => {
    if (controller.state) {
      controller.state = { ...controller.state, correction: null };
      await redraw();
    }
  };

  for (const [canvas, pane] of [
    [baselineCanvas, 'baseline'],
    [followupCanvas, 'followup'],
  ] as const) {
    canvas.addEventListener('wheel', async (ev) => {
      ev.preventDefault();
      if (!controller.state) return;
      controller.state = scrollPane(controller.state, pane, ev.deltaY > 0 ? 1 : -1);
      await redraw();
    });
  }

  document.addEventListener('keydown', async (ev) => {
    if (!controller.state) return;
    if (ev.key === 'ArrowUp' || ev.key === 'ArrowDown') {
      controller.state = scrollPane(controller.state, 'followup', ev.key === 'ArrowDown' ? 1 : -1);
      await redraw();
    }
  });
}

boot().catch((err) => showBanner(err instanceof Error ? err.message : String(err)));

export { controller, setCorrection };
