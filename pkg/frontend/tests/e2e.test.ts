/** End-to-end acceptance (S1, S2) against a live `longitrack serve`.
 *
 * Gated behind LONGITRACK_E2E=1 (npm run test:e2e): generates a small
 * dataset, trains a quick model through the CLI, launches the server, and
 * drives the real client modules against it.
 */

import { spawn, spawnSync, type ChildProcess } from 'node:child_process';
import { mkdtempSync, rmSync, writeFileSync } from 'node:fs';
import { tmpdir } from 'node:os';
import { join } from 'node:path';
import { afterAll, beforeAll, describe, expect, it } from 'vitest';

import { TrackingApi, rleContains, type Voxel } from '../src/api.js';
import { VerifyController } from '../src/controller.js';
import { volumeToPane } from '../src/coords.js';
import { scrollPane } from '../src/state.js';

const E2E = process.env.LONGITRACK_E2E === '1';
const PORT = 8911;
const BASE = `http://127.0.0.1:${PORT}`;
const ZOOM = 8;

let workdir: string;
let server: ChildProcess | null = null;

function run(cmd: string, args: string[]): void {
  const out = spawnSync(cmd, args, { encoding: 'utf8' });
  if (out.status !== 0) {
    throw new Error(`${cmd} ${args.join(' ')} failed:\n${out.stdout}\n${out.stderr}`);
  }
}

async function waitForServer(): Promise<void> {
  for (let i = 0; i < 240; i++) {
    try {
      const resp = await fetch(`${BASE}/cases`);
      if (resp.ok) return;
    } catch {
      // not up yet
    }
    await new Promise((r) => setTimeout(r, 500));
  }
  throw new Error('server did not come up');
}

describe.skipIf(!E2E)('end-to-end verified-tracking loop', () => {
  beforeAll(async () => {
    workdir = mkdtempSync(join(tmpdir(), 'longitrack-e2e-'));
    const dataDir = join(workdir, 'data');
    const ckpt = join(workdir, 'model.ckpt');
    run('longitrack', ['generate', '--n-cases', '8', '--shape', '32,32,32',
      '--seed', '11', '--ambiguity', '0', '--out', dataDir]);
    const trainConfig = join(workdir, 'train.json');
    writeFileSync(trainConfig, JSON.stringify({
      fusion_mode: 'diff_weighting', n_levels: 3, base_channels: 8,
      voi_size: 16, epochs: 15, batch_size: 4, seed: 0, val_fraction: 0.25,
    }));
    run('longitrack', ['train', '--config', trainConfig, '--data', dataDir,
      '--out', ckpt]);
    server = spawn('longitrack', ['serve', '--data', dataDir, '--model', ckpt,
      '--method', 'truth', '--error-vox', '0', '--port', String(PORT)],
      { stdio: 'ignore' });
    await waitForServer();
  }, 900_000);

  afterAll(() => {
    server?.kill();
    if (workdir) rmSync(workdir, { recursive: true, force: true });
  });

  it('S1: a scripted click posts exactly that voxel and the contour covers it', async () => {
    const recorded: Array<{ url: string; body: string }> = [];
    const recordingFetch = (input: string, init?: RequestInit) => {
      if (init?.method === 'POST') {
        recorded.push({ url: input, body: String(init.body) });
      }
      return fetch(input, init);
    };
    const api = new TrackingApi(BASE, recordingFetch);
    const cases = await api.listCases();
    const controller = new VerifyController(api);
    await controller.load(cases[0].case_id, 1);

    // click one voxel away from the proposal, in the rendered axial pane
    const proposal = controller.state!.proposal;
    const target: Voxel = [proposal[0], proposal[1] + 1, proposal[2]];
    const pane = volumeToPane('z', target);
    controller.state = scrollPane(controller.state!, 'followup',
      pane.along - controller.state!.panes.followup.index);
    const clicked = controller.clickFollowup(
      (pane.col + 0.5) * ZOOM, (pane.row + 0.5) * ZOOM, ZOOM);
    expect(clicked).toEqual(target);

    const session = await controller.submit();
    expect(session).not.toBeNull();

    // the POST body carried exactly the clicked voxel
    const posted = JSON.parse(recorded.at(-1)!.body) as { point: Voxel };
    expect(posted.point).toEqual(target);
    expect(session!.verified).toEqual(target);

    // the returned contour intersects the clicked pixel: the mask covers the
    // click and the slice overlay draws a contour around it
    expect(rleContains(session!.segmentation!, target)).toBe(true);
    const slice = await api.getSlice(cases[0].case_id, 'followup', 'z', target[0]);
    const contour = slice.overlays.contours.find((c) => c.lesion_id === 1);
    expect(contour).toBeDefined();
    const inRowSpan = contour!.points.some(([r]) => r === pane.row);
    expect(inRowSpan).toBe(true);
  }, 120_000);

  it('S2: accept -> contour render -> status segmented', async () => {
    const api = new TrackingApi(BASE);
    const cases = await api.listCases();
    const controller = new VerifyController(api);
    await controller.load(cases[1].case_id, 1);
    expect(controller.state!.status).toBe('proposed');

    const session = await controller.submit();
    expect(session).not.toBeNull();
    expect(session!.status).toBe('segmented');
    expect(controller.state!.status).toBe('segmented');
    expect(session!.verified).toEqual(session!.proposed);

    // contour renders on the verified slice
    const z = session!.verified![0];
    const slice = await api.getSlice(cases[1].case_id, 'followup', 'z', z);
    expect(slice.overlays.contours.length).toBeGreaterThan(0);

    // double submit is a no-op client-side
    const again = await controller.submit();
    expect(again).toBeNull();

    // the stored segmentation round-trips through the segmentation endpoint
    const stored = await api.getSegmentation(cases[1].case_id, 1);
    expect(stored.segmentation).toEqual(session!.segmentation);
  }, 120_000);
});
