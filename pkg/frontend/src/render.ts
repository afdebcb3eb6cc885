/** Canvas drawing for one pane: slice PNG, crosshair, points, contours. */

import type { SlicePayload } from './api.js';

const POINT_COLORS: Record<string, string> = {
  baseline: '#4fc3f7',
  proposed: '#ffb300',
  verified: '#66bb6a',
};

export async function drawSlice(
  canvas: HTMLCanvasElement,
  payload: SlicePayload,
  zoom: number,
  crosshair?: { row: number; col: number } | null,
): Promise<void> {
  const ctx = canvas.getContext('2d');
  if (!ctx) return;
  canvas.width = payload.width * zoom;
  canvas.height = payload.height * zoom;

  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error('slice image failed to decode'));
    img.src = `data:image/png;base64,${payload.png}`;
  });
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(img, 0, 0, canvas.width, canvas.height);

  for (const contour of payload.overlays.contours) {
    ctx.fillStyle = 'rgba(244, 67, 54, 0.85)';
    for (const [row, col] of contour.points) {
      ctx.fillRect(col * zoom, row * zoom, zoom, zoom);
    }
  }

  for (const point of payload.overlays.points) {
    const color = POINT_COLORS[point.kind] ?? '#ffffff';
    const cx = (point.col + 0.5) * zoom;
    const cy = (point.row + 0.5) * zoom;
    ctx.strokeStyle = color;
    ctx.lineWidth = point.slice_offset === 0 ? 2 : 1;
    ctx.beginPath();
    ctx.arc(cx, cy, 0.9 * zoom, 0, 2 * Math.PI);
    ctx.stroke();
  }

  if (crosshair) {
    const cx = (crosshair.col + 0.5) * zoom;
    const cy = (crosshair.row + 0.5) * zoom;
    ctx.strokeStyle = '#e91e63';
    ctx.lineWidth = 1.5;
    ctx.beginPath();
    ctx.moveTo(cx - zoom, cy);
    ctx.lineTo(cx + zoom, cy);
    ctx.moveTo(cx, cy - zoom);
    ctx.lineTo(cx, cy + zoom);
    ctx.stroke();
  }
}
