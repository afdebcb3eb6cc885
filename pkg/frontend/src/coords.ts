/** Pane <-> volume coordinate mapping, mirroring the server's convention:
 *  axis z renders rows=y cols=x, axis y renders rows=z cols=x,
 *  axis x renders rows=z cols=y.
 */

import type { Axis, Voxel } from './api.js';

export interface PanePoint {
  along: number; // coordinate on the slicing axis
  row: number;
  col: number;
}

export function paneToVolume(axis: Axis, sliceIndex: number, row: number, col: number): Voxel {
  switch (axis) {
    case 'z':
      return [sliceIndex, row, col];
    case 'y':
      return [row, sliceIndex, col];
    case 'x':
      return [row, col, sliceIndex];
  }
}

export function volumeToPane(axis: Axis, voxel: Voxel): PanePoint {
  const [z, y, x] = voxel;
  switch (axis) {
    case 'z':
      return { along: z, row: y, col: x };
    case 'y':
      return { along: y, row: z, col: x };
    case 'x':
      return { along: x, row: z, col: y };
  }
}

/** Extent of the slicing axis for a (z, y, x) volume shape. */
export function axisExtent(axis: Axis, shape: Voxel): number {
  return axis === 'z' ? shape[0] : axis === 'y' ? shape[1] : shape[2];
}

export function clampIndex(index: number, axis: Axis, shape: Voxel): number {
  return Math.min(Math.max(index, 0), axisExtent(axis, shape) - 1);
}

/** Canvas pixel -> pane (row, col) for an integer zoom factor. */
export function canvasToPane(px: number, py: number, zoom: number): { row: number; col: number } {
  return { row: Math.floor(py / zoom), col: Math.floor(px / zoom) };
}
