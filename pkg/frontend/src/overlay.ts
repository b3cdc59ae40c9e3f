/** Map overlays: top-down max-projection of a 3D grid dump to RGBA pixels.
 *
 * Image layout: one pixel per (x, y) column of the grid, width = nx,
 * height = ny, north up (row 0 shows the maximum y index).  Heat values
 * use the integer ramp in `heatColor`; semantic labels use a fixed
 * categorical palette.  Both are exact integer functions so renderers and
 * tests can agree bit for bit.
 */

import type { GridDump } from "./api.js";

export function decodeRle(rle: [number, number][], total: number): Int32Array {
  const out = new Int32Array(total);
  let at = 0;
  for (const [value, run] of rle) {
    out.fill(value, at, at + run);
    at += run;
  }
  if (at !== total) {
    throw new Error(`rle covers ${at} of ${total} cells`);
  }
  return out;
}

/** Dark blue (0) to warm yellow (1); exact integer rounding. */
export function heatColor(v: number): [number, number, number, number] {
  const clamped = Math.min(1, Math.max(0, v));
  return [
    Math.round(255 * clamped),
    Math.round(32 + 191 * clamped),
    Math.round(96 * (1 - clamped)),
    255,
  ];
}

const LABEL_PALETTE: [number, number, number][] = [
  [166, 124, 82],
  [96, 160, 96],
  [200, 80, 80],
  [228, 170, 60],
  [90, 110, 200],
  [220, 220, 90],
  [120, 86, 160],
  [80, 180, 180],
];

export function labelColor(index: number): [number, number, number, number] {
  if (index < 0) {
    return [16, 16, 20, 255];
  }
  const [r, g, b] = LABEL_PALETTE[index % LABEL_PALETTE.length];
  return [r, g, b, 255];
}

export interface OverlayImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, row-major, row 0 = max y
}

function flatIndex(i: number, j: number, k: number, dims: [number, number, number]): number {
  return (i * dims[1] + j) * dims[2] + k;
}

/** Per-(x, y) column maximum of a float grid. */
export function topDownMax(values: ArrayLike<number>, dims: [number, number, number]): Float64Array {
  const [nx, ny, nz] = dims;
  const out = new Float64Array(nx * ny);
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      let best = -Infinity;
      for (let k = 0; k < nz; k++) {
        const v = values[flatIndex(i, j, k, dims)];
        if (v > best) {
          best = v;
        }
      }
      out[i * ny + j] = best;
    }
  }
  return out;
}

/** Highest occupied label in each (x, y) column, -1 when empty. */
export function topDownLabel(labels: Int32Array, dims: [number, number, number]): Int32Array {
  const [nx, ny, nz] = dims;
  const out = new Int32Array(nx * ny).fill(-1);
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      for (let k = nz - 1; k >= 0; k--) {
        const v = labels[flatIndex(i, j, k, dims)];
        if (v >= 0) {
          out[i * ny + j] = v;
          break;
        }
      }
    }
  }
  return out;
}

export function overlayPixels(dump: GridDump): OverlayImage {
  const dims = dump.spec.dims;
  const [nx, ny] = dims;
  const data = new Uint8ClampedArray(nx * ny * 4);

  const put = (i: number, j: number, rgba: [number, number, number, number]) => {
    const row = ny - 1 - j;
    const offset = (row * nx + i) * 4;
    data.set(rgba, offset);
  };

  if (dump.kind === "semantic") {
    if (!dump.rle) {
      throw new Error("semantic dump is missing its rle payload");
    }
    const labels = decodeRle(dump.rle, dims[0] * dims[1] * dims[2]);
    const top = topDownLabel(labels, dims);
    for (let i = 0; i < nx; i++) {
      for (let j = 0; j < ny; j++) {
        put(i, j, labelColor(top[i * ny + j]));
      }
    }
  } else {
    if (!dump.values) {
      throw new Error(`${dump.kind} dump is missing its values payload`);
    }
    const top = topDownMax(dump.values, dims);
    for (let i = 0; i < nx; i++) {
      for (let j = 0; j < ny; j++) {
        put(i, j, heatColor(top[i * ny + j]));
      }
    }
  }
  return { width: nx, height: ny, data };
}
